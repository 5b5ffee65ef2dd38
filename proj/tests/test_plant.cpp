#include "oracles.hpp"
#include "pwacert/plant.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace pwacert;
using namespace pwacert::plant;

namespace {

Vec iterate_to_steady(const AdsorptionParams& p, double U, int max_steps = 4000) {
  Vec C = Vec::Constant(p.n_nodes, p.inlet);
  for (int k = 0; k < max_steps; ++k) {
    const Vec next = adsorption_step(p, C, U, 0.05, 1e-11);
    const double change = (next - C).norm();
    C = next;
    if (change < 1e-13) break;
  }
  return C;
}

// Steady D C'' − U C' − k(C − a C²) = 0, C(0) = c0, C'(L) = 0 on a fine
// central-difference grid, solved by Newton iteration.
double steady_outlet_bvp(const AdsorptionParams& p, double U, int N = 20000) {
  const double h = p.L / N, k = (1 - p.eps) * p.K_alpha, a = p.eq_coef;
  Vec C = Vec::Constant(N, p.inlet);  // unknowns at y = h..L
  for (int it = 0; it < 50; ++it) {
    Vec F(N), lo(N), di(N), up(N);
    for (int i = 0; i < N; ++i) {
      const double left = i == 0 ? p.inlet : C[i - 1];
      const double right = i == N - 1 ? C[N - 2] : C[i + 1];
      const double c = C[i];
      F[i] = p.D * (right - 2 * c + left) / (h * h) - U * (right - left) / (2 * h) - k * (c - a * c * c);
      di[i] = -2 * p.D / (h * h) - k * (1 - 2 * a * c);
      lo[i] = p.D / (h * h) + U / (2 * h);
      up[i] = p.D / (h * h) - U / (2 * h);
      if (i == N - 1) lo[i] += up[i];  // mirrored ghost
    }
    // Thomas algorithm for J δ = −F
    Vec cp(N), dp(N);
    cp[0] = up[0] / di[0];
    dp[0] = -F[0] / di[0];
    for (int i = 1; i < N; ++i) {
      const double m = di[i] - lo[i] * cp[i - 1];
      cp[i] = i < N - 1 ? up[i] / m : 0.0;
      dp[i] = (-F[i] - lo[i] * dp[i - 1]) / m;
    }
    Vec delta(N);
    delta[N - 1] = dp[N - 1];
    for (int i = N - 2; i >= 0; --i) delta[i] = dp[i] - cp[i] * delta[i + 1];
    C += delta;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-13) break;
  }
  return C[N - 1];
}

// Smallest root of Pe cos ω + (Pe²/(4ω) − ω) sin ω = 0, giving the dominant
// eigenvalue −Pe/4 − ω²/Pe of (1/Pe)c'' − c' with c'(0) = Pe c(0), c'(1) = 0.
double robin_dominant_eigenvalue(double Pe) {
  auto g = [Pe](double w) { return Pe * std::cos(w) + (Pe * Pe / (4 * w) - w) * std::sin(w); };
  double a = 1e-3, b = a;
  for (double w = 2e-3; w < 20; w += 1e-3)
    if (g(w) * g(w - 1e-3) < 0) {
      a = w - 1e-3;
      b = w;
      break;
    }
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (a + b);
    (g(a) * g(m) <= 0 ? b : a) = m;
  }
  return -Pe / 4 - a * a / Pe;
}

double max_real_eig(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, false);
  return es.eigenvalues().real().maxCoeff();
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

pool::BlackBoxSimulator linear_sim(const Mat& A, const Mat& B) {
  pool::BlackBoxSimulator sim;
  sim.n_x = A.rows();
  sim.n_u = B.cols();
  sim.x_lower = Vec::Constant(sim.n_x, -5);
  sim.x_upper = Vec::Constant(sim.n_x, 5);
  sim.u_lower = Vec::Constant(sim.n_u, -1);
  sim.u_upper = Vec::Constant(sim.n_u, 1);
  sim.step = [A, B](const Vec& x, const Vec& u) { return Vec(A * x + B * u); };
  return sim;
}

}  // namespace

TEST_CASE("adsorption: steady state and boundary-value oracle") {
  AdsorptionParams p;
  const Vec C = iterate_to_steady(p, 2.0);
  CHECK(adsorption_rhs(p, C, 2.0).norm() < 1e-8);
  CHECK((C.array() > 0).all());
  CHECK((C.array() < p.inlet).all());

  const double oracle = steady_outlet_bvp(p, 2.0);
  // first-order upwinding on 10 nodes against the continuous profile
  CHECK(std::abs(C[p.n_nodes - 1] - oracle) / oracle < 0.05);
  AdsorptionParams fine = p;
  fine.n_nodes = 160;
  const Vec Cf = iterate_to_steady(fine, 2.0, 20000);
  CHECK(std::abs(Cf[fine.n_nodes - 1] - oracle) / oracle < 0.005);
}

TEST_CASE("adsorption: spatial refinement changes the outlet by under 2%") {
  AdsorptionParams p10, p40;
  p40.n_nodes = 40;
  const double c10 = iterate_to_steady(p10, 2.0)[9];
  const double c40 = iterate_to_steady(p40, 2.0, 10000)[39];
  CHECK(std::abs(c10 - c40) / c40 < 0.02);
}

TEST_CASE("adsorption: pure convection carries the inlet value to the outlet") {
  AdsorptionParams p;
  p.K_alpha = 0.0;
  p.D = 1e-12;
  Vec C = Vec::Zero(p.n_nodes);
  for (int k = 0; k < 400; ++k) C = adsorption_step(p, C, 2.0, 0.05);
  CHECK(C[p.n_nodes - 1] == doctest::Approx(p.inlet).epsilon(1e-6));
}

TEST_CASE("analytic Jacobians match finite differences") {
  std::mt19937_64 rng(51);
  AdsorptionParams ap;
  const Vec C = 5.0 * (oracle::random_matrix(rng, ap.n_nodes, 1).array() + 1.0).matrix() / 2;
  const Mat Ja = adsorption_jacobian(ap, C, 1.7);
  const Mat Jfd = fd_jacobian([&](const Vec& x) { return adsorption_rhs(ap, x, 1.7); }, C);
  CHECK((Ja - Jfd).norm() <= 1e-6 * Ja.norm());

  TubularParams tp;
  std::uniform_real_distribution<double> half(-0.5, 0.5);
  const Vec s = Vec::NullaryExpr(2 * tp.n_elem, [&] { return half(rng); });
  const Vec Tw = Vec::NullaryExpr(tp.n_zones, [&] { return 2 * half(rng); });
  const Mat Jt = tubular_jacobian(tp, s, Tw);
  const Mat Jtfd = fd_jacobian([&](const Vec& x) { return tubular_rhs(tp, x, Tw); }, s);
  CHECK((Jt - Jtfd).norm() <= 1e-6 * Jt.norm());
}

TEST_CASE("tubular: dimensions, decoupling and uniform temperature") {
  TubularParams p;
  const auto cs = tubular_case(p);
  CHECK(cs.sim.n_x == 32);
  CHECK(cs.sim.n_u == 8);
  CHECK(cs.measured.size() == 10);
  CHECK(cs.measured.front() == 16);
  CHECK(cs.measured.back() == 31);
  CHECK_THROWS(tubular_step(p, Vec::Zero(32), Vec::Zero(7), 0.05));
  // below T = −1 the Arrhenius factor is singular
  Vec cold = Vec::Zero(32);
  cold.tail(16).setConstant(-1.5);
  CHECK_THROWS_AS(tubular_step(p, cold, Vec::Zero(8), 0.05), NumericError);

  TubularParams p0 = p;
  p0.Da = 0.0;
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> half(-0.5, 0.5);
  const Vec s = Vec::NullaryExpr(32, [&] { return half(rng); });
  const Mat J = tubular_jacobian(p0, s, Vec::Zero(8));
  CHECK(J.topRightCorner(16, 16).isZero(0.0));
  Vec s2 = s;
  s2.tail(16) = Vec::NullaryExpr(16, [&] { return half(rng); });
  const Vec Tw = Vec::NullaryExpr(8, [&] { return 2 * half(rng); });
  CHECK((tubular_step(p0, s, Tw, 0.05).head(16) - tubular_step(p0, s2, Tw, 0.05).head(16)).norm() < 1e-9);

  // T ≡ T_w: no reaction, no flux and no cooling away from the inlet cell
  const double tau = 0.3;
  Vec su = Vec::Zero(32);
  su.tail(16).setConstant(tau);
  const Vec r = tubular_rhs(p0, su, Vec::Constant(8, tau));
  CHECK(r.head(16).isZero(0.0));
  CHECK(r.segment(17, 15).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tubular: transport operator converges to the continuous Robin eigenvalue") {
  const double lam = robin_dominant_eigenvalue(7.0);
  double prev = 1e9;
  for (int n : {16, 64, 256, 1024}) {
    TubularParams p;
    p.Da = 0.0;
    p.n_elem = n;
    p.n_zones = n / 2;
    const Mat J = tubular_jacobian(p, Vec::Zero(2 * n), Vec::Zero(n / 2));
    const double err = std::abs(max_real_eig(J.topLeftCorner(n, n)) - lam);
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev / std::abs(lam) < 0.005);

  // the full linearization about the origin is stable
  TubularParams p;
  CHECK(max_real_eig(tubular_jacobian(p, Vec::Zero(32), Vec::Zero(8))) < 0.0);
}

TEST_CASE("error bound: exact models, safety factor and probe monotonicity") {
  std::mt19937_64 rng(53);
  const Mat A = oracle::random_stable(rng, 3, 0.8), B = oracle::random_matrix(rng, 3, 1);
  const auto sim = linear_sim(A, B);
  pool::PoolBuildOptions o;
  o.n_traj = 20;
  o.horizon = 20;
  o.clusters = 3;
  o.linearize.output_indices = {0, 2};
  const auto built = pool::build_pool(sim, o);
  const auto eb = estimate_error_bound(sim, built.pool, 10, 20, 5);
  CHECK(eb.empirical <= 1e-6);
  CHECK(eb.b == doctest::Approx(1.5 * eb.empirical));
  CHECK(eb.samples == 200);

  const auto cs = adsorption_case();
  auto po = cs.pool;
  po.n_traj = 40;
  po.clusters = 4;
  po.seed = 3;
  const auto ads = pool::build_pool(cs.sim, po);
  double last = 0.0;
  for (int n : {2, 4, 8}) {
    const auto e = estimate_error_bound(cs.sim, ads.pool, n, 20, 9);
    CHECK(e.empirical >= last);
    CHECK(std::isfinite(e.b));
    last = e.empirical;
  }
  CHECK_THROWS_AS(estimate_error_bound(sim, built.pool, 2, 5, 1, 0.5), ValidationError);
}

TEST_CASE("closed loop: equilibrium invariance") {
  std::mt19937_64 rng(54);
  core::PwaModel m;
  m.A = oracle::random_stable(rng, 3, 0.7);
  m.B = oracle::random_matrix(rng, 3, 1);
  m.C = oracle::random_matrix(rng, 2, 3);
  m.f = Vec::Zero(3);
  m.centroid_u = Vec::Constant(1, 0.4);
  m.centroid_x = (Mat::Identity(3, 3) - m.A).lu().solve(m.B * m.centroid_u);
  const core::ModelPool pool({m});
  mpc::MpcConfig cfg;
  cfg.ref = m.C * m.centroid_x;
  cfg.u_lower = Vec::Constant(1, -1);
  cfg.u_upper = Vec::Constant(1, 1);
  const auto ctrl = design_controllers(pool, cfg, 0.5);
  ClosedLoopOptions o;
  o.steps = 100;
  o.inject_uncertainty = false;
  const auto run = run_closed_loop(linear_sim(m.A, m.B), pool, cfg, ctrl, {}, reference_pulse(2, 100, 0, 0, 0.0), o);
  REQUIRE(run.error.empty());
  REQUIRE(run.steps() == 100);
  for (size_t k = 0; k < run.steps(); ++k) {
    CHECK((run.states[k + 1] - m.centroid_x).norm() < 1e-12);
    CHECK(run.U[k].norm() < 1e-12);
    CHECK(run.e[k].norm() < 1e-12);
  }
}

TEST_CASE("closed loop: adsorption run is bounded and deterministic") {
  auto cs = adsorption_case();
  cs.pool.n_traj = 60;
  cs.pool.seed = 7;
  const auto built = pool::build_pool(cs.sim, cs.pool);
  cs.mpc.r = 0.18;
  const auto ctrl = design_controllers(built.pool, cs.mpc, cs.observer_decay);
  cert::UncertaintySpec unc;
  unc.b = 0.1;
  ClosedLoopOptions o;
  o.steps = 150;
  o.seed = 11;
  o.x0 = cs.x_nominal;
  const auto d = reference_pulse(5, 150, 20, 60, 0.3);
  const auto a = run_closed_loop(cs.sim, built.pool, cs.mpc, ctrl, unc, d, o);
  const auto b = run_closed_loop(cs.sim, built.pool, cs.mpc, ctrl, unc, d, o);
  REQUIRE(a.error.empty());
  CHECK(a.to_csv() == b.to_csv());
  for (size_t k = 0; k < a.steps(); ++k) {
    CHECK(a.outputs[k].allFinite());
    CHECK(a.outputs[k].cwiseAbs().maxCoeff() < 10.0);
    CHECK((a.inputs[k].array() >= cs.mpc.u_lower.array()).all());
    CHECK((a.inputs[k].array() <= cs.mpc.u_upper.array()).all());
  }

  ClosedLoopOptions z = o;
  z.steps = 0;
  const auto empty = run_closed_loop(cs.sim, built.pool, cs.mpc, ctrl, unc, {}, z);
  CHECK(empty.steps() == 0);
  CHECK(empty.to_csv().rfind("k,x_0", 0) == 0);
}

TEST_CASE("random_contraction has the requested spectral norm") {
  std::mt19937_64 rng(55);
  for (double b : {0.0, 0.1, 2.0}) {
    const Mat D = random_contraction(rng, 4, 3, b);
    Eigen::JacobiSVD<Mat> svd(D);
    CHECK(svd.singularValues()[0] == doctest::Approx(b).epsilon(1e-12));
  }
}
