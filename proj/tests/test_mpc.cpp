#include "oracles.hpp"
#include "pwacert/mpc.hpp"

#include <doctest.h>

#include <random>

using namespace pwacert;

namespace {

core::PwaModel scalar(double a, double b, double c) {
  core::PwaModel m;
  m.A = Mat::Constant(1, 1, a);
  m.B = Mat::Constant(1, 1, b);
  m.C = Mat::Constant(1, 1, c);
  m.f = Vec::Zero(1);
  m.centroid_x = Vec::Zero(1);
  m.centroid_u = Vec::Zero(1);
  return m;
}

mpc::MpcConfig scalar_cfg(int n_out, int n_in, double r, double lo = -1e6, double hi = 1e6) {
  mpc::MpcConfig c;
  c.n_out = n_out;
  c.n_in = n_in;
  c.r = r;
  c.ref = Vec::Zero(1);
  c.u_lower = Vec::Constant(1, lo);
  c.u_upper = Vec::Constant(1, hi);
  return c;
}

Mat random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const Mat R = oracle::random_matrix(rng, n, n);
  return R * R.transpose() + 0.1 * Mat::Identity(n, n);
}

// Box QP min ½UᵀHU − fᵀU, lo <= U <= hi by projected gradient.
Vec projected_gradient(const Mat& H, const Vec& f, const Vec& lo, const Vec& hi) {
  const double step = 1.0 / linalg::max_sym_eig(H);
  Vec U = Vec::Zero(f.size());
  for (int it = 0; it < 200000; ++it) {
    const Vec next = (U - step * (H * U - f)).cwiseMax(lo).cwiseMin(hi);
    if ((next - U).norm() < 1e-14) {
      U = next;
      break;
    }
    U = next;
  }
  return U;
}

double objective(const Mat& H, const Vec& f, const Vec& U) { return 0.5 * U.dot(H * U) - f.dot(U); }

struct BoxQp {
  Mat H, L;
  Vec b, lo, hi;
};

BoxQp random_box(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  BoxQp q;
  q.H = random_spd(rng, n);
  q.lo.resize(n);
  q.hi.resize(n);
  q.L = Mat::Zero(2 * n, n);
  q.b.resize(2 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    q.lo[j] = -u(rng);
    q.hi[j] = u(rng);
    q.L(2 * j, j) = 1;
    q.L(2 * j + 1, j) = -1;
    q.b[2 * j] = q.hi[j];
    q.b[2 * j + 1] = -q.lo[j];
  }
  return q;
}

}  // namespace

TEST_CASE("condense: one-step scalar algebra") {
  auto qp = mpc::condense(scalar(0, 1, 1), scalar_cfg(1, 1, 0.0));
  CHECK(qp.H(0, 0) == doctest::Approx(1.0));
  const double ref = 0.7;
  const Vec f = qp.F_d * Vec::Constant(1, ref);
  // H carries the ½ of the objective: f = Gᵀ ref
  CHECK(f[0] == doctest::Approx(ref));

  auto qp1 = mpc::condense(scalar(0, 1, 1), scalar_cfg(1, 1, 1.0));
  CHECK(qp1.H(0, 0) == doctest::Approx(2.0));
  const Vec U = mpc::solve_qp(qp1, qp1.F_d * Vec::Constant(1, ref)).U;
  CHECK(U[0] == doctest::Approx(ref / 2));
}

TEST_CASE("condense: horizons, structure and prediction consistency") {
  std::mt19937_64 rng(1);
  core::PwaModel m;
  m.A = oracle::random_stable(rng, 4, 0.8);
  m.B = oracle::random_matrix(rng, 4, 1);
  m.C = oracle::random_matrix(rng, 2, 4);
  m.f = Vec::Zero(4);
  m.centroid_x = Vec::Zero(4);
  m.centroid_u = Vec::Constant(1, 0.5);
  mpc::MpcConfig cfg;
  cfg.n_out = 3;
  cfg.n_in = 2;
  cfg.r = 0.3;
  cfg.ref = Vec::Zero(2);
  cfg.u_lower = Vec::Constant(1, 0.0);
  cfg.u_upper = Vec::Constant(1, 5.0);
  const auto qp = mpc::condense(m, cfg);
  CHECK(qp.n_U() == 2);
  CHECK(linalg::is_symmetric(qp.H, 0.0));
  CHECK(linalg::min_sym_eig(qp.H) > 0);
  CHECK((qp.b.array() >= 0).all());
  for (Eigen::Index j = 0; j < 2; ++j) {
    CHECK(qp.L(2 * j, j) == 1.0);
    CHECK(qp.L(2 * j + 1, j) == -1.0);
  }
  CHECK(qp.b[0] == doctest::Approx(4.5));
  CHECK(qp.b[1] == doctest::Approx(0.5));

  // Φ x + G U reproduces a rollout with input held after the control horizon
  const Vec x0 = oracle::random_matrix(rng, 4, 1), U = oracle::random_matrix(rng, 2, 1);
  Vec x = x0, pred(6);
  for (int k = 0; k < 3; ++k) {
    x = m.A * x + m.B * U.segment(std::min(k, 1), 1);
    pred.segment(2 * k, 2) = m.C * x;
  }
  CHECK((qp.Phi * x0 + qp.G * U - pred).norm() < 1e-12);

  auto bad = cfg;
  bad.r = -1;
  CHECK_THROWS_AS(mpc::condense(m, bad), ValidationError);
  bad = cfg;
  bad.u_lower[0] = 1.0;  // centroid input 0.5 below the bound
  CHECK_THROWS_AS(mpc::condense(m, bad), ValidationError);
  auto sing = scalar(0, 0, 1);
  CHECK_THROWS_AS(mpc::condense(sing, scalar_cfg(1, 1, 0.0)), NumericError);
}

TEST_CASE("solve_qp: scalar saturation and interior optimum") {
  Mat L(2, 1);
  L << 1, -1;
  Vec b = Vec::Ones(2);
  CHECK(mpc::solve_qp(Mat::Ones(1, 1), Vec::Constant(1, 4.0), L, b).U[0] == doctest::Approx(1.0));
  CHECK(mpc::solve_qp(Mat::Ones(1, 1), Vec::Constant(1, 0.5), L, b).U[0] == doctest::Approx(0.5));
  CHECK(mpc::solve_qp(Mat::Ones(1, 1), Vec::Constant(1, -3.0), L, b).U[0] == doctest::Approx(-1.0));
  CHECK_THROWS(mpc::solve_qp(Mat::Ones(1, 1), Vec::Ones(1), L, -b));
}

TEST_CASE("solve_qp matches a projected-gradient oracle on random 6-dim box QPs") {
  std::mt19937_64 rng(21);
  for (int seed = 0; seed < 100; ++seed) {
    const auto q = random_box(rng, 6);
    const Vec f = 3.0 * oracle::random_matrix(rng, 6, 1);
    const auto res = mpc::solve_qp(q.H, f, q.L, q.b);
    const Vec Upg = projected_gradient(q.H, f, q.lo, q.hi);
    CHECK(std::abs(objective(q.H, f, res.U) - objective(q.H, f, Upg)) <= 1e-7);
    CHECK(res.kkt_residual <= 1e-9);
  }
}

TEST_CASE("solve_qp honours equality constraints") {
  std::mt19937_64 rng(22);
  const auto q = random_box(rng, 4);
  Mat E = Mat::Zero(1, 4);
  E << 1, -1, 0, 0;
  const Vec f = oracle::random_matrix(rng, 4, 1);
  const auto res = mpc::solve_qp(q.H, f, q.L, q.b, E);
  CHECK(std::abs(res.U[0] - res.U[1]) < 1e-10);
  CHECK((q.L * res.U - q.b).maxCoeff() <= 1e-10);
}

TEST_CASE("sector inequality on random QPs") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int t = 0; t < 2000; ++t) {
    const auto q = random_box(rng, dim(rng));
    const Vec f = 4.0 * oracle::random_matrix(rng, q.H.rows(), 1);
    const Vec U = mpc::solve_qp(q.H, f, q.L, q.b).U;
    CHECK(U.dot(q.H * U) - U.dot(f) <= 1e-8);
  }
}

TEST_CASE("phi: zero input, Hessian scaling and piecewise-linear continuity") {
  std::mt19937_64 rng(24);
  const auto q = random_box(rng, 3);
  mpc::MpcQp a, c;
  a.H = Mat::Identity(3, 3);
  a.L = q.L;
  a.b = q.b * 100;
  a.n_u = 1;
  c = a;
  c.H = 2 * Mat::Identity(3, 3);
  std::vector<mpc::MpcQp> qps = {a, c};
  CHECK(mpc::phi(qps, 0, Vec::Zero(3)).U.isZero(0.0));
  CHECK(mpc::phi(qps, 1, Vec::Zero(3)).U.isZero(0.0));
  const Vec f = oracle::random_matrix(rng, 3, 1);
  const auto p0 = mpc::phi(qps, 0, f), p1 = mpc::phi(qps, 1, f);
  CHECK((p1.U - p0.U / 2).norm() < 1e-12);
  CHECK(p0.u.size() == 1);
  CHECK(p0.u[0] == doctest::Approx(p0.U[0]));

  // along a segment U(t) is continuous with finitely many slope changes
  const Vec f0 = 3 * oracle::random_matrix(rng, 3, 1), dir = 3 * oracle::random_matrix(rng, 3, 1);
  const Mat H = random_spd(rng, 3);
  const int N = 2000;
  std::vector<Vec> Us;
  for (int k = 0; k <= N; ++k) Us.push_back(mpc::solve_qp(H, f0 + (double(k) / N) * dir, q.L, q.b).U);
  int kinks = 0;
  double max_jump = 0;
  for (int k = 1; k < N; ++k) {
    max_jump = std::max(max_jump, (Us[k] - Us[k - 1]).norm());
    const Vec s1 = Us[k] - Us[k - 1], s2 = Us[k + 1] - Us[k];
    if ((s2 - s1).norm() > 1e-9) ++kinks;
  }
  CHECK(max_jump < 10.0 * dir.norm() / N);
  CHECK(kinks <= 2 * 6);
}

TEST_CASE("enlarging the box never increases the optimal value") {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 200; ++t) {
    const auto q = random_box(rng, 4);
    const Vec f = 3 * oracle::random_matrix(rng, 4, 1);
    const double v1 = objective(q.H, f, mpc::solve_qp(q.H, f, q.L, q.b).U);
    const double v2 = objective(q.H, f, mpc::solve_qp(q.H, f, q.L, q.b * 1.5).U);
    CHECK(v2 <= v1 + 1e-10);
  }
}

TEST_CASE("design_observer: deadbeat scalar, partially observable pair, convergence") {
  const auto obs = mpc::design_observer(scalar(0.5, 1, 1), 0.0);
  CHECK(obs.gain(0, 0) == doctest::Approx(0.5));
  CHECK(obs.radius <= 1e-12);

  core::PwaModel m;
  m.A = Mat::Zero(2, 2);
  m.A.diagonal() << 0.9, 0.2;
  m.B = Mat::Ones(2, 1);
  m.C = Mat::Zero(1, 2);
  m.C(0, 0) = 1;
  m.f = Vec::Zero(2);
  m.centroid_x = Vec::Zero(2);
  m.centroid_u = Vec::Zero(1);
  const auto o2 = mpc::design_observer(m, 0.5);
  CHECK(linalg::spectral_radius(m.A - o2.gain * m.C) <= 0.5 + 1e-9);

  m.A(1, 1) = 1.2;  // unobservable and unstable
  CHECK_THROWS_AS(mpc::design_observer(m, 0.5), ValidationError);

  std::mt19937_64 rng(26);
  core::PwaModel r;
  r.A = oracle::random_stable(rng, 5, 0.95);
  r.B = oracle::random_matrix(rng, 5, 1);
  r.C = oracle::random_matrix(rng, 2, 5);
  r.f = Vec::Zero(5);
  r.centroid_x = Vec::Zero(5);
  r.centroid_u = Vec::Zero(1);
  const auto o3 = mpc::design_observer(r, 0.5);
  const Mat Ae = r.A - o3.gain * r.C;
  CHECK(linalg::spectral_radius(Ae) <= 0.5 + 1e-9);
  Vec x = oracle::random_matrix(rng, 5, 1), xh = Vec::Zero(5);
  double e0 = (x - xh).norm();
  for (int k = 0; k < 60; ++k) {
    const Vec u = oracle::random_matrix(rng, 1, 1);
    const Vec y = r.C * x;
    xh = r.A * xh + r.B * u + o3.gain * (y - r.C * xh);
    x = r.A * x + r.B * u;
  }
  CHECK((x - xh).norm() <= 1e-8 * e0 + 1e-12);
}

TEST_CASE("solve_dare returns the stabilizing solution") {
  std::mt19937_64 rng(27);
  const Mat A = oracle::random_matrix(rng, 4, 4), B = oracle::random_matrix(rng, 4, 2);
  const Mat Q = Mat::Identity(4, 4), R = Mat::Identity(2, 2);
  const Mat X = mpc::solve_dare(A, B, Q, R);
  const Mat K = (R + B.transpose() * X * B).inverse() * B.transpose() * X * A;
  const Mat res = A.transpose() * X * A - A.transpose() * X * B * K + Q - X;
  CHECK(res.norm() <= 1e-8 * X.norm());
  CHECK(linalg::spectral_radius(A - B * K) < 1.0);
}
