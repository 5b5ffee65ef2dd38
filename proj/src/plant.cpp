#include "pwacert/plant.hpp"

#include "internal/stiff_integrator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pwacert::plant {

void AdsorptionParams::validate() const {
  if (!(D > 0 && K_alpha > 0 && L > 0 && eps > 0 && eps < 1 && inlet > 0 && eq_coef > 0))
    throw ValidationError("adsorption parameters must be positive (void fraction in (0, 1))");
  if (n_nodes < 3) throw ValidationError("adsorption: n_nodes must be at least 3");
  if (!(u_min < u_max)) throw ValidationError("adsorption: inverted velocity bounds");
}

void TubularParams::validate() const {
  if (!(Pe1 > 0 && Pe2 > 0 && Da >= 0 && B_heat >= 0 && b_heat >= 0 && gamma1 >= 0 && L > 0))
    throw ValidationError("tubular: Peclet numbers and length must be positive, other parameters nonnegative");
  if (n_elem < 2 || n_zones < 1 || n_elem % n_zones != 0)
    throw ValidationError("tubular: n_zones must divide n_elem");
  if (!(tw_min < tw_max)) throw ValidationError("tubular: inverted cooling bounds");
  const double h = L / n_elem;
  if (Pe1 * h / 2 >= 1 || Pe2 * h / 2 >= 1) throw ValidationError("tubular: grid too coarse for the inlet condition");
}

// ---------------------------------------------------------------- adsorption

Vec adsorption_rhs(const AdsorptionParams& p, const Vec& C, double U) {
  const int n = p.n_nodes;
  const double h = p.L / n, dif = p.D / (h * h), conv = U / h;
  Vec r(n);
  for (int k = 0; k < n; ++k) {
    const double left = k == 0 ? p.inlet : C[k - 1];
    const double right = k == n - 1 ? C[n - 2] : C[k + 1];
    const double c = C[k];
    r[k] = (-conv * (c - left) + dif * (right - 2 * c + left) -
            (1 - p.eps) * p.K_alpha * (c - p.eq_coef * c * c)) /
           p.eps;
  }
  return r;
}

Mat adsorption_jacobian(const AdsorptionParams& p, const Vec& C, double U) {
  const int n = p.n_nodes;
  const double h = p.L / n, dif = p.D / (h * h), conv = U / h;
  Mat J = Mat::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    J(k, k) = -conv - 2 * dif - (1 - p.eps) * p.K_alpha * (1 - 2 * p.eq_coef * C[k]);
    if (k > 0) J(k, k - 1) += conv + dif;
    if (k < n - 1) J(k, k + 1) += dif;
    else J(k, n - 2) += dif;
  }
  return J / p.eps;
}

// ------------------------------------------------------------------ tubular

namespace {

struct Tubular1D {
  double h, inv_pe_h2, inv_h, ghost;  // ghost = c_{-1} / c_0
};

Tubular1D field_coeffs(double Pe, double L, int n) {
  const double h = L / n;
  // (c_0 − c_{−1})/h = Pe·(c_0 + c_{−1})/2 at the inlet face
  return {h, 1.0 / (Pe * h * h), 1.0 / h, (1 - Pe * h / 2) / (1 + Pe * h / 2)};
}

// Convection-diffusion part of one field, cell i.
double transport(const Tubular1D& f, const double* v, int n, int i) {
  const double left = i == 0 ? f.ghost * v[0] : v[i - 1];
  const double right = i == n - 1 ? v[n - 1] : v[i + 1];
  return f.inv_pe_h2 * (right - 2 * v[i] + left) - f.inv_h * (v[i] - left);
}

void transport_jacobian(const Tubular1D& f, int n, int offset, Mat& J) {
  for (int i = 0; i < n; ++i) {
    const int r = offset + i;
    J(r, r) += -2 * f.inv_pe_h2 - f.inv_h;
    if (i == 0) J(r, r) += f.ghost * (f.inv_pe_h2 + f.inv_h);
    else J(r, r - 1) += f.inv_pe_h2 + f.inv_h;
    if (i == n - 1) J(r, r) += f.inv_pe_h2;
    else J(r, r + 1) += f.inv_pe_h2;
  }
}

}  // namespace

Vec tubular_rhs(const TubularParams& p, const Vec& s, const Vec& Tw) {
  const int n = p.n_elem, per = n / p.n_zones;
  const auto fc = field_coeffs(p.Pe1, p.L, n), ft = field_coeffs(p.Pe2, p.L, n);
  const double* c = s.data();
  const double* T = s.data() + n;
  Vec r(2 * n);
  for (int i = 0; i < n; ++i) {
    const double rate = p.Da * c[i] * std::exp(p.gamma1 * T[i] / (1 + T[i]));
    r[i] = transport(fc, c, n, i) - rate;
    r[n + i] = transport(ft, T, n, i) + p.B_heat * rate + p.b_heat * (Tw[i / per] - T[i]);
  }
  return r;
}

Mat tubular_jacobian(const TubularParams& p, const Vec& s, const Vec& Tw) {
  (void)Tw;
  const int n = p.n_elem;
  Mat J = Mat::Zero(2 * n, 2 * n);
  transport_jacobian(field_coeffs(p.Pe1, p.L, n), n, 0, J);
  transport_jacobian(field_coeffs(p.Pe2, p.L, n), n, n, J);
  for (int i = 0; i < n; ++i) {
    const double T = s[n + i], c = s[i];
    const double e = std::exp(p.gamma1 * T / (1 + T));
    const double dc = p.Da * e;                                         // ∂rate/∂c
    const double dT = p.Da * c * e * p.gamma1 / ((1 + T) * (1 + T));  // ∂rate/∂T
    J(i, i) -= dc;
    J(i, n + i) -= dT;
    J(n + i, i) += p.B_heat * dc;
    J(n + i, n + i) += p.B_heat * dT - p.b_heat;
  }
  return J;
}

// ---------------------------------------------------------------- stepping

namespace {

template <class Rhs, class Jac>
Vec rosenbrock_advance(const Vec& state, double dt, double tol, Rhs rhs, Jac jac_fn, const char* what) {
  if (!state.allFinite()) throw NumericError(std::string(what) + ": non-finite initial state");
  if (!(dt > 0)) throw ValidationError(std::string(what) + ": dt must be positive");
  const auto n = state.size();
  std::vector<double> x(state.data(), state.data() + n);
  auto f = [&](const double* xs, double* dx) {
    Eigen::Map<Vec> out(dx, n);
    out = rhs(Vec(Eigen::Map<const Vec>(xs, n)));
    // A NaN derivative would otherwise shrink the step size forever.
    if (!out.allFinite()) throw std::runtime_error("non-finite derivative");
  };
  auto j = [&](const double* xs, double* jac) {
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(jac, n, n) =
        jac_fn(Vec(Eigen::Map<const Vec>(xs, n)));
  };
  size_t steps = 0;
  try {
    steps = detail::rosenbrock_integrate(x, dt, tol, f, j);
  } catch (const std::exception& ex) {
    throw NumericError(std::string(what) + ": integrator failed (" + ex.what() + ")");
  }
  const Vec out = Eigen::Map<const Vec>(x.data(), n);
  if (!out.allFinite()) {
    std::ostringstream os;
    os << what << ": state blew up after " << steps << " inner steps; |x0|_inf = " << state.lpNorm<Eigen::Infinity>();
    throw NumericError(os.str());
  }
  return out;
}

}  // namespace

Vec adsorption_step(const AdsorptionParams& p, const Vec& state, double U, double dt, double tol) {
  if (state.size() != p.n_nodes) throw ValidationError("adsorption_step: state length must equal n_nodes");
  return rosenbrock_advance(
      state, dt, tol, [&](const Vec& x) { return adsorption_rhs(p, x, U); },
      [&](const Vec& x) { return adsorption_jacobian(p, x, U); }, "adsorption_step");
}

Vec tubular_step(const TubularParams& p, const Vec& state, const Vec& Tw, double dt, double tol) {
  if (state.size() != 2 * p.n_elem) throw ValidationError("tubular_step: state length must be 2·n_elem");
  if (Tw.size() != p.n_zones) throw ValidationError("tubular_step: T_w length must equal n_zones");
  return rosenbrock_advance(
      state, dt, tol, [&](const Vec& x) { return tubular_rhs(p, x, Tw); },
      [&](const Vec& x) { return tubular_jacobian(p, x, Tw); }, "tubular_step");
}

// ------------------------------------------------------------- case studies

CaseStudy adsorption_case(const AdsorptionParams& p, double dt, double tol) {
  p.validate();
  const int n = p.n_nodes;
  CaseStudy cs;
  cs.name = "adsorption";
  cs.dt = dt;
  auto& sim = cs.sim;
  sim.n_x = n;
  sim.n_u = 1;
  sim.x_lower = Vec::Constant(n, -2.0);
  sim.x_upper = Vec::Constant(n, 8.0);
  sim.u_lower = Vec::Constant(1, p.u_min);
  sim.u_upper = Vec::Constant(1, p.u_max);
  sim.step = [p, dt, tol](const Vec& x, const Vec& u) { return adsorption_step(p, x, u[0], dt, tol); };
  sim.sample_initial = [p, n](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, p.inlet);
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = dist(rng);
    return x;
  };
  for (int i = 1; i < n; i += 2) cs.measured.push_back(i);

  cs.pool.n_traj = 250;
  cs.pool.horizon = 40;
  cs.pool.clusters = 14;
  cs.pool.linearize.output_indices = cs.measured;

  cs.u_nominal = Vec::Constant(1, 2.0);
  cs.x_nominal = Vec::Constant(n, p.inlet);
  for (int k = 0; k < 400; ++k) cs.x_nominal = adsorption_step(p, cs.x_nominal, 2.0, dt, tol);

  cs.mpc.n_out = 3;
  cs.mpc.n_in = 2;
  cs.mpc.r = 0.18;
  cs.mpc.u_lower = sim.u_lower;
  cs.mpc.u_upper = sim.u_upper;
  cs.mpc.ref = pool::selection_matrix(n, cs.measured) * cs.x_nominal;
  return cs;
}

CaseStudy tubular_case(const TubularParams& p, double dt, double tol) {
  p.validate();
  const int n = p.n_elem;
  CaseStudy cs;
  cs.name = "tubular";
  cs.dt = dt;
  auto& sim = cs.sim;
  sim.n_x = 2 * n;
  sim.n_u = p.n_zones;
  sim.x_lower = Vec::Constant(2 * n, -3.0);
  sim.x_upper = Vec::Constant(2 * n, 3.0);
  sim.u_lower = Vec::Constant(p.n_zones, p.tw_min);
  sim.u_upper = Vec::Constant(p.n_zones, p.tw_max);
  sim.step = [p, dt, tol](const Vec& x, const Vec& u) { return tubular_step(p, x, u, dt, tol); };
  sim.sample_initial = [n](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> conc(0.0, 1.0), temp(-0.5, 0.5);
    Vec x(2 * n);
    for (int i = 0; i < n; ++i) x[i] = conc(rng);
    for (int i = 0; i < n; ++i) x[n + i] = temp(rng);
    return x;
  };
  // 10 of 16 temperatures, evenly spread
  for (int k = 0; k < 10; ++k) cs.measured.push_back(n + static_cast<int>(std::lround(k * (n - 1) / 9.0)));

  cs.pool.n_traj = 180;
  cs.pool.horizon = 40;
  cs.pool.clusters = 18;
  cs.pool.linearize.output_indices = cs.measured;
  // Open-loop radius is about 0.9; forcing 0.5 needs |L| ~ 1e2 and leaves no
  // common storage across the 18 observers.
  cs.observer_decay = 0.8;

  cs.u_nominal = Vec::Zero(p.n_zones);
  cs.x_nominal = Vec::Zero(2 * n);

  cs.mpc.n_out = 3;
  cs.mpc.n_in = 2;
  cs.mpc.r = 0.01;
  cs.mpc.u_lower = sim.u_lower;
  cs.mpc.u_upper = sim.u_upper;
  cs.mpc.ref = Vec::Zero(static_cast<Eigen::Index>(cs.measured.size()));
  return cs;
}

// -------------------------------------------------------------- controllers

ControllerSet design_controllers(const core::ModelPool& pool, const mpc::MpcConfig& cfg, double observer_decay) {
  ControllerSet c;
  for (size_t i = 0; i < pool.size(); ++i) {
    c.qps.push_back(mpc::condense(pool[i], cfg));
    c.observers.push_back(mpc::design_observer(pool[i], observer_decay));
  }
  return c;
}

cert::CaseBuilder case_builder(const core::ModelPool& pool, const mpc::MpcConfig& cfg,
                               const std::vector<mpc::Observer>& observers, const cert::UncertaintySpec& unc) {
  return [pool, cfg, observers, unc](double r) {
    mpc::MpcConfig c = cfg;
    c.r = r;
    std::vector<mpc::MpcQp> qps;
    for (size_t i = 0; i < pool.size(); ++i) qps.push_back(mpc::condense(pool[i], c));
    return cert::build_extended(pool, qps, observers, unc);
  };
}

Mat random_contraction(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double b) {
  if (b == 0.0 || rows == 0 || cols == 0) return Mat::Zero(rows, cols);
  std::normal_distribution<double> g;
  Mat M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = g(rng);
  Eigen::JacobiSVD<Mat> svd(M);
  const double s = svd.singularValues()[0];
  return s > 0 ? Mat(M * (b / s)) : Mat::Zero(rows, cols);
}

cert::UncertaintyMap random_uncertainty(double b, std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng, b](const std::string&, size_t, const Vec& v) -> Vec {
    return random_contraction(*rng, v.size(), v.size(), b) * v;
  };
}

std::vector<Vec> reference_pulse(Eigen::Index n_y, int steps, int start, int stop, double height) {
  std::vector<Vec> d(static_cast<size_t>(std::max(steps, 0)), Vec::Zero(n_y));
  for (int k = std::max(start, 0); k < std::min(stop, steps); ++k) d[static_cast<size_t>(k)].setConstant(height);
  return d;
}

// ------------------------------------------------------------- closed loop

ClosedLoopRun run_closed_loop(const pool::BlackBoxSimulator& sim, const core::ModelPool& pool,
                              const mpc::MpcConfig& cfg, const ControllerSet& ctrl, const cert::UncertaintySpec& unc,
                              const std::vector<Vec>& d, const ClosedLoopOptions& opts) {
  if (pool.empty()) throw ValidationError("run_closed_loop: empty pool");
  if (ctrl.qps.size() != pool.size() || ctrl.observers.size() != pool.size())
    throw ValidationError("run_closed_loop: one QP and one observer per sub-model required");
  if (opts.steps < 0) throw ValidationError("run_closed_loop: negative step count");
  if (static_cast<int>(d.size()) < opts.steps) throw ValidationError("run_closed_loop: reference offset shorter than run");
  const Eigen::Index ny = pool.n_y();
  cfg.validate(ny, pool.n_u());
  Vec x = opts.x0.size() ? opts.x0 : pool[0].centroid_x;
  Vec xh = opts.xhat0.size() ? opts.xhat0 : x;
  if (x.size() != pool.n_x() || xh.size() != pool.n_x()) throw ValidationError("run_closed_loop: initial state size");

  std::mt19937_64 rng(opts.seed);
  ClosedLoopRun run;
  run.states.push_back(x);
  run.estimates.push_back(xh);
  for (int k = 0; k < opts.steps; ++k) {
    const Vec y = pool[0].C * x;
    const size_t i = pool.select_model(y);
    const auto& m = pool[i];
    Vec w = Vec::Zero(ny);
    if (opts.inject_uncertainty && unc.output) w = random_contraction(rng, ny, ny, unc.b) * (y - m.centroid_output());
    const Vec ym = y + w;
    const size_t a = pool.select_model(ym);
    const auto& ma = pool[a];
    const Vec dk = d[static_cast<size_t>(k)];
    const Vec f = ctrl.qps[a].F_x * (xh - ma.centroid_x) + ctrl.qps[a].F_d * (cfg.ref + dk - ma.centroid_output());
    Vec U, u;
    try {
      auto ph = mpc::phi(ctrl.qps, a, f);
      U = ph.U;
      u = (ma.centroid_u + ph.u).cwiseMax(cfg.u_lower).cwiseMin(cfg.u_upper);
    } catch (const std::exception& ex) {
      run.error = "step " + std::to_string(k) + ": QP failure: " + ex.what();
      break;
    }
    Vec xn;
    try {
      xn = sim.step(x, u);
    } catch (const std::exception& ex) {
      run.error = "step " + std::to_string(k) + ": " + ex.what();
      break;
    }
    xh = ma.A * xh + ma.B * u + ma.f + ctrl.observers[a].gain * (ym - ma.C * xh);
    x = xn;
    run.inputs.push_back(u);
    run.outputs.push_back(y);
    run.measured.push_back(ym);
    run.f.push_back(f);
    run.U.push_back(U);
    run.active.push_back(a);
    run.w_unc.push_back(w);
    run.d.push_back(dk);
    run.e.push_back(y - cfg.ref - dk);
    run.states.push_back(x);
    run.estimates.push_back(xh);
  }
  return run;
}

namespace {
void header(std::ostream& os, const char* name, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) os << ',' << name << '_' << i;
}
void row(std::ostream& os, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << v[i];
}
}  // namespace

std::string ClosedLoopRun::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  const Eigen::Index nx = states.empty() ? 0 : states[0].size();
  const Eigen::Index nu = inputs.empty() ? 0 : inputs[0].size();
  const Eigen::Index ny = outputs.empty() ? 0 : outputs[0].size();
  const Eigen::Index nU = U.empty() ? 0 : U[0].size();
  os << 'k';
  header(os, "x", nx);
  header(os, "xhat", nx);
  header(os, "u", nu);
  header(os, "y", ny);
  header(os, "ym", ny);
  header(os, "f", nU);
  header(os, "U", nU);
  os << ",active";
  header(os, "w", ny);
  header(os, "d", ny);
  header(os, "e", ny);
  os << '\n';
  for (size_t k = 0; k < steps(); ++k) {
    os << k;
    row(os, states[k]);
    row(os, estimates[k]);
    row(os, inputs[k]);
    row(os, outputs[k]);
    row(os, measured[k]);
    row(os, f[k]);
    row(os, U[k]);
    os << ',' << active[k];
    row(os, w_unc[k]);
    row(os, d[k]);
    row(os, e[k]);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------- error estimate

ErrorBound estimate_error_bound(const pool::BlackBoxSimulator& sim, const core::ModelPool& pool, int n_probe,
                                int horizon, std::uint64_t seed, double safety, double v_floor) {
  if (pool.empty()) throw ValidationError("estimate_error_bound: empty pool");
  if (!(safety >= 1.0)) throw ValidationError("estimate_error_bound: safety factor must be at least 1");
  const auto trajs = pool::collect_trajectories(sim, n_probe, horizon, seed);
  ErrorBound out;
  for (const auto& t : trajs) {
    for (Eigen::Index k = 0; k < t.length(); ++k) {
      const Vec x = t.states.row(k).transpose(), u = t.inputs.row(k).transpose();
      const Vec xn = t.states.row(k + 1).transpose();
      const Vec y = pool[0].C * x;
      const auto& m = pool[pool.select_model(y)];
      const Vec pred = m.A * x + m.B * u + m.f;
      const double err = (m.C * (xn - pred)).norm();
      const double v = std::max((m.C * (x - m.centroid_x)).norm(), v_floor);
      out.empirical = std::max(out.empirical, err / v);
      ++out.samples;
    }
  }
  out.b = safety * out.empirical;
  return out;
}

}  // namespace pwacert::plant
