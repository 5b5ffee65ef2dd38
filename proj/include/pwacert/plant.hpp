#pragma once

#include "pwacert/certifier.hpp"
#include "pwacert/linalg.hpp"
#include "pwacert/mpc.hpp"
#include "pwacert/pool_builder.hpp"
#include "pwacert/pwa_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pwacert::plant {

/// Packed-bed adsorption column. Nodes sit at y = k·L/n (k = 1..n); the
/// inlet value is a fixed boundary, the outlet has zero gradient.
struct AdsorptionParams {
  double D = 0.001;
  double K_alpha = 15.0;
  double L = 0.8;
  double eps = 0.5;
  double inlet = 5.0;
  double eq_coef = 0.16;  // C* = eq_coef·C²
  int n_nodes = 10;
  double u_min = 0.0;
  double u_max = 5.0;

  void validate() const;
};

/// Tubular reactor on n_elem cell-centred cells, state [c; T].
struct TubularParams {
  double Pe1 = 7.0;
  double Pe2 = 7.0;
  double Da = 0.1;
  double B_heat = 2.0;
  double b_heat = 1.0;
  double gamma1 = 10.0;
  double L = 1.0;
  int n_elem = 16;
  int n_zones = 8;
  double tw_min = -1.0;
  double tw_max = 1.0;

  void validate() const;
};

Vec adsorption_rhs(const AdsorptionParams& p, const Vec& C, double U);
Mat adsorption_jacobian(const AdsorptionParams& p, const Vec& C, double U);
Vec tubular_rhs(const TubularParams& p, const Vec& s, const Vec& Tw);
Mat tubular_jacobian(const TubularParams& p, const Vec& s, const Vec& Tw);

/// Advances dx/dt = rhs(x) by dt with an adaptive Rosenbrock stepper.
/// Throws NumericError with step diagnostics if the state stops being finite.
Vec adsorption_step(const AdsorptionParams& p, const Vec& state, double U, double dt, double tol = 1e-8);
Vec tubular_step(const TubularParams& p, const Vec& state, const Vec& Tw, double dt, double tol = 1e-8);

struct CaseStudy {
  std::string name;
  pool::BlackBoxSimulator sim;
  std::vector<int> measured;
  mpc::MpcConfig mpc;
  pool::PoolBuildOptions pool;
  double dt = 0.05;
  double observer_decay = 0.5;
  Vec x_nominal;
  Vec u_nominal;
};

/// 10-node column, U in [0, 5], measured nodes 2, 4, 6, 8, 10 (1-based),
/// 250 trajectories clustered into 14 sub-models.
CaseStudy adsorption_case(const AdsorptionParams& p = {}, double dt = 0.05, double tol = 1e-10);
/// 16-cell reactor, 8 cooling zones in [−1, 1], 10 measured temperatures,
/// 180 trajectories clustered into 18 sub-models, observer decay 0.8.
CaseStudy tubular_case(const TubularParams& p = {}, double dt = 0.05, double tol = 1e-10);

struct ControllerSet {
  std::vector<mpc::MpcQp> qps;
  std::vector<mpc::Observer> observers;
};

ControllerSet design_controllers(const core::ModelPool& pool, const mpc::MpcConfig& cfg, double observer_decay);

/// r ↦ extended system, reusing the observers and re-condensing the QPs.
cert::CaseBuilder case_builder(const core::ModelPool& pool, const mpc::MpcConfig& cfg,
                               const std::vector<mpc::Observer>& observers, const cert::UncertaintySpec& unc);

struct ClosedLoopRun {
  std::vector<Vec> states;     // true plant state x(k)
  std::vector<Vec> estimates;  // x̂(k)
  std::vector<Vec> inputs;     // applied u(k)
  std::vector<Vec> outputs;    // true measured outputs y(k)
  std::vector<Vec> measured;   // y(k) + injected uncertainty
  std::vector<Vec> f;          // QP linear terms
  std::vector<Vec> U;          // QP solutions
  std::vector<size_t> active;
  std::vector<Vec> w_unc;      // injected output uncertainty
  std::vector<Vec> d;          // reference offset
  std::vector<Vec> e;          // y − (ref + d)
  std::string error;           // set when the run halted early

  size_t steps() const { return inputs.size(); }
  std::string to_csv() const;
};

struct ClosedLoopOptions {
  int steps = 500;
  std::uint64_t seed = 0;
  /// Inject w = b·Δ(y − ȳ) with a random contraction Δ on the measurement.
  bool inject_uncertainty = true;
  Vec x0;     // defaults to the case nominal state
  Vec xhat0;  // defaults to x0
};

/// Plant + observer + switching MPC on the black-box simulator.
ClosedLoopRun run_closed_loop(const pool::BlackBoxSimulator& sim, const core::ModelPool& pool,
                              const mpc::MpcConfig& cfg, const ControllerSet& ctrl, const cert::UncertaintySpec& unc,
                              const std::vector<Vec>& d, const ClosedLoopOptions& opts);

/// Random matrix with spectral norm exactly `b` (b = 0 gives zero).
Mat random_contraction(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double b);

/// Uncertainty map injecting b·Δ_k v with fresh random contractions per step.
cert::UncertaintyMap random_uncertainty(double b, std::uint64_t seed);

/// Square pulse of the given height on every output for steps [start, stop).
std::vector<Vec> reference_pulse(Eigen::Index n_y, int steps, int start, int stop, double height);

struct ErrorBound {
  double b = 0.0;          // with safety factor
  double empirical = 0.0;  // raw supremum
  Eigen::Index samples = 0;
};

/// sup over probe steps of |C(x⁺ − x̂⁺)| / max(|C(x − x_c)|, v_floor) for the
/// active sub-model's one-step prediction x̂⁺, times the safety factor.
ErrorBound estimate_error_bound(const pool::BlackBoxSimulator& sim, const core::ModelPool& pool, int n_probe,
                                int horizon, std::uint64_t seed, double safety = 1.5, double v_floor = 1e-3);

}  // namespace pwacert::plant
