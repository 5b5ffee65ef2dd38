#pragma once

#include "pwacert/iqc.hpp"
#include "pwacert/linalg.hpp"
#include "pwacert/mpc.hpp"
#include "pwacert/pwa_model.hpp"
#include "pwacert/sdp.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pwacert::cert {

/// Where norm-bounded uncertainty enters the loop. Both blocks see the plant
/// output; `input` adds its output to the plant input, `output` to the
/// measurement.
struct UncertaintySpec {
  bool input = false;
  bool output = true;
  double b = 0.1;
};

struct Channel {
  std::string name;  // "unc1", "unc2" or "mpc"
  iqc::MultiplierKind kind = iqc::MultiplierKind::norm_bounded;
  Eigen::Index n_v = 0;
  Eigen::Index n_w = 0;
  Eigen::Index z_offset = 0;
  Eigen::Index w_offset = 0;
};

/// One sub-model's closed loop, x^s = [x; x̂]:
///   x^s⁺ = A x^s + B1 w + B2 d,  z = C1 x^s + D11 w + D12 d,  e = C2 x^s + D21 w + D22 d.
struct SubSystem {
  Mat A, B1, B2, C1, D11, D12, C2, D21, D22;
  Mat H;     // QP Hessian of this sub-model
  Mat L_qp;  // box rows
  Vec b_qp;
  Vec centroid_y;
  Mat C_plant;  // output map of the plant part, for switching
};

struct ExtendedSystem {
  std::vector<SubSystem> models;
  std::vector<Channel> layout;
  Eigen::Index n_s = 0, n_w = 0, n_d = 0, n_e = 0, n_z = 0;
  UncertaintySpec unc;

  void validate() const;
  const Channel& channel(const std::string& name) const;
};

/// Stacks plant, observer and MPC channel for every sub-model in deviation
/// coordinates.
ExtendedSystem build_extended(const core::ModelPool& pool, const std::vector<mpc::MpcQp>& qps,
                              const std::vector<mpc::Observer>& observers, const UncertaintySpec& unc);

/// Multipliers matching a theorem: mpc_single (1), mpc_conic (2), mpc_box (3, 4),
/// plus one norm-bounded multiplier per active uncertainty channel.
std::vector<iqc::IqcMultiplier> multipliers_for(const ExtendedSystem& ext, int theorem);

struct TheoremProblem {
  sdp::LmiProblem lmi;
  int theorem = 0;
  std::vector<int> P_vars;  // one (Theorems 1–3) or one per sub-model
  /// Scalar variable ids of every multiplier parameter, per channel.
  std::vector<std::vector<int>> channel_params;
  int h = -1;  // γ⁻² slot
};

/// Builds the LMIs of a theorem with the γ⁻² scaling applied; fixes γ when given.
TheoremProblem assemble_theorem(const ExtendedSystem& ext, const std::vector<iqc::IqcMultiplier>& mults,
                                int theorem, std::optional<double> gamma = std::nullopt, Exec exec = Exec::parallel);

struct CertifyOptions {
  double gamma_lo = 1e-4;
  double gamma_hi = 1e4;
  double tol = 1e-3;
  bool seed_with_max = true;
  sdp::SdpOptions sdp;
};

struct Certificate {
  int theorem = 0;
  bool certified = false;
  double gamma = 0.0;
  double gamma_lo = 0.0;
  std::vector<Mat> P;  // storage V = xᵀPx (per model for Theorem 4)
  /// Multiplier parameters per channel, in the unscaled LMI.
  std::vector<Vec> params;
  double margin = 0.0;
  double max_block_eig = 0.0;
  double kkt_residual = 0.0;
  double solve_seconds = 0.0;
  int solves = 0;
  bool budget_exceeded = false;  // a solve hit its time or memory budget
  std::string message;
  ExtendedSystem system;
  double r = 0.0;  // metadata only

  double storage(size_t model, const Vec& xs) const;
};

/// Minimizes γ, then re-verifies the witness independently.
Certificate certify(const ExtendedSystem& ext, int theorem, const CertifyOptions& opts = {});
/// Single feasibility solve at a fixed γ.
Certificate certify_at(const ExtendedSystem& ext, int theorem, double gamma, const sdp::SdpOptions& opts = {});

/// Rebuilds the theorem's LMIs from the certificate and substitutes it back.
sdp::Verification recheck(const Certificate& cert);

std::string certificate_to_json(const Certificate& cert);
Certificate certificate_from_json(const std::string& text);

struct RSweepPoint {
  double r = 0.0;
  bool feasible = false;
  double gamma = 0.0;
  double seconds = 0.0;
};

struct RSweepOptions {
  double r_lo = 0.01;
  double r_hi = 2.0;
  double resolution = 0.01;
  double gamma_cap = 1e4;
  /// Evaluate exactly these r values instead of bisecting.
  std::vector<double> grid;
  /// A point known (e.g. by nesting) to be feasible, tested first.
  std::optional<double> hint_hi;
  sdp::SdpOptions sdp;
  /// Budget for a single feasibility solve; exceeded solves end the sweep
  /// as "not evaluated".
  double max_solve_seconds = 0.0;
};

struct RLimitResult {
  int theorem = 0;
  bool found = false;
  bool monotone = true;
  bool budget_exceeded = false;
  double r_limit = 0.0;
  std::vector<RSweepPoint> profile;
  std::optional<Certificate> certificate;  // at r_limit
  std::string message;
};

/// Builds the extended system for a given r.
using CaseBuilder = std::function<ExtendedSystem(double r)>;

RLimitResult r_limit_sweep(const CaseBuilder& build, int theorem, const RSweepOptions& opts = {});

/// CSV `r,theorem,feasible,gamma_star,solve_seconds`.
std::string sweep_csv(const std::vector<RLimitResult>& results);

/// Logged signals of the analyzed interconnection.
struct InterconnectionTrace {
  std::vector<Vec> xs;  // T+1 states
  std::vector<Vec> w, d, z, e;
  std::vector<size_t> active;  // T+1 entries, active model per state
};

/// Picks the active model for x^s(k) given the previous choice.
using SwitchRule = std::function<size_t(size_t k, const Vec& xs, size_t previous)>;
/// Produces the uncertainty output for channel `name` from its input.
using UncertaintyMap = std::function<Vec(const std::string& name, size_t k, const Vec& v)>;

/// Nearest-centroid rule on C x + ȳ of the previous model.
SwitchRule centroid_switching(const ExtendedSystem& ext);

/// Simulates x^s⁺ = A x^s + B1 w + B2 d with w = [Δ(v); φ_i(f)].
InterconnectionTrace simulate_interconnection(const ExtendedSystem& ext, const Vec& xs0,
                                              const std::vector<Vec>& d, const SwitchRule& rule,
                                              const UncertaintyMap& delta, size_t initial_model = 0);

struct DissipationReport {
  bool pass = false;
  double worst_slack = 0.0;  // min over prefixes of γ²Σ|d|² + V(0) − Σ|e|²
  size_t worst_step = 0;
  double tolerance = 0.0;
  double energy_e = 0.0, energy_d = 0.0, v0 = 0.0;
};

/// Σ|e|² <= γ²Σ|d|² + V(x^s(0)) at every prefix, with tolerance rel_tol times
/// the trace energy.
DissipationReport check_dissipation(const Certificate& cert, const InterconnectionTrace& trace,
                                    double rel_tol = 1e-6);

/// Σ_k (V^{i(k+1)}(k+1) − V^{i(k)}(k)) and V^{i(T)}(T) − V^{i(0)}(0).
std::pair<double, double> storage_telescoping(const Certificate& cert, const InterconnectionTrace& trace);

/// Per-channel IQC traces (v, w) for validate_iqc.
std::pair<std::vector<Vec>, std::vector<Vec>> channel_signals(const ExtendedSystem& ext,
                                                              const InterconnectionTrace& trace,
                                                              const std::string& channel);

}  // namespace pwacert::cert
