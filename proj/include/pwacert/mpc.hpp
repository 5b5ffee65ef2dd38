#pragma once

#include "pwacert/linalg.hpp"
#include "pwacert/pwa_model.hpp"

#include <vector>

namespace pwacert::mpc {

/// Tracking objective ½[Σ_{k=1}^{N_out} |y(k)-ref|² + r Σ_{k=0}^{N_in-1} |u(k)-u_c|²]
/// with inputs held constant after the control horizon; u_c is the active
/// sub-model's centroid input.
struct MpcConfig {
  int n_out = 3;
  int n_in = 2;
  double r = 1.0;
  Vec ref;    // n_y
  Vec u_lower;
  Vec u_upper;

  void validate(Eigen::Index n_y, Eigen::Index n_u) const;
};

/// Condensed QP in deviation coordinates about a sub-model's centroid.
///
/// The controller output is phi(f) = argmin ½UᵀHU − fᵀU s.t. L U <= b,
/// Meq U = 0. H is the Hessian of the tracking objective itself (GᵀG + rI),
/// so the KKT conditions give the sector inequality φᵀHφ − φᵀf <= 0 exactly.
/// Writing the same problem as min UᵀH'U − Uᵀf' uses H' = H/2, f' = f.
struct MpcQp {
  Mat H;
  Mat L;    // 2·N_U x N_U, rows paired (+e_j, −e_j)
  Vec b;    // [upper_j, −lower_j] per entry, >= 0
  Mat Meq;  // optional, 0 rows in the case studies
  Mat F_x;  // estimated deviation state -> f
  Mat F_d;  // reference deviation -> f
  Mat G;    // forced response, (N_out·n_y) x N_U
  Mat Phi;  // free response, (N_out·n_y) x n_x
  Vec lower, upper;  // deviation bounds per entry of U
  Eigen::Index n_u = 0;

  Eigen::Index n_U() const { return H.rows(); }
  /// Stack of one vector repeated over the prediction horizon.
  Vec stack_outputs(const Vec& y) const;
};

/// Builds the condensed QP for one sub-model, centred at its linearization
/// point. Throws ValidationError if r < 0 or the centroid input violates the
/// bounds (b >= 0 would fail), NumericError if H is numerically singular.
MpcQp condense(const core::PwaModel& model, const MpcConfig& cfg);

struct QpResult {
  Vec U;
  Vec mu;      // inequality multipliers
  Vec nu;      // equality multipliers
  int iterations = 0;
  double kkt_residual = 0.0;
  std::vector<int> active;
};

struct QpOptions {
  int max_iter = 500;
  double tol = 1e-9;
};

/// Primal active-set solve of min ½UᵀHU − fᵀU s.t. L U <= b, Meq U = 0,
/// started at the feasible point U = 0. Throws NumericError on cycling past
/// the iteration cap.
QpResult solve_qp(const Mat& H, const Vec& f, const Mat& L, const Vec& b, const Mat& Meq = Mat(),
                  const QpOptions& opts = {});
QpResult solve_qp(const MpcQp& qp, const Vec& f, const QpOptions& opts = {});

struct PhiResult {
  Vec U;
  Vec u;  // first n_u block
};

/// The MPC static nonlinearity for sub-model `active`.
PhiResult phi(const std::vector<MpcQp>& qps, size_t active, const Vec& f);

struct Observer {
  Mat gain;  // n_x x n_y
  double radius = 0.0;  // spectral radius of A − gain·C
};

/// Luenberger gain with error spectral radius <= decay. Uses the scaled
/// filter Riccati equation and falls back to pole placement. Throws
/// ValidationError naming the sub-model if (A, C) is not detectable.
Observer design_observer(const core::PwaModel& model, double decay = 0.5);

/// Stabilizing solution of X = AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q by the
/// structured doubling iteration.
Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

}  // namespace pwacert::mpc
