#pragma once

#include "pwacert/linalg.hpp"
#include "pwacert/parallel.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pwacert::sdp {

enum class Sign { free, nonneg, pos };

/// Symmetric matrix variable, PSD (nonneg) or PD (pos) unless free.
struct MatrixVar {
  std::string name;
  Eigen::Index n = 0;
  Sign sign = Sign::nonneg;
};

/// Scalar variable; diagonal K entries are declared as separate scalars.
struct ScalarVar {
  std::string name;
  Sign sign = Sign::nonneg;
  std::optional<double> upper;
  std::optional<double> fixed;  // folded into the constant by the solver
};

/// coef · Tᵀ P_var T, with T of size n_var x block dim.
struct CongruenceTerm {
  int var = 0;
  double coef = 1.0;
  Mat T;
};

/// s_var · F
struct ScalarTerm {
  int var = 0;
  Mat F;
};

/// constant + Σ congruence + Σ scalar, required ⪯ −margin·I.
struct LmiBlock {
  std::string name;
  Eigen::Index dim = 0;
  Mat constant;
  std::vector<CongruenceTerm> congruence;
  std::vector<ScalarTerm> scalar;
};

struct Assignment {
  std::vector<Mat> matrices;
  Vec scalars;
};

struct LmiProblem {
  std::vector<MatrixVar> matrices;
  std::vector<ScalarVar> scalars;
  std::vector<LmiBlock> blocks;
  /// Scalar to maximize in `maximize_objective`; also the γ⁻² slot used by
  /// minimize_gamma.
  std::optional<int> objective;

  int add_matrix(std::string name, Eigen::Index n, Sign sign = Sign::nonneg);
  int add_scalar(std::string name, Sign sign = Sign::nonneg, std::optional<double> upper = std::nullopt);
  LmiBlock& add_block(std::string name, Eigen::Index dim);

  /// Throws ValidationError on inconsistent dimensions, bad variable ids or
  /// asymmetric constant/scalar coefficient matrices.
  void validate() const;
  Mat evaluate(size_t block, const Assignment& a) const;
  /// Largest entry magnitude of the constant and coefficient data, at least 1.
  double scale() const;
  /// Plain-text listing of dimensions, variable layout and block terms.
  std::string dump() const;
};

enum class Status { feasible, infeasible, max_iter };
std::string to_string(Status s);

struct SdpOptions {
  /// Strictness slack relative to the problem scale; blocks must satisfy
  /// λ_max <= −margin·scale.
  double margin = 1e-7;
  int max_iter = 80;
  double tol = 1e-9;
  /// Bounds the search region: tr(P) <= bound for every matrix variable and
  /// every nonnegative scalar <= bound unless it carries its own upper bound.
  double bound = 1e6;
  double step_fraction = 0.95;
  Exec exec = Exec::parallel;
  /// Wall-clock budget per solve in seconds (0 = none); exceeding it ends
  /// the solve with status max_iter.
  double max_seconds = 0.0;
  /// Refuse problems whose Schur system (two dense m x m copies) would need
  /// more than this many bytes (0 = no limit).
  double max_schur_bytes = 3e9;
};

struct SdpSolution {
  Status status = Status::max_iter;
  Assignment assignment;
  double max_block_eig = 0.0;
  double kkt_residual = 0.0;
  double margin = 0.0;  // absolute margin used
  int iterations = 0;
  double objective = 0.0;
  /// Upper bound on the objective from the primal iterate (maximize mode).
  double objective_bound = 0.0;
  /// Stopped by the time or memory budget rather than by the iteration.
  bool budget_exceeded = false;
  std::string diagnostics;
};

struct Verification {
  bool ok = false;
  double max_block_eig = 0.0;
  double min_matrix_eig = 0.0;
  double min_scalar = 0.0;
  std::string detail;
};

/// Substitutes the assignment into every block and sign constraint and checks
/// them with a fresh eigen-solve: λ_max(block) <= −margin + 1e-9, PSD matrices
/// with λ_min >= −1e-9 (PD ones with λ_min > 0), scalars within their bounds.
Verification verify(const LmiProblem& prob, const Assignment& a, double margin);

/// Phase-I feasibility: minimizes t with blocks ⪯ (t − margin)·I. Returns
/// feasible only for an assignment that passes `verify`.
SdpSolution solve_feasibility(const LmiProblem& prob, const SdpOptions& opts = {});

/// Maximizes the objective scalar subject to all blocks ⪯ −margin·I. The
/// returned assignment is the best verified iterate; `objective_bound` is the
/// duality-based upper bound.
SdpSolution maximize_objective(const LmiProblem& prob, const SdpOptions& opts = {});

struct GammaResult {
  bool certified = false;
  double gamma = 0.0;
  double lo = 0.0;
  SdpSolution witness;
  int solves = 0;
  std::vector<std::pair<double, bool>> history;
  bool budget_exceeded = false;
  std::string message;
};

struct GammaOptions {
  double lo = 1e-4;
  double hi = 1e4;
  double tol = 1e-3;
  /// Start from a direct maximization of γ⁻² to narrow the bracket.
  bool seed_with_max = true;
  SdpOptions sdp;
};

/// Bisection on γ for a problem whose objective scalar holds h = γ⁻².
/// Feasibility must be monotone in γ. Maintains lo infeasible (or untested),
/// hi feasible, and stops once hi − lo <= tol.
GammaResult minimize_gamma(const LmiProblem& prob, const GammaOptions& opts = {});

/// Bounded-real LMI for x⁺ = Ax + Bd, e = Cx + Dd in the γ⁻²-scaled form
/// [A B]ᵀP[A B] − diag(P, I) + h·[C D]ᵀ[C D] ⪯ −margin·I, P ⪰ 0, with the
/// objective slot h = γ⁻².
LmiProblem bounded_real_lmi(const Mat& A, const Mat& B, const Mat& C, const Mat& D);

/// Fixes the objective scalar at h = γ⁻².
LmiProblem at_gamma(const LmiProblem& prob, double gamma);

namespace detail {

/// Flat dual-form data; exposed for the kernel tests and benchmark.
struct ConeBlock {
  Eigen::Index dim = 0;
  Mat C;
  std::vector<CongruenceTerm> congruence;  // var indexes matrices
  std::vector<ScalarTerm> scalar;          // var indexes flat y
};

struct LpRow {
  double c = 0.0;
  std::vector<std::pair<Eigen::Index, double>> a;  // z = c − aᵀy
};

struct DualForm {
  std::vector<Eigen::Index> offsets;  // svec offset of each matrix variable
  std::vector<Eigen::Index> sizes;
  Eigen::Index m = 0;
  std::vector<ConeBlock> blocks;
  std::vector<LpRow> lp;
  Vec b;
};

inline Eigen::Index svec_index(Eigen::Index n, Eigen::Index a, Eigen::Index b) {
  return a * n - a * (a - 1) / 2 + (b - a);
}

/// Phase-I dual-form data for a problem (y = svec(P...), scalars, t).
DualForm make_dual_form(const LmiProblem& prob, double margin, const SdpOptions& opts);

/// Lower triangle of M_ij = tr(A_i X A_j Z⁻¹) via the structured formulas.
Mat schur_structured(const DualForm& df, const std::vector<Mat>& X, const std::vector<Mat>& Zinv, const Vec& x_lp,
                     const Vec& z_lp, Exec exec);
/// Same matrix from explicitly formed A_i, O(m²·d³); small problems only.
Mat schur_dense_reference(const DualForm& df, const std::vector<Mat>& X, const std::vector<Mat>& Zinv,
                          const Vec& x_lp, const Vec& z_lp);
/// Explicit A_i restricted to one cone block.
Mat coefficient_matrix(const DualForm& df, size_t block, Eigen::Index k);

}  // namespace detail

}  // namespace pwacert::sdp
