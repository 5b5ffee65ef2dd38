#pragma once

#include "pwacert/linalg.hpp"
#include "pwacert/mpc.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pwacert::iqc {

enum class MultiplierKind { mpc_single, mpc_conic, mpc_box, norm_bounded };

std::string to_string(MultiplierKind kind);
MultiplierKind kind_from_string(const std::string& name);

/// How the certifier may scale a multiplier.
enum class ParamLayout {
  shared_scalar,       // one λ >= 0 for every sub-model
  per_model_scalar,    // λ_i >= 0 per sub-model
  per_model_diagonal,  // K_i = diag(κ_i0, ..., κ_i(N_U-1)) >= 0 per sub-model
};

/// Orthogonal decomposition of a box-constrained QP with H_ψ = I.
/// Rows of `basis` are L⁰_0..L⁰_{p-1} followed by the complement L^c; each
/// constrained direction j saturates to [lower_j, upper_j].
struct BoxDecomposition {
  Mat H_psi;
  Mat basis;             // N_U x N_U orthonormal
  Eigen::Index n_constrained = 0;
  std::vector<Mat> gamma;  // Γ_j (1x1 for paired rows)
  Vec lower, upper;        // per constrained direction, lower <= 0 <= upper
  std::vector<std::pair<Eigen::Index, Eigen::Index>> row_pairs;

  Eigen::Index n_U() const { return basis.cols(); }
  /// K = basisᵀ diag(κ) basis.
  Mat k_matrix(const Vec& kappa) const;
};

/// Checks the paired-row structure L_j = [ℓ; −ℓ] with L_i L_jᵀ = 0 and builds
/// the decomposition. Throws ValidationError naming the violating rows.
BoxDecomposition decompose_box(const Mat& L, const Vec& b);

/// ψ_c(x') = argmin ½UᵀU − Uᵀx' s.t. L U <= b, evaluated as a sum of
/// independent per-direction saturations θ_j.
Vec psi_c(const BoxDecomposition& box, const Vec& x_prime);

/// The auxiliary input x' = f + (H_ψ − H) U for the H_ψ = I loop.
Vec psi_input(const Mat& H, const Vec& f, const Vec& U);

struct IqcMultiplier {
  MultiplierKind kind = MultiplierKind::norm_bounded;
  Eigen::Index n_v = 0;
  Eigen::Index n_w = 0;
  /// Unit-scaled matrix for kinds without per-model dependence.
  Mat M;
  /// Unit-scaled M_i (λ = 1, or K_i = I for box multipliers).
  std::vector<Mat> per_model;
  ParamLayout layout = ParamLayout::shared_scalar;
  /// Box multipliers: ∂M_i/∂κ_ij, linear in the diagonal entries.
  std::vector<std::vector<Mat>> coefficients;
  std::vector<BoxDecomposition> boxes;
  /// Norm-bounded gain bound b.
  double bound = 0.0;

  Eigen::Index dim() const { return n_v + n_w; }
  size_t n_models() const { return per_model.size(); }
  /// Number of free scalars the certifier tunes.
  Eigen::Index n_params() const;
  /// Parameters of model i within the flat parameter vector.
  std::vector<Eigen::Index> param_indices(size_t model) const;
  /// Scaled M for model i given the flat parameter vector.
  Mat evaluate(size_t model, const Vec& params) const;
  std::string free_params_description() const;
};

/// Lemma-1 style sector multiplier [0 I; I −2H_i] with one shared λ.
IqcMultiplier mpc_single_multiplier(const std::vector<Mat>& H);
/// Same matrices with an independent λ_i >= 0 per sub-model.
IqcMultiplier mpc_conic_multiplier(const std::vector<Mat>& H);
/// [0 K_i; K_i −K_iH_i − H_iK_i] with K_i diagonal >= 0 (H_ψ = I).
IqcMultiplier mpc_box_multiplier(const std::vector<Mat>& H, const std::vector<mpc::MpcQp>& qps);
/// diag(b²·I, −I) for a gain-bounded operator w = Δ v, ‖Δ‖ <= b.
IqcMultiplier norm_bounded_multiplier(double b, Eigen::Index n_v, Eigen::Index n_w);

/// The box multiplier matrix for explicit K and H.
Mat box_multiplier_matrix(const Mat& K, const Mat& H);

struct IqcTraceCheck {
  double min_prefix = 0.0;
  double final_sum = 0.0;
  double energy = 0.0;  // Σ |v|² + |w|²
};

/// Accumulates Σ_k [v;w]ᵀ M_{i(k)} [v;w] and reports the minimum over all
/// prefixes (0 for the empty prefix).
IqcTraceCheck validate_iqc(const IqcMultiplier& mult, const Vec& params, const std::vector<Vec>& v,
                           const std::vector<Vec>& w, const std::vector<size_t>& active);

std::string multiplier_to_json(const IqcMultiplier& mult);

}  // namespace pwacert::iqc
