#include "pwacert/iqc.hpp"

#include <json.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pwacert::iqc {

std::string to_string(MultiplierKind kind) {
  switch (kind) {
    case MultiplierKind::mpc_single: return "mpc_single";
    case MultiplierKind::mpc_conic: return "mpc_conic";
    case MultiplierKind::mpc_box: return "mpc_box";
    case MultiplierKind::norm_bounded: return "norm_bounded";
  }
  return "unknown";
}

MultiplierKind kind_from_string(const std::string& name) {
  if (name == "mpc_single") return MultiplierKind::mpc_single;
  if (name == "mpc_conic") return MultiplierKind::mpc_conic;
  if (name == "mpc_box") return MultiplierKind::mpc_box;
  if (name == "norm_bounded") return MultiplierKind::norm_bounded;
  throw ValidationError("unknown multiplier kind '" + name + "'");
}

Mat BoxDecomposition::k_matrix(const Vec& kappa) const {
  if (kappa.size() != basis.rows()) throw ValidationError("k_matrix: wrong number of diagonal entries");
  Mat K = basis.transpose() * kappa.asDiagonal() * basis;
  return 0.5 * (K + K.transpose());
}

BoxDecomposition decompose_box(const Mat& L, const Vec& b) {
  const Eigen::Index rows = L.rows(), n = L.cols();
  if (rows != b.size()) throw ValidationError("decompose_box: L/b dimension mismatch");
  if (rows % 2 != 0) throw ValidationError("decompose_box: L must have paired rows, got an odd count");
  BoxDecomposition box;
  box.H_psi = Mat::Identity(n, n);
  const Eigen::Index p = rows / 2;
  if (p > n) throw ValidationError("decompose_box: more constrained directions than decision variables");
  Mat L0(p, n);
  box.lower.resize(p);
  box.upper.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Vec up = L.row(2 * j).transpose();
    const Vec dn = L.row(2 * j + 1).transpose();
    const double nrm = up.norm();
    if (nrm == 0.0 || (up + dn).cwiseAbs().maxCoeff() > 1e-12 * nrm)
      throw ValidationError("decompose_box: rows " + std::to_string(2 * j) + " and " + std::to_string(2 * j + 1) +
                            " are not a [l; -l] pair");
    L0.row(j) = up.transpose() / nrm;
    box.upper[j] = b[2 * j] / nrm;
    box.lower[j] = -b[2 * j + 1] / nrm;
    if (box.lower[j] > 0.0 || box.upper[j] < 0.0)
      throw ValidationError("decompose_box: bounds of rows " + std::to_string(2 * j) + "/" +
                            std::to_string(2 * j + 1) + " exclude zero");
    box.row_pairs.emplace_back(2 * j, 2 * j + 1);
  }
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j)
      if (std::abs(L0.row(i).dot(L0.row(j))) > 1e-12)
        throw ValidationError("decompose_box: row pairs " + std::to_string(2 * i) + " and " + std::to_string(2 * j) +
                              " are not orthogonal");
  box.n_constrained = p;
  box.basis.resize(n, n);
  box.basis.topRows(p) = L0;
  if (p < n) {
    // Orthonormal complement of the constrained directions.
    Eigen::HouseholderQR<Mat> qr(L0.transpose());
    const Mat Q = qr.householderQ() * Mat::Identity(n, n);
    box.basis.bottomRows(n - p) = Q.rightCols(n - p).transpose();
  }
  box.gamma.assign(static_cast<size_t>(p), Mat::Identity(1, 1));
  return box;
}

Vec psi_c(const BoxDecomposition& box, const Vec& x_prime) {
  const Eigen::Index n = box.n_U();
  if (x_prime.size() != n) throw ValidationError("psi_c: dimension mismatch");
  Vec U = Vec::Zero(n);
  for (Eigen::Index j = 0; j < box.n_constrained; ++j) {
    // θ_j(p) = argmin ½Γ q² − q p on [lower, upper]
    const double g = box.gamma[static_cast<size_t>(j)](0, 0);
    const double p = box.basis.row(j).dot(x_prime);
    const double q = std::clamp(p / g, box.lower[j], box.upper[j]);
    U += q * box.basis.row(j).transpose();
  }
  for (Eigen::Index j = box.n_constrained; j < n; ++j)
    U += box.basis.row(j).dot(x_prime) * box.basis.row(j).transpose();
  return U;
}

Vec psi_input(const Mat& H, const Vec& f, const Vec& U) {
  return f + (Mat::Identity(H.rows(), H.cols()) - H) * U;
}

Eigen::Index IqcMultiplier::n_params() const {
  switch (layout) {
    case ParamLayout::shared_scalar: return 1;
    case ParamLayout::per_model_scalar: return static_cast<Eigen::Index>(per_model.size());
    case ParamLayout::per_model_diagonal: {
      Eigen::Index n = 0;
      for (const auto& c : coefficients) n += static_cast<Eigen::Index>(c.size());
      return n;
    }
  }
  return 0;
}

std::vector<Eigen::Index> IqcMultiplier::param_indices(size_t model) const {
  switch (layout) {
    case ParamLayout::shared_scalar: return {0};
    case ParamLayout::per_model_scalar: return {static_cast<Eigen::Index>(model)};
    case ParamLayout::per_model_diagonal: {
      Eigen::Index off = 0;
      for (size_t i = 0; i < model; ++i) off += static_cast<Eigen::Index>(coefficients[i].size());
      std::vector<Eigen::Index> idx;
      for (size_t j = 0; j < coefficients[model].size(); ++j) idx.push_back(off + static_cast<Eigen::Index>(j));
      return idx;
    }
  }
  return {};
}

Mat IqcMultiplier::evaluate(size_t model, const Vec& params) const {
  if (params.size() != n_params()) throw ValidationError("multiplier: wrong parameter count");
  const auto idx = param_indices(model);
  if (layout == ParamLayout::per_model_diagonal) {
    Mat out = Mat::Zero(dim(), dim());
    for (size_t j = 0; j < idx.size(); ++j) out += params[idx[j]] * coefficients[model][j];
    return out;
  }
  const Mat& base = per_model.empty() ? M : per_model.at(model);
  return params[idx.front()] * base;
}

std::string IqcMultiplier::free_params_description() const {
  switch (layout) {
    case ParamLayout::shared_scalar: return "one shared scalar lambda >= 0";
    case ParamLayout::per_model_scalar: return "one scalar lambda_i >= 0 per sub-model";
    case ParamLayout::per_model_diagonal: return "diagonal K_i >= 0 per sub-model";
  }
  return "";
}

namespace {

Mat sector_matrix(const Mat& H) {
  if (H.rows() != H.cols()) throw ValidationError("multiplier: H must be square");
  if (!linalg::is_symmetric(H, 0.0)) throw ValidationError("multiplier: H must be exactly symmetric");
  const Eigen::Index n = H.rows();
  Mat M = Mat::Zero(2 * n, 2 * n);
  M.topRightCorner(n, n).setIdentity();
  M.bottomLeftCorner(n, n).setIdentity();
  M.bottomRightCorner(n, n) = -2.0 * H;
  return M;
}

void require_spd(const Mat& H) {
  Eigen::LLT<Mat> llt(H);
  if (llt.info() != Eigen::Success) throw ValidationError("multiplier: H must be positive definite");
}

IqcMultiplier sector_family(const std::vector<Mat>& H, MultiplierKind kind, ParamLayout layout) {
  if (H.empty()) throw ValidationError("multiplier: no sub-model Hessians given");
  IqcMultiplier m;
  m.kind = kind;
  m.layout = layout;
  m.n_v = m.n_w = H.front().rows();
  for (const auto& h : H) {
    if (h.rows() != m.n_v) throw ValidationError("multiplier: Hessians differ in size");
    require_spd(h);
    m.per_model.push_back(sector_matrix(h));
  }
  return m;
}

}  // namespace

IqcMultiplier mpc_single_multiplier(const std::vector<Mat>& H) {
  return sector_family(H, MultiplierKind::mpc_single, ParamLayout::shared_scalar);
}

IqcMultiplier mpc_conic_multiplier(const std::vector<Mat>& H) {
  return sector_family(H, MultiplierKind::mpc_conic, ParamLayout::per_model_scalar);
}

Mat box_multiplier_matrix(const Mat& K, const Mat& H) {
  const Eigen::Index n = H.rows();
  Mat M = Mat::Zero(2 * n, 2 * n);
  M.topRightCorner(n, n) = K;
  M.bottomLeftCorner(n, n) = K;
  // Both products are formed explicitly so the result is exactly symmetric.
  const Mat KH = K * H;
  M.bottomRightCorner(n, n) = -(KH + KH.transpose());
  return M;
}

IqcMultiplier mpc_box_multiplier(const std::vector<Mat>& H, const std::vector<mpc::MpcQp>& qps) {
  if (H.size() != qps.size()) throw ValidationError("mpc_box_multiplier: one QP per Hessian required");
  IqcMultiplier m = sector_family(H, MultiplierKind::mpc_box, ParamLayout::per_model_diagonal);
  for (size_t i = 0; i < qps.size(); ++i) {
    if (qps[i].Meq.rows() > 0)
      throw ValidationError("mpc_box_multiplier: equality constraints are not box constraints (model " +
                            std::to_string(i) + ")");
    BoxDecomposition box;
    try {
      box = decompose_box(qps[i].L, qps[i].b);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " (model " + std::to_string(i) + ")");
    }
    std::vector<Mat> coeffs;
    for (Eigen::Index j = 0; j < box.n_U(); ++j) {
      const Mat E = box.basis.row(j).transpose() * box.basis.row(j);
      coeffs.push_back(box_multiplier_matrix(0.5 * (E + E.transpose()), H[i]));
    }
    m.coefficients.push_back(std::move(coeffs));
    m.boxes.push_back(std::move(box));
  }
  return m;
}

IqcMultiplier norm_bounded_multiplier(double b, Eigen::Index n_v, Eigen::Index n_w) {
  if (!(b >= 0.0)) throw ValidationError("norm_bounded_multiplier: b must be >= 0");
  if (n_v < 0 || n_w < 0) throw ValidationError("norm_bounded_multiplier: negative dimension");
  IqcMultiplier m;
  m.kind = MultiplierKind::norm_bounded;
  m.layout = ParamLayout::shared_scalar;
  m.n_v = n_v;
  m.n_w = n_w;
  m.bound = b;
  m.M = Mat::Zero(n_v + n_w, n_v + n_w);
  m.M.topLeftCorner(n_v, n_v) = b * b * Mat::Identity(n_v, n_v);
  m.M.bottomRightCorner(n_w, n_w) = -Mat::Identity(n_w, n_w);
  return m;
}

IqcTraceCheck validate_iqc(const IqcMultiplier& mult, const Vec& params, const std::vector<Vec>& v,
                           const std::vector<Vec>& w, const std::vector<size_t>& active) {
  if (v.size() != w.size() || v.size() != active.size())
    throw ValidationError("validate_iqc: trace lengths differ");
  IqcTraceCheck out;
  double acc = 0.0;
  Vec r(mult.dim());
  for (size_t k = 0; k < v.size(); ++k) {
    if (v[k].size() != mult.n_v || w[k].size() != mult.n_w)
      throw ValidationError("validate_iqc: dimension mismatch at step " + std::to_string(k));
    r << v[k], w[k];
    const size_t model = mult.per_model.empty() ? 0 : active[k];
    acc += r.dot(mult.evaluate(model, params) * r);
    out.energy += r.squaredNorm();
    out.min_prefix = std::min(out.min_prefix, acc);
  }
  out.final_sum = acc;
  return out;
}

std::string multiplier_to_json(const IqcMultiplier& mult) {
  nlohmann::json doc;
  doc["kind"] = to_string(mult.kind);
  doc["n_v"] = mult.n_v;
  doc["n_w"] = mult.n_w;
  doc["free_params"] = {{"description", mult.free_params_description()}, {"count", mult.n_params()}};
  if (mult.M.size() > 0) doc["M"] = linalg::to_row_major(mult.M);
  nlohmann::json models = nlohmann::json::array();
  for (size_t i = 0; i < mult.per_model.size(); ++i) {
    nlohmann::json jm = {{"model", i}, {"M", linalg::to_row_major(mult.per_model[i])}};
    if (!mult.boxes.empty()) {
      const auto& bx = mult.boxes[i];
      jm["box"] = {{"lower", std::vector<double>(bx.lower.data(), bx.lower.data() + bx.lower.size())},
                   {"upper", std::vector<double>(bx.upper.data(), bx.upper.data() + bx.upper.size())},
                   {"basis", linalg::to_row_major(bx.basis)}};
    }
    models.push_back(std::move(jm));
  }
  doc["per_model"] = std::move(models);
  if (mult.kind == MultiplierKind::norm_bounded) doc["bound"] = mult.bound;
  return doc.dump(1);
}

}  // namespace pwacert::iqc
