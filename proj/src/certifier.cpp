#include "pwacert/certifier.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace pwacert::cert {

using nlohmann::json;

void ExtendedSystem::validate() const {
  if (models.empty()) throw ValidationError("extended system has no sub-models");
  Eigen::Index zo = 0, wo = 0;
  for (const auto& ch : layout) {
    if (ch.z_offset != zo || ch.w_offset != wo) throw ValidationError("extended system: channel offsets inconsistent");
    zo += ch.n_v + ch.n_w;
    wo += ch.n_w;
  }
  if (zo != n_z || wo != n_w) throw ValidationError("extended system: channel layout does not cover z/w");
  for (size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    const std::string where = "extended system model " + std::to_string(i) + ": ";
    auto need = [&](const Mat& M, Eigen::Index r, Eigen::Index c, const char* name) {
      if (M.rows() != r || M.cols() != c) throw ValidationError(where + name + " has wrong size");
    };
    need(m.A, n_s, n_s, "A");
    need(m.B1, n_s, n_w, "B1");
    need(m.B2, n_s, n_d, "B2");
    need(m.C1, n_z, n_s, "C1");
    need(m.D11, n_z, n_w, "D11");
    need(m.D12, n_z, n_d, "D12");
    need(m.C2, n_e, n_s, "C2");
    need(m.D21, n_e, n_w, "D21");
    need(m.D22, n_e, n_d, "D22");
    if (m.H.rows() != m.H.cols()) throw ValidationError(where + "H not square");
  }
}

const Channel& ExtendedSystem::channel(const std::string& name) const {
  for (const auto& ch : layout)
    if (ch.name == name) return ch;
  throw ValidationError("extended system has no channel '" + name + "'");
}

ExtendedSystem build_extended(const core::ModelPool& pool, const std::vector<mpc::MpcQp>& qps,
                              const std::vector<mpc::Observer>& observers, const UncertaintySpec& unc) {
  const size_t M = pool.size();
  if (qps.size() != M || observers.size() != M)
    throw ValidationError("build_extended: need one QP and one observer per sub-model");
  if (!(unc.b >= 0.0)) throw ValidationError("build_extended: uncertainty bound must be >= 0");
  const Eigen::Index nx = pool.n_x(), nu = pool.n_u(), ny = pool.n_y();
  const Eigen::Index NU = qps.front().n_U();
  for (size_t i = 0; i < M; ++i) {
    if (qps[i].n_U() != NU || qps[i].F_x.cols() != nx || qps[i].F_d.cols() != ny)
      throw ValidationError("build_extended: QP " + std::to_string(i) + " has inconsistent dimensions");
    if (observers[i].gain.rows() != nx || observers[i].gain.cols() != ny)
      throw ValidationError("build_extended: observer " + std::to_string(i) + " has wrong gain size");
  }
  ExtendedSystem ext;
  ext.unc = unc;
  auto add = [&ext](std::string name, iqc::MultiplierKind kind, Eigen::Index nv, Eigen::Index nw) {
    ext.layout.push_back({std::move(name), kind, nv, nw, ext.n_z, ext.n_w});
    ext.n_z += nv + nw;
    ext.n_w += nw;
  };
  if (unc.input) add("unc1", iqc::MultiplierKind::norm_bounded, ny, nu);
  if (unc.output) add("unc2", iqc::MultiplierKind::norm_bounded, ny, ny);
  add("mpc", iqc::MultiplierKind::mpc_single, NU, NU);
  ext.n_s = 2 * nx;
  ext.n_d = ny;
  ext.n_e = ny;

  Mat E1 = Mat::Zero(nu, NU);
  E1.leftCols(nu).setIdentity();
  for (size_t i = 0; i < M; ++i) {
    const auto& mdl = pool[i];
    const Mat& L = observers[i].gain;
    SubSystem s;
    s.A = Mat::Zero(ext.n_s, ext.n_s);
    s.A.topLeftCorner(nx, nx) = mdl.A;
    s.A.bottomLeftCorner(nx, nx) = L * mdl.C;
    s.A.bottomRightCorner(nx, nx) = mdl.A - L * mdl.C;
    s.B1 = Mat::Zero(ext.n_s, ext.n_w);
    s.B2 = Mat::Zero(ext.n_s, ext.n_d);
    s.C1 = Mat::Zero(ext.n_z, ext.n_s);
    s.D11 = Mat::Zero(ext.n_z, ext.n_w);
    s.D12 = Mat::Zero(ext.n_z, ext.n_d);
    for (const auto& ch : ext.layout) {
      s.D11.block(ch.z_offset + ch.n_v, ch.w_offset, ch.n_w, ch.n_w).setIdentity();
      if (ch.name == "unc1") {
        s.B1.block(0, ch.w_offset, nx, nu) = mdl.B;
        s.C1.block(ch.z_offset, 0, ny, nx) = mdl.C;
      } else if (ch.name == "unc2") {
        s.B1.block(nx, ch.w_offset, nx, ny) = L;
        s.C1.block(ch.z_offset, 0, ny, nx) = mdl.C;
      } else {
        s.B1.block(0, ch.w_offset, nx, NU) = mdl.B * E1;
        s.B1.block(nx, ch.w_offset, nx, NU) = mdl.B * E1;
        s.C1.block(ch.z_offset, nx, NU, nx) = qps[i].F_x;
        s.D12.block(ch.z_offset, 0, NU, ny) = qps[i].F_d;
      }
    }
    s.C2 = Mat::Zero(ext.n_e, ext.n_s);
    s.C2.leftCols(nx) = mdl.C;
    s.D21 = Mat::Zero(ext.n_e, ext.n_w);
    s.D22 = Mat::Zero(ext.n_e, ext.n_d);
    s.H = qps[i].H;
    s.L_qp = qps[i].L;
    s.b_qp = qps[i].b;
    s.centroid_y = mdl.centroid_output();
    s.C_plant = mdl.C;
    ext.models.push_back(std::move(s));
  }
  ext.validate();
  return ext;
}

std::vector<iqc::IqcMultiplier> multipliers_for(const ExtendedSystem& ext, int theorem) {
  if (theorem < 1 || theorem > 4) throw ValidationError("theorem must be 1, 2, 3 or 4");
  std::vector<iqc::IqcMultiplier> out;
  std::vector<Mat> H;
  for (const auto& m : ext.models) H.push_back(m.H);
  for (const auto& ch : ext.layout) {
    if (ch.name != "mpc") {
      out.push_back(iqc::norm_bounded_multiplier(ext.unc.b, ch.n_v, ch.n_w));
    } else if (theorem == 1) {
      out.push_back(iqc::mpc_single_multiplier(H));
    } else if (theorem == 2) {
      out.push_back(iqc::mpc_conic_multiplier(H));
    } else {
      std::vector<mpc::MpcQp> qps(ext.models.size());
      for (size_t i = 0; i < qps.size(); ++i) {
        qps[i].H = ext.models[i].H;
        qps[i].L = ext.models[i].L_qp;
        qps[i].b = ext.models[i].b_qp;
      }
      out.push_back(iqc::mpc_box_multiplier(H, qps));
    }
  }
  return out;
}

namespace {

iqc::MultiplierKind mpc_kind_for(int theorem) {
  switch (theorem) {
    case 1: return iqc::MultiplierKind::mpc_single;
    case 2: return iqc::MultiplierKind::mpc_conic;
    default: return iqc::MultiplierKind::mpc_box;
  }
}

Mat sym(const Mat& A) { return 0.5 * (A + A.transpose()); }

}  // namespace

TheoremProblem assemble_theorem(const ExtendedSystem& ext, const std::vector<iqc::IqcMultiplier>& mults,
                                int theorem, std::optional<double> gamma, Exec exec) {
  if (theorem < 1 || theorem > 4) throw ValidationError("theorem must be 1, 2, 3 or 4");
  ext.validate();
  if (mults.size() != ext.layout.size()) throw ValidationError("assemble_theorem: one multiplier per channel required");
  const size_t M = ext.models.size();
  for (size_t c = 0; c < mults.size(); ++c) {
    const auto& ch = ext.layout[c];
    const auto want = ch.name == "mpc" ? mpc_kind_for(theorem) : iqc::MultiplierKind::norm_bounded;
    if (mults[c].kind != want)
      throw ValidationError("assemble_theorem: theorem " + std::to_string(theorem) + " needs a " + iqc::to_string(want) +
                            " multiplier on channel '" + ch.name + "', got " + iqc::to_string(mults[c].kind));
    if (mults[c].n_v != ch.n_v || mults[c].n_w != ch.n_w)
      throw ValidationError("assemble_theorem: multiplier size does not match channel '" + ch.name + "'");
    if (!mults[c].per_model.empty() && mults[c].per_model.size() != M)
      throw ValidationError("assemble_theorem: multiplier on '" + ch.name + "' has the wrong number of sub-models");
  }
  if (gamma && !(*gamma > 0.0)) throw ValidationError("assemble_theorem: gamma must be positive");

  TheoremProblem tp;
  tp.theorem = theorem;
  auto& lmi = tp.lmi;
  if (theorem == 4) {
    for (size_t i = 0; i < M; ++i) tp.P_vars.push_back(lmi.add_matrix("P" + std::to_string(i), ext.n_s, sdp::Sign::pos));
  } else {
    tp.P_vars.push_back(lmi.add_matrix("P", ext.n_s));
  }
  tp.h = lmi.add_scalar("h");
  lmi.objective = tp.h;
  if (gamma) lmi.scalars[static_cast<size_t>(tp.h)].fixed = 1.0 / (*gamma * *gamma);
  for (size_t c = 0; c < mults.size(); ++c) {
    std::vector<int> ids;
    for (Eigen::Index k = 0; k < mults[c].n_params(); ++k)
      ids.push_back(lmi.add_scalar(ext.layout[c].name + "_" + std::to_string(k)));
    tp.channel_params.push_back(std::move(ids));
  }

  const Eigen::Index dim = ext.n_s + ext.n_w + ext.n_d;
  Mat constant = Mat::Zero(dim, dim);
  constant.bottomRightCorner(ext.n_d, ext.n_d) = -Mat::Identity(ext.n_d, ext.n_d);
  Mat J = Mat::Zero(ext.n_s, dim);
  J.leftCols(ext.n_s).setIdentity();

  // Per-model factor T and scalar terms, independent of the storage pairing.
  std::vector<Mat> T(M);
  std::vector<std::vector<sdp::ScalarTerm>> terms(M);
  auto per_model = [&](size_t i) {
    const auto& s = ext.models[i];
    T[i].resize(ext.n_s, dim);
    T[i] << s.A, s.B1, s.B2;
    Mat perf(ext.n_e, dim);
    perf << s.C2, s.D21, s.D22;
    Mat Z(ext.n_z, dim);
    Z << s.C1, s.D11, s.D12;
    terms[i].push_back({tp.h, sym(perf.transpose() * perf)});
    for (size_t c = 0; c < mults.size(); ++c) {
      const auto& ch = ext.layout[c];
      const Mat Xi = Z.middleRows(ch.z_offset, ch.n_v + ch.n_w);
      const auto idx = mults[c].param_indices(i);
      for (size_t k = 0; k < idx.size(); ++k) {
        const Mat& U = mults[c].layout == iqc::ParamLayout::per_model_diagonal ? mults[c].coefficients[i][k]
                       : mults[c].per_model.empty()                            ? mults[c].M
                                                                               : mults[c].per_model[i];
        terms[i].push_back({tp.channel_params[c][static_cast<size_t>(idx[k])], sym(Xi.transpose() * U * Xi)});
      }
    }
  };
#ifdef PWACERT_USE_OPENMP
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(M); ++i) per_model(static_cast<size_t>(i));
  } else {
    for (size_t i = 0; i < M; ++i) per_model(i);
  }
#else
  (void)exec;
  for (size_t i = 0; i < M; ++i) per_model(i);
#endif

  for (size_t i = 0; i < M; ++i) {
    const size_t nj = theorem == 4 ? M : 1;
    for (size_t jj = 0; jj < nj; ++jj) {
      const size_t j = theorem == 4 ? jj : i;
      auto& blk = lmi.add_block(theorem == 4 ? "pair_" + std::to_string(i) + "_" + std::to_string(j)
                                             : "model_" + std::to_string(i),
                                dim);
      blk.constant = constant;
      const int Pnext = theorem == 4 ? tp.P_vars[j] : tp.P_vars[0];
      const int Pnow = theorem == 4 ? tp.P_vars[i] : tp.P_vars[0];
      blk.congruence.push_back({Pnext, 1.0, T[i]});
      blk.congruence.push_back({Pnow, -1.0, J});
      blk.scalar = terms[i];
    }
  }
  return tp;
}

double Certificate::storage(size_t model, const Vec& xs) const {
  const Mat& Pm = P.size() > 1 ? P.at(model) : P.at(0);
  return xs.dot(Pm * xs);
}

namespace {

Certificate from_assignment(const ExtendedSystem& ext, const TheoremProblem& tp, const sdp::Assignment& a,
                            double gamma) {
  Certificate c;
  c.theorem = tp.theorem;
  c.gamma = gamma;
  const double g2 = gamma * gamma;
  for (int v : tp.P_vars) c.P.push_back(g2 * a.matrices[static_cast<size_t>(v)]);
  for (const auto& ids : tp.channel_params) {
    Vec p(static_cast<Eigen::Index>(ids.size()));
    for (size_t k = 0; k < ids.size(); ++k) p[static_cast<Eigen::Index>(k)] = g2 * a.scalars[ids[k]];
    c.params.push_back(std::move(p));
  }
  c.system = ext;
  return c;
}

sdp::SdpOptions theorem_options(int theorem, sdp::SdpOptions opts) {
  if (theorem == 4) opts.margin = 0.0;
  return opts;
}

void finalize(Certificate& c) {
  const auto v = recheck(c);
  c.max_block_eig = v.max_block_eig;
  if (!v.ok) {
    c.certified = false;
    c.message = "witness failed independent re-verification: " + v.detail;
  }
}

}  // namespace

namespace {

Certificate certify_direct(const ExtendedSystem& ext, int theorem, const CertifyOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto mults = multipliers_for(ext, theorem);
  const TheoremProblem tp = assemble_theorem(ext, mults, theorem);
  sdp::GammaOptions go;
  go.lo = opts.gamma_lo;
  go.hi = opts.gamma_hi;
  go.tol = opts.tol;
  go.seed_with_max = opts.seed_with_max;
  go.sdp = theorem_options(theorem, opts.sdp);
  const sdp::GammaResult res = sdp::minimize_gamma(tp.lmi, go);
  Certificate c;
  if (res.certified) {
    c = from_assignment(ext, tp, res.witness.assignment, res.gamma);
    c.certified = true;
    c.message = "certified";
  } else {
    c.theorem = theorem;
    c.system = ext;
    c.gamma = opts.gamma_hi;
    c.message = "uncertified: " + res.message;
  }
  c.gamma_lo = res.lo;
  c.margin = go.sdp.margin * tp.lmi.scale();
  c.kkt_residual = res.witness.kkt_residual;
  c.solves = res.solves;
  c.budget_exceeded = !c.certified && res.budget_exceeded;
  if (c.certified) finalize(c);
  c.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

Certificate certify_at_direct(const ExtendedSystem& ext, int theorem, double gamma, const sdp::SdpOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto mults = multipliers_for(ext, theorem);
  const TheoremProblem tp = assemble_theorem(ext, mults, theorem, gamma);
  const sdp::SdpOptions so = theorem_options(theorem, opts);
  const sdp::SdpSolution sol = sdp::solve_feasibility(tp.lmi, so);
  Certificate c;
  if (sol.status == sdp::Status::feasible) {
    c = from_assignment(ext, tp, sol.assignment, gamma);
    c.certified = true;
    c.message = "certified";
  } else {
    c.theorem = theorem;
    c.system = ext;
    c.gamma = gamma;
    c.message = "uncertified: solver status " + sdp::to_string(sol.status) + " (" + sol.diagnostics + ")";
  }
  c.margin = so.margin * tp.lmi.scale();
  c.kkt_residual = sol.kkt_residual;
  c.solves = 1;
  c.budget_exceeded = sol.budget_exceeded;
  if (c.certified) finalize(c);
  c.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

// Common storage is the special case P^j = P of piecewise storage, so a
// Theorem 3 witness copied to every P^j is a Theorem 4 candidate; it is only
// accepted after the Theorem 4 blocks re-verify.
std::optional<Certificate> lift_common(const ExtendedSystem& ext, const Certificate& c3) {
  if (!c3.certified) return std::nullopt;
  Certificate c = c3;
  c.theorem = 4;
  c.P.assign(ext.models.size(), c3.P.at(0));
  c.margin = 0.0;
  finalize(c);
  if (!c.certified) return std::nullopt;
  c.message = "certified (common storage)";
  return c;
}

}  // namespace

Certificate certify(const ExtendedSystem& ext, int theorem, const CertifyOptions& opts) {
  if (theorem != 4) return certify_direct(ext, theorem, opts);
  const auto t0 = std::chrono::steady_clock::now();
  const Certificate c3 = certify_direct(ext, 3, opts);
  CertifyOptions o4 = opts;
  if (c3.certified) o4.gamma_hi = std::max(opts.gamma_lo * 2.0, std::min(opts.gamma_hi, c3.gamma));
  Certificate c = certify_direct(ext, 4, o4);
  const int solves = c3.solves + c.solves;
  if (auto lifted = lift_common(ext, c3); lifted && (!c.certified || lifted->gamma < c.gamma)) {
    lifted->gamma_lo = std::min(c.gamma_lo, lifted->gamma);
    c = std::move(*lifted);
  }
  c.solves = solves;
  c.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

Certificate certify_at(const ExtendedSystem& ext, int theorem, double gamma, const sdp::SdpOptions& opts) {
  if (theorem != 4) return certify_at_direct(ext, theorem, gamma, opts);
  const auto t0 = std::chrono::steady_clock::now();
  const Certificate c3 = certify_at_direct(ext, 3, gamma, opts);
  Certificate c;
  if (auto lifted = lift_common(ext, c3)) {
    c = std::move(*lifted);
    c.solves = 1;
  } else {
    c = certify_at_direct(ext, 4, gamma, opts);
    c.solves += 1;
  }
  c.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

sdp::Verification recheck(const Certificate& cert) {
  sdp::Verification bad;
  if (!(cert.gamma > 0.0)) {
    bad.detail = "certificate has no positive gamma";
    return bad;
  }
  const auto mults = multipliers_for(cert.system, cert.theorem);
  const TheoremProblem tp = assemble_theorem(cert.system, mults, cert.theorem, cert.gamma);
  if (cert.P.size() != tp.P_vars.size() || cert.params.size() != tp.channel_params.size()) {
    bad.detail = "certificate shape does not match theorem " + std::to_string(cert.theorem);
    return bad;
  }
  const double g2 = cert.gamma * cert.gamma;
  sdp::Assignment a;
  for (const auto& P : cert.P) a.matrices.push_back(P / g2);
  a.scalars = Vec::Zero(static_cast<Eigen::Index>(tp.lmi.scalars.size()));
  for (size_t c = 0; c < tp.channel_params.size(); ++c) {
    if (cert.params[c].size() != static_cast<Eigen::Index>(tp.channel_params[c].size())) {
      bad.detail = "certificate parameter count mismatch on channel " + cert.system.layout[c].name;
      return bad;
    }
    for (size_t k = 0; k < tp.channel_params[c].size(); ++k)
      a.scalars[tp.channel_params[c][k]] = cert.params[c][static_cast<Eigen::Index>(k)] / g2;
  }
  return sdp::verify(tp.lmi, a, cert.margin);
}

namespace {

json mat_json(const Mat& M) { return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", linalg::to_row_major(M)}}; }

Mat json_mat(const json& j) {
  return linalg::from_row_major(j.at("data").get<std::vector<double>>(), j.at("rows").get<Eigen::Index>(),
                                j.at("cols").get<Eigen::Index>());
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json system_json(const ExtendedSystem& ext) {
  json j;
  j["n_s"] = ext.n_s;
  j["n_w"] = ext.n_w;
  j["n_d"] = ext.n_d;
  j["n_e"] = ext.n_e;
  j["n_z"] = ext.n_z;
  j["uncertainty"] = {{"input", ext.unc.input}, {"output", ext.unc.output}, {"b", ext.unc.b}};
  json layout = json::array();
  for (const auto& ch : ext.layout)
    layout.push_back({{"name", ch.name},
                      {"kind", iqc::to_string(ch.kind)},
                      {"n_v", ch.n_v},
                      {"n_w", ch.n_w},
                      {"z_offset", ch.z_offset},
                      {"w_offset", ch.w_offset}});
  j["layout"] = layout;
  json models = json::array();
  for (const auto& s : ext.models)
    models.push_back({{"A", mat_json(s.A)},
                      {"B1", mat_json(s.B1)},
                      {"B2", mat_json(s.B2)},
                      {"C1", mat_json(s.C1)},
                      {"D11", mat_json(s.D11)},
                      {"D12", mat_json(s.D12)},
                      {"C2", mat_json(s.C2)},
                      {"D21", mat_json(s.D21)},
                      {"D22", mat_json(s.D22)},
                      {"H", mat_json(s.H)},
                      {"L_qp", mat_json(s.L_qp)},
                      {"b_qp", vec_json(s.b_qp)},
                      {"centroid_y", vec_json(s.centroid_y)},
                      {"C_plant", mat_json(s.C_plant)}});
  j["models"] = models;
  return j;
}

ExtendedSystem json_system(const json& j) {
  ExtendedSystem ext;
  ext.n_s = j.at("n_s");
  ext.n_w = j.at("n_w");
  ext.n_d = j.at("n_d");
  ext.n_e = j.at("n_e");
  ext.n_z = j.at("n_z");
  const auto& u = j.at("uncertainty");
  ext.unc = {u.at("input"), u.at("output"), u.at("b")};
  for (const auto& c : j.at("layout"))
    ext.layout.push_back({c.at("name"), iqc::kind_from_string(c.at("kind")), c.at("n_v"), c.at("n_w"),
                          c.at("z_offset"), c.at("w_offset")});
  for (const auto& m : j.at("models")) {
    SubSystem s;
    s.A = json_mat(m.at("A"));
    s.B1 = json_mat(m.at("B1"));
    s.B2 = json_mat(m.at("B2"));
    s.C1 = json_mat(m.at("C1"));
    s.D11 = json_mat(m.at("D11"));
    s.D12 = json_mat(m.at("D12"));
    s.C2 = json_mat(m.at("C2"));
    s.D21 = json_mat(m.at("D21"));
    s.D22 = json_mat(m.at("D22"));
    s.H = json_mat(m.at("H"));
    s.L_qp = json_mat(m.at("L_qp"));
    s.b_qp = json_vec(m.at("b_qp"));
    s.centroid_y = json_vec(m.at("centroid_y"));
    s.C_plant = json_mat(m.at("C_plant"));
    ext.models.push_back(std::move(s));
  }
  ext.validate();
  return ext;
}

}  // namespace

std::string certificate_to_json(const Certificate& cert) {
  json j;
  j["version"] = "pwacert-certificate/1";
  j["theorem"] = cert.theorem;
  j["certified"] = cert.certified;
  j["gamma"] = cert.gamma;
  j["gamma_lower_bound"] = cert.gamma_lo;
  j["r"] = cert.r;
  j["margin"] = cert.margin;
  j["max_block_eig"] = cert.max_block_eig;
  j["kkt_residual"] = cert.kkt_residual;
  j["solve_seconds"] = cert.solve_seconds;
  j["solves"] = cert.solves;
  j["message"] = cert.message;
  json P = json::array();
  for (const auto& m : cert.P) P.push_back(mat_json(m));
  j["P"] = P;
  json params = json::array();
  for (size_t c = 0; c < cert.params.size(); ++c)
    params.push_back({{"channel", c < cert.system.layout.size() ? cert.system.layout[c].name : ""},
                      {"values", vec_json(cert.params[c])}});
  j["multiplier_params"] = params;
  j["system"] = system_json(cert.system);
  return j.dump(1);
}

Certificate certificate_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("certificate: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("version") != "pwacert-certificate/1") throw ValidationError("certificate: unsupported version");
    Certificate c;
    c.theorem = j.at("theorem");
    c.certified = j.at("certified");
    c.gamma = j.at("gamma");
    c.gamma_lo = j.value("gamma_lower_bound", 0.0);
    c.r = j.value("r", 0.0);
    c.margin = j.at("margin");
    c.max_block_eig = j.value("max_block_eig", 0.0);
    c.kkt_residual = j.value("kkt_residual", 0.0);
    c.solve_seconds = j.value("solve_seconds", 0.0);
    c.solves = j.value("solves", 0);
    c.message = j.value("message", "");
    for (const auto& m : j.at("P")) c.P.push_back(json_mat(m));
    for (const auto& p : j.at("multiplier_params")) c.params.push_back(json_vec(p.at("values")));
    c.system = json_system(j.at("system"));
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("certificate: ") + e.what());
  }
}

RLimitResult r_limit_sweep(const CaseBuilder& build, int theorem, const RSweepOptions& opts) {
  if (!(opts.resolution > 0.0) || !(opts.r_lo > 0.0) || !(opts.r_hi >= opts.r_lo))
    throw ValidationError("r_limit_sweep: need 0 < r_lo <= r_hi and resolution > 0");
  RLimitResult res;
  res.theorem = theorem;
  sdp::SdpOptions so = opts.sdp;
  if (opts.max_solve_seconds > 0.0) so.max_seconds = opts.max_solve_seconds;

  auto evaluate = [&](double r, Exec exec) {
    const auto t0 = std::chrono::steady_clock::now();
    sdp::SdpOptions local = so;
    local.exec = exec;
    Certificate c = certify_at(build(r), theorem, opts.gamma_cap, local);
    c.r = r;
    RSweepPoint p{r, c.certified, c.certified ? c.gamma : std::numeric_limits<double>::quiet_NaN(),
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    const bool over =
        !c.certified && (c.budget_exceeded || (opts.max_solve_seconds > 0.0 && p.seconds > opts.max_solve_seconds));
    return std::make_tuple(p, std::move(c), over);
  };

  if (!opts.grid.empty()) {
    const long n = static_cast<long>(opts.grid.size());
    std::vector<RSweepPoint> pts(opts.grid.size());
    std::vector<std::optional<Certificate>> certs(opts.grid.size());
    std::vector<char> over(opts.grid.size(), 0);
#ifdef PWACERT_USE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (long k = 0; k < n; ++k) {
      auto [p, c, o] = evaluate(opts.grid[static_cast<size_t>(k)], n > 1 ? Exec::serial : Exec::parallel);
      pts[static_cast<size_t>(k)] = p;
      if (p.feasible) certs[static_cast<size_t>(k)] = std::move(c);
      over[static_cast<size_t>(k)] = o ? 1 : 0;
    }
    std::vector<size_t> order(pts.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return pts[a].r < pts[b].r; });
    bool seen_feasible = false;
    for (size_t k : order) {
      res.profile.push_back(pts[k]);
      res.budget_exceeded = res.budget_exceeded || over[k];
      if (pts[k].feasible && !seen_feasible) {
        seen_feasible = true;
        res.found = true;
        res.r_limit = pts[k].r;
        res.certificate = certs[k];
      } else if (!pts[k].feasible && seen_feasible) {
        res.monotone = false;
      }
    }
    res.message = !res.found ? "no certificate on the grid"
                  : res.monotone ? "certified"
                                 : "feasibility is not monotone in r on this grid; see profile";
    return res;
  }

  const auto k_of = [&](double r) { return static_cast<long>(std::llround(r / opts.resolution)); };
  const auto r_of = [&](long k) { return static_cast<double>(k) * opts.resolution; };
  const long k_lo = std::max(1L, k_of(opts.r_lo));
  const long k_top = std::max(k_lo, k_of(opts.r_hi));
  std::optional<Certificate> best;

  auto test = [&](long k) -> std::optional<bool> {
    auto [p, c, o] = evaluate(r_of(k), Exec::parallel);
    res.profile.push_back(p);
    if (o) {
      res.budget_exceeded = true;
      return std::nullopt;
    }
    if (p.feasible) best = std::move(c);
    return p.feasible;
  };
  auto finish = [&](const std::string& msg) {
    std::sort(res.profile.begin(), res.profile.end(),
              [](const RSweepPoint& a, const RSweepPoint& b) { return a.r < b.r; });
    res.message = msg;
    return res;
  };

  long hi = -1;
  bool galloping = false;
  if (opts.hint_hi) {
    const long kh = std::clamp(k_of(*opts.hint_hi), k_lo, k_top);
    const auto f = test(kh);
    if (!f) return finish("solve exceeded its time or memory budget");
    if (*f) {
      hi = kh;
      galloping = true;
    }
  }
  if (hi < 0) {
    const auto f = test(k_top);
    if (!f) return finish("solve exceeded its time or memory budget");
    if (!*f) return finish("no certificate in [r_lo, r_hi]");
    hi = k_top;
  }
  Certificate at_hi = *best;
  long lo = k_lo - 1;  // untested sentinel below the range
  if (galloping) {
    // Step down from a feasible hint: hi−1, hi−2, hi−4, ...
    long step = 1;
    while (hi - step >= k_lo) {
      const auto f = test(hi - step);
      if (!f) return finish("solve exceeded its time or memory budget");
      if (*f) {
        hi -= step;
        at_hi = *best;
        step *= 2;
      } else {
        lo = hi - step;
        break;
      }
    }
  } else {
    const auto f = test(k_lo);
    if (!f) return finish("solve exceeded its time or memory budget");
    if (*f) {
      hi = k_lo;
      at_hi = *best;
    } else {
      lo = k_lo;
    }
  }
  while (hi - lo > 1 && lo >= k_lo) {
    const long mid = lo + (hi - lo) / 2;
    const auto f = test(mid);
    if (!f) return finish("solve exceeded its time or memory budget");
    if (*f) {
      hi = mid;
      at_hi = *best;
    } else {
      lo = mid;
    }
  }
  res.found = true;
  res.r_limit = r_of(hi);
  res.certificate = at_hi;
  return finish("certified");
}

std::string sweep_csv(const std::vector<RLimitResult>& results) {
  std::ostringstream os;
  os << "r,theorem,feasible,gamma_star,solve_seconds\n";
  os << std::setprecision(10);
  for (const auto& res : results)
    for (const auto& p : res.profile) {
      os << p.r << "," << res.theorem << "," << (p.feasible ? 1 : 0) << ",";
      if (p.feasible) os << p.gamma;
      os << "," << p.seconds << "\n";
    }
  return os.str();
}

SwitchRule centroid_switching(const ExtendedSystem& ext) {
  return [&ext](size_t, const Vec& xs, size_t previous) {
    const auto& prev = ext.models.at(previous);
    const Eigen::Index nx = prev.C_plant.cols();
    const Vec y = prev.C_plant * xs.head(nx) + prev.centroid_y;
    size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < ext.models.size(); ++i) {
      const double d = (y - ext.models[i].centroid_y).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  };
}

InterconnectionTrace simulate_interconnection(const ExtendedSystem& ext, const Vec& xs0,
                                              const std::vector<Vec>& d, const SwitchRule& rule,
                                              const UncertaintyMap& delta, size_t initial_model) {
  ext.validate();
  if (xs0.size() != ext.n_s) throw ValidationError("simulate_interconnection: initial state has wrong size");
  if (initial_model >= ext.models.size()) throw ValidationError("simulate_interconnection: bad initial model");
  InterconnectionTrace tr;
  Vec xs = xs0;
  size_t prev = initial_model;
  for (size_t k = 0; k <= d.size(); ++k) {
    const size_t i = rule ? rule(k, xs, prev) : prev;
    if (i >= ext.models.size()) throw ValidationError("simulate_interconnection: switching rule returned bad index");
    tr.xs.push_back(xs);
    tr.active.push_back(i);
    prev = i;
    if (k == d.size()) break;
    const auto& s = ext.models[i];
    const Vec& dk = d[k];
    if (dk.size() != ext.n_d) throw ValidationError("simulate_interconnection: disturbance has wrong size");
    Vec w = Vec::Zero(ext.n_w);
    for (const auto& ch : ext.layout) {
      // v rows carry no direct feedthrough from w by construction.
      const Vec v = s.C1.middleRows(ch.z_offset, ch.n_v) * xs + s.D12.middleRows(ch.z_offset, ch.n_v) * dk;
      if (ch.name == "mpc") {
        w.segment(ch.w_offset, ch.n_w) = mpc::solve_qp(s.H, v, s.L_qp, s.b_qp).U;
      } else {
        const Vec out = delta ? delta(ch.name, k, v) : Vec::Zero(ch.n_w);
        if (out.size() != ch.n_w) throw ValidationError("simulate_interconnection: uncertainty output has wrong size");
        w.segment(ch.w_offset, ch.n_w) = out;
      }
    }
    tr.w.push_back(w);
    tr.d.push_back(dk);
    tr.z.push_back(s.C1 * xs + s.D11 * w + s.D12 * dk);
    tr.e.push_back(s.C2 * xs + s.D21 * w + s.D22 * dk);
    xs = s.A * xs + s.B1 * w + s.B2 * dk;
    if (!xs.allFinite()) throw NumericError("simulate_interconnection: state diverged at step " + std::to_string(k));
  }
  return tr;
}

DissipationReport check_dissipation(const Certificate& cert, const InterconnectionTrace& trace, double rel_tol) {
  DissipationReport rep;
  if (trace.xs.empty()) {
    rep.pass = true;
    return rep;
  }
  const double g2 = cert.gamma * cert.gamma;
  rep.v0 = cert.storage(trace.active.front(), trace.xs.front());
  for (const auto& e : trace.e) rep.energy_e += e.squaredNorm();
  for (const auto& d : trace.d) rep.energy_d += d.squaredNorm();
  rep.tolerance = rel_tol * (rep.energy_e + g2 * rep.energy_d + std::abs(rep.v0));
  double se = 0.0, sd = 0.0;
  rep.worst_slack = rep.v0;
  for (size_t k = 0; k < trace.e.size(); ++k) {
    se += trace.e[k].squaredNorm();
    sd += trace.d[k].squaredNorm();
    const double slack = g2 * sd + rep.v0 - se;
    if (slack < rep.worst_slack) {
      rep.worst_slack = slack;
      rep.worst_step = k + 1;
    }
  }
  rep.pass = rep.worst_slack >= -rep.tolerance;
  return rep;
}

std::pair<double, double> storage_telescoping(const Certificate& cert, const InterconnectionTrace& trace) {
  double sum = 0.0;
  for (size_t k = 0; k + 1 < trace.xs.size(); ++k)
    sum += cert.storage(trace.active[k + 1], trace.xs[k + 1]) - cert.storage(trace.active[k], trace.xs[k]);
  const double ends = trace.xs.empty() ? 0.0
                                       : cert.storage(trace.active.back(), trace.xs.back()) -
                                             cert.storage(trace.active.front(), trace.xs.front());
  return {sum, ends};
}

std::pair<std::vector<Vec>, std::vector<Vec>> channel_signals(const ExtendedSystem& ext,
                                                              const InterconnectionTrace& trace,
                                                              const std::string& channel) {
  const Channel& ch = ext.channel(channel);
  std::vector<Vec> v, w;
  for (const auto& z : trace.z) {
    v.push_back(z.segment(ch.z_offset, ch.n_v));
    w.push_back(z.segment(ch.z_offset + ch.n_v, ch.n_w));
  }
  return {v, w};
}

}  // namespace pwacert::cert
