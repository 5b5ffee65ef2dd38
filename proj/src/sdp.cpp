#include "pwacert/sdp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace pwacert::sdp {

using detail::ConeBlock;
using detail::DualForm;
using detail::LpRow;
using detail::svec_index;

std::string to_string(Status s) {
  switch (s) {
    case Status::feasible: return "feasible";
    case Status::infeasible: return "infeasible";
    case Status::max_iter: return "max_iter";
  }
  return "unknown";
}

int LmiProblem::add_matrix(std::string name, Eigen::Index n, Sign sign) {
  matrices.push_back({std::move(name), n, sign});
  return static_cast<int>(matrices.size()) - 1;
}

int LmiProblem::add_scalar(std::string name, Sign sign, std::optional<double> upper) {
  scalars.push_back({std::move(name), sign, upper, std::nullopt});
  return static_cast<int>(scalars.size()) - 1;
}

LmiBlock& LmiProblem::add_block(std::string name, Eigen::Index dim) {
  LmiBlock blk;
  blk.name = std::move(name);
  blk.dim = dim;
  blk.constant = Mat::Zero(dim, dim);
  blocks.push_back(std::move(blk));
  return blocks.back();
}

void LmiProblem::validate() const {
  for (const auto& mv : matrices)
    if (mv.n <= 0) throw ValidationError("LmiProblem: matrix variable '" + mv.name + "' has no rows");
  if (objective && (*objective < 0 || *objective >= static_cast<int>(scalars.size())))
    throw ValidationError("LmiProblem: objective scalar out of range");
  for (const auto& blk : blocks) {
    const std::string where = "LmiProblem block '" + blk.name + "': ";
    if (blk.constant.rows() != blk.dim || blk.constant.cols() != blk.dim)
      throw ValidationError(where + "constant has wrong size");
    if (!linalg::is_symmetric(blk.constant, 1e-12 * std::max(1.0, blk.constant.cwiseAbs().maxCoeff())))
      throw ValidationError(where + "constant is not symmetric");
    for (const auto& t : blk.congruence) {
      if (t.var < 0 || t.var >= static_cast<int>(matrices.size()))
        throw ValidationError(where + "congruence term references unknown matrix variable");
      if (t.T.rows() != matrices[static_cast<size_t>(t.var)].n || t.T.cols() != blk.dim)
        throw ValidationError(where + "congruence factor for '" + matrices[static_cast<size_t>(t.var)].name +
                              "' has wrong size");
    }
    for (const auto& s : blk.scalar) {
      if (s.var < 0 || s.var >= static_cast<int>(scalars.size()))
        throw ValidationError(where + "scalar term references unknown scalar variable");
      if (s.F.rows() != blk.dim || s.F.cols() != blk.dim) throw ValidationError(where + "scalar coefficient has wrong size");
      if (!linalg::is_symmetric(s.F, 1e-12 * std::max(1.0, s.F.cwiseAbs().maxCoeff())))
        throw ValidationError(where + "scalar coefficient for '" + scalars[static_cast<size_t>(s.var)].name +
                              "' is not symmetric");
    }
  }
}

Mat LmiProblem::evaluate(size_t block, const Assignment& a) const {
  const auto& blk = blocks.at(block);
  Mat G = blk.constant;
  for (const auto& t : blk.congruence)
    G.noalias() += t.coef * (t.T.transpose() * a.matrices.at(static_cast<size_t>(t.var)) * t.T);
  for (const auto& s : blk.scalar) {
    const auto& sv = scalars[static_cast<size_t>(s.var)];
    const double v = sv.fixed ? *sv.fixed : a.scalars[s.var];
    G += v * s.F;
  }
  return 0.5 * (G + G.transpose());
}

double LmiProblem::scale() const {
  double s = 1.0;
  for (const auto& blk : blocks) {
    if (blk.constant.size() > 0) s = std::max(s, blk.constant.cwiseAbs().maxCoeff());
  }
  return s;
}

std::string LmiProblem::dump() const {
  std::ostringstream os;
  os.precision(17);
  os << "lmi-problem\n";
  os << "matrix_variables " << matrices.size() << "\n";
  for (size_t i = 0; i < matrices.size(); ++i)
    os << "  P" << i << " " << matrices[i].name << " n=" << matrices[i].n << " sign="
       << (matrices[i].sign == Sign::free ? "free" : matrices[i].sign == Sign::nonneg ? "psd" : "pd") << "\n";
  os << "scalar_variables " << scalars.size() << "\n";
  for (size_t i = 0; i < scalars.size(); ++i) {
    os << "  s" << i << " " << scalars[i].name << " sign=" << (scalars[i].sign == Sign::free ? "free" : "nonneg");
    if (scalars[i].upper) os << " upper=" << *scalars[i].upper;
    if (scalars[i].fixed) os << " fixed=" << *scalars[i].fixed;
    os << "\n";
  }
  if (objective) os << "objective maximize s" << *objective << "\n";
  auto write_mat = [&os](const Mat& M) {
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      os << "    ";
      for (Eigen::Index c = 0; c < M.cols(); ++c) os << (c ? " " : "") << M(r, c);
      os << "\n";
    }
  };
  os << "blocks " << blocks.size() << "\n";
  for (const auto& blk : blocks) {
    os << "block " << blk.name << " dim=" << blk.dim << " (<= -margin*I)\n";
    os << "  constant\n";
    write_mat(blk.constant);
    for (const auto& t : blk.congruence) {
      os << "  congruence P" << t.var << " coef=" << t.coef << " T " << t.T.rows() << "x" << t.T.cols() << "\n";
      write_mat(t.T);
    }
    for (const auto& s : blk.scalar) {
      os << "  scalar s" << s.var << " F\n";
      write_mat(s.F);
    }
  }
  return os.str();
}

Verification verify(const LmiProblem& prob, const Assignment& a, double margin) {
  Verification v;
  v.ok = true;
  v.max_block_eig = -std::numeric_limits<double>::infinity();
  v.min_matrix_eig = std::numeric_limits<double>::infinity();
  v.min_scalar = std::numeric_limits<double>::infinity();
  std::ostringstream detail;
  if (a.matrices.size() != prob.matrices.size() || a.scalars.size() != static_cast<Eigen::Index>(prob.scalars.size())) {
    v.ok = false;
    v.detail = "assignment shape does not match the problem";
    return v;
  }
  for (size_t i = 0; i < prob.matrices.size(); ++i) {
    const Mat& P = a.matrices[i];
    if (P.rows() != prob.matrices[i].n || P.cols() != prob.matrices[i].n || !linalg::all_finite(P)) {
      v.ok = false;
      detail << "matrix " << prob.matrices[i].name << " malformed; ";
      continue;
    }
    if (prob.matrices[i].sign == Sign::free) continue;
    const double e = linalg::min_sym_eig(0.5 * (P + P.transpose()));
    v.min_matrix_eig = std::min(v.min_matrix_eig, e);
    const bool bad = prob.matrices[i].sign == Sign::pos ? !(e > 0.0) : e < -1e-9;
    if (bad) {
      v.ok = false;
      detail << "matrix " << prob.matrices[i].name << " min eig " << e << "; ";
    }
  }
  for (size_t i = 0; i < prob.scalars.size(); ++i) {
    const auto& sv = prob.scalars[i];
    const double s = sv.fixed ? *sv.fixed : a.scalars[static_cast<Eigen::Index>(i)];
    if (!std::isfinite(s)) {
      v.ok = false;
      detail << "scalar " << sv.name << " not finite; ";
      continue;
    }
    if (sv.sign != Sign::free) {
      v.min_scalar = std::min(v.min_scalar, s);
      if (s < -1e-9) {
        v.ok = false;
        detail << "scalar " << sv.name << " = " << s << " negative; ";
      }
    }
    if (sv.upper && s > *sv.upper + 1e-9) {
      v.ok = false;
      detail << "scalar " << sv.name << " above its bound; ";
    }
  }
  for (size_t b = 0; b < prob.blocks.size(); ++b) {
    const Mat G = prob.evaluate(b, a);
    if (!linalg::all_finite(G)) {
      v.ok = false;
      detail << "block " << prob.blocks[b].name << " not finite; ";
      continue;
    }
    const double e = linalg::max_sym_eig(G);
    v.max_block_eig = std::max(v.max_block_eig, e);
    if (e > -margin + 1e-9) {
      v.ok = false;
      detail << "block " << prob.blocks[b].name << " max eig " << e << "; ";
    }
  }
  v.detail = detail.str();
  return v;
}

namespace detail {

namespace {

void add_pair(Mat& M, const Mat& Qt, const Mat& Y, Eigen::Index o_s, Eigen::Index n_s, Eigen::Index o_r,
              Eigen::Index n_r, bool same, double coef, Exec exec) {
  auto row_block = [&](Eigen::Index a) {
    Vec tmp(n_r);
    for (Eigen::Index b = a; b < n_s; ++b) {
      const Eigen::Index row = o_s + svec_index(n_s, a, b);
      const double sab = (a == b ? 0.5 : 1.0) * coef;
      for (Eigen::Index c = same ? a : 0; c < n_r; ++c) {
        const Eigen::Index d0 = (same && c == a) ? b : c;
        const Eigen::Index len = n_r - d0;
        auto seg = tmp.head(len);
        seg.noalias() = Qt(c, b) * Y.col(a).segment(d0, len) + Y(c, a) * Qt.col(b).segment(d0, len) +
                        Qt(c, a) * Y.col(b).segment(d0, len) + Y(c, b) * Qt.col(a).segment(d0, len);
        if (d0 == c) seg[0] *= 0.5;
        M.col(row).segment(o_r + svec_index(n_r, c, d0), len) += sab * seg;
      }
    }
  };
#ifdef PWACERT_USE_OPENMP
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index a = 0; a < n_s; ++a) row_block(a);
    return;
  }
#endif
  (void)exec;
  for (Eigen::Index a = 0; a < n_s; ++a) row_block(a);
}

}  // namespace

Mat schur_structured(const DualForm& df, const std::vector<Mat>& X, const std::vector<Mat>& Zinv, const Vec& x_lp,
                     const Vec& z_lp, Exec exec) {
  Mat M = Mat::Zero(df.m, df.m);
  for (size_t bl = 0; bl < df.blocks.size(); ++bl) {
    const ConeBlock& blk = df.blocks[bl];
    const Mat& Xb = X[bl];
    const Mat& Zi = Zinv[bl];
    std::vector<Mat> TX, TZ;
    for (const auto& t : blk.congruence) {
      TX.push_back(t.T * Xb);
      TZ.push_back(t.T * Zi);
    }
    for (size_t s = 0; s < blk.congruence.size(); ++s) {
      const auto& ts = blk.congruence[s];
      const auto vs = static_cast<size_t>(ts.var);
      for (size_t r = 0; r < blk.congruence.size(); ++r) {
        const auto& tr = blk.congruence[r];
        const auto vr = static_cast<size_t>(tr.var);
        if (df.offsets[vr] < df.offsets[vs]) continue;
        const Mat Qt = (TX[s] * tr.T.transpose()).transpose();  // n_r x n_s
        const Mat Y = TZ[r] * ts.T.transpose();                 // n_r x n_s
        add_pair(M, Qt, Y, df.offsets[vs], df.sizes[vs], df.offsets[vr], df.sizes[vr], vs == vr, ts.coef * tr.coef,
                 exec);
      }
    }
    // scalar x matrix
    for (const auto& sc : blk.scalar) {
      const Mat FX = sc.F * Xb;
      for (size_t r = 0; r < blk.congruence.size(); ++r) {
        const auto& tr = blk.congruence[r];
        const auto vr = static_cast<size_t>(tr.var);
        const Mat W = TZ[r] * FX * tr.T.transpose();
        const Eigen::Index n = df.sizes[vr], o = df.offsets[vr];
        for (Eigen::Index c = 0; c < n; ++c)
          for (Eigen::Index d = c; d < n; ++d)
            M(sc.var, o + svec_index(n, c, d)) += tr.coef * (c == d ? W(c, c) : W(c, d) + W(d, c));
      }
    }
    // scalar x scalar
    for (const auto& si : blk.scalar) {
      const Mat FX = si.F * Xb;
      for (const auto& sj : blk.scalar) {
        if (si.var < sj.var) continue;
        M(si.var, sj.var) += (FX * sj.F).cwiseProduct(Zi.transpose()).sum();
      }
    }
  }
  for (size_t i = 0; i < df.lp.size(); ++i) {
    const double w = x_lp[static_cast<Eigen::Index>(i)] / z_lp[static_cast<Eigen::Index>(i)];
    for (const auto& [k, v] : df.lp[i].a)
      for (const auto& [k2, v2] : df.lp[i].a)
        if (k >= k2) M(k, k2) += w * v * v2;
  }
  return M;
}

Mat coefficient_matrix(const DualForm& df, size_t block, Eigen::Index k) {
  const ConeBlock& blk = df.blocks[block];
  Mat A = Mat::Zero(blk.dim, blk.dim);
  for (const auto& t : blk.congruence) {
    const auto v = static_cast<size_t>(t.var);
    const Eigen::Index o = df.offsets[v], n = df.sizes[v];
    if (k < o || k >= o + n * (n + 1) / 2) continue;
    Eigen::Index a = 0, rem = k - o;
    while (rem >= n - a) {
      rem -= n - a;
      ++a;
    }
    const Eigen::Index b = a + rem;
    Mat E = Mat::Zero(n, n);
    E(a, b) = 1.0;
    E(b, a) = 1.0;
    A += t.coef * t.T.transpose() * E * t.T;
  }
  for (const auto& s : blk.scalar)
    if (s.var == k) A += s.F;
  return A;
}

Mat schur_dense_reference(const DualForm& df, const std::vector<Mat>& X, const std::vector<Mat>& Zinv,
                          const Vec& x_lp, const Vec& z_lp) {
  Mat M = Mat::Zero(df.m, df.m);
  for (size_t bl = 0; bl < df.blocks.size(); ++bl) {
    std::vector<Mat> A;
    for (Eigen::Index k = 0; k < df.m; ++k) A.push_back(coefficient_matrix(df, bl, k));
    for (Eigen::Index i = 0; i < df.m; ++i) {
      if (A[static_cast<size_t>(i)].isZero(0.0)) continue;
      const Mat AX = A[static_cast<size_t>(i)] * X[bl];
      for (Eigen::Index j = 0; j <= i; ++j)
        M(i, j) += (AX * A[static_cast<size_t>(j)] * Zinv[bl]).trace();
    }
  }
  for (size_t i = 0; i < df.lp.size(); ++i) {
    Vec a = Vec::Zero(df.m);
    for (const auto& [k, v] : df.lp[i].a) a[k] += v;
    const double w = x_lp[static_cast<Eigen::Index>(i)] / z_lp[static_cast<Eigen::Index>(i)];
    for (Eigen::Index r = 0; r < df.m; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) M(r, c) += w * a[r] * a[c];
  }
  return M;
}

}  // namespace detail

namespace {

enum class Mode { phase1, maximize };

struct Layout {
  DualForm df;
  std::vector<Eigen::Index> scalar_index;  // -1 when fixed
  Eigen::Index t_index = -1;
  double ybound = std::numeric_limits<double>::infinity();
};

Layout build_dual(const LmiProblem& prob, Mode mode, double margin, const SdpOptions& opts) {
  Layout L;
  DualForm& df = L.df;
  Eigen::Index m = 0;
  for (const auto& mv : prob.matrices) {
    df.offsets.push_back(m);
    df.sizes.push_back(mv.n);
    m += mv.n * (mv.n + 1) / 2;
  }
  for (const auto& sv : prob.scalars) L.scalar_index.push_back(sv.fixed ? -1 : m++);
  if (mode == Mode::phase1) L.t_index = m++;
  df.m = m;
  df.b = Vec::Zero(m);
  if (mode == Mode::phase1) {
    df.b[L.t_index] = -1.0;
  } else {
    if (!prob.objective) throw ValidationError("maximize_objective: problem has no objective scalar");
    const Eigen::Index k = L.scalar_index[static_cast<size_t>(*prob.objective)];
    if (k < 0) throw ValidationError("maximize_objective: objective scalar is fixed");
    df.b[k] = 1.0;
  }
  const double t_floor = 1.0;
  bool bounded = true;
  for (const auto& blk : prob.blocks) {
    ConeBlock cb;
    cb.dim = blk.dim;
    cb.C = -blk.constant - margin * Mat::Identity(blk.dim, blk.dim);
    cb.congruence = blk.congruence;
    for (const auto& s : blk.scalar) {
      const auto& sv = prob.scalars[static_cast<size_t>(s.var)];
      if (sv.fixed) {
        cb.C -= *sv.fixed * s.F;
      } else {
        cb.scalar.push_back({static_cast<int>(L.scalar_index[static_cast<size_t>(s.var)]), s.F});
      }
    }
    if (mode == Mode::phase1) cb.scalar.push_back({static_cast<int>(L.t_index), -Mat::Identity(blk.dim, blk.dim)});
    cb.C = 0.5 * (cb.C + cb.C.transpose());
    df.blocks.push_back(std::move(cb));
  }
  for (size_t i = 0; i < prob.matrices.size(); ++i) {
    const auto& mv = prob.matrices[i];
    if (mv.sign == Sign::free) {
      bounded = false;
      continue;
    }
    ConeBlock cb;
    cb.dim = mv.n;
    cb.C = Mat::Zero(mv.n, mv.n);
    cb.congruence.push_back({static_cast<int>(i), -1.0, Mat::Identity(mv.n, mv.n)});
    df.blocks.push_back(std::move(cb));
    LpRow tr;
    tr.c = opts.bound;
    for (Eigen::Index a = 0; a < mv.n; ++a) tr.a.emplace_back(df.offsets[i] + svec_index(mv.n, a, a), 1.0);
    df.lp.push_back(std::move(tr));
  }
  for (size_t i = 0; i < prob.scalars.size(); ++i) {
    const auto& sv = prob.scalars[i];
    const Eigen::Index k = L.scalar_index[i];
    if (k < 0) continue;
    if (sv.sign != Sign::free) df.lp.push_back({0.0, {{k, -1.0}}});
    if (sv.upper) {
      df.lp.push_back({*sv.upper, {{k, 1.0}}});
    } else if (sv.sign != Sign::free) {
      df.lp.push_back({opts.bound, {{k, 1.0}}});
    } else {
      bounded = false;
    }
    if (sv.sign == Sign::free && sv.upper) bounded = false;
  }
  if (mode == Mode::phase1) df.lp.push_back({t_floor, {{L.t_index, -1.0}}});
  if (bounded) {
    double yb = t_floor;
    for (const auto& sv : prob.scalars)
      if (!sv.fixed) yb = std::max(yb, sv.upper ? std::abs(*sv.upper) : opts.bound);
    if (!prob.matrices.empty()) yb = std::max(yb, opts.bound);
    L.ybound = yb;
  }
  return L;
}

Assignment to_assignment(const LmiProblem& prob, const Layout& L, const Vec& y) {
  Assignment a;
  for (size_t i = 0; i < prob.matrices.size(); ++i) {
    const Eigen::Index n = L.df.sizes[i], o = L.df.offsets[i];
    Mat P(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = r; c < n; ++c) P(r, c) = P(c, r) = y[o + svec_index(n, r, c)];
    a.matrices.push_back(std::move(P));
  }
  a.scalars.resize(static_cast<Eigen::Index>(prob.scalars.size()));
  for (size_t i = 0; i < prob.scalars.size(); ++i) {
    const Eigen::Index k = L.scalar_index[i];
    a.scalars[static_cast<Eigen::Index>(i)] = k < 0 ? *prob.scalars[i].fixed : y[k];
  }
  return a;
}

/// Σ_k y_k A_k restricted to each cone block.
std::vector<Mat> adjoint(const DualForm& df, const Vec& y) {
  std::vector<Mat> P;
  for (size_t i = 0; i < df.sizes.size(); ++i) {
    const Eigen::Index n = df.sizes[i], o = df.offsets[i];
    Mat M(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = r; c < n; ++c) M(r, c) = M(c, r) = y[o + svec_index(n, r, c)];
    P.push_back(std::move(M));
  }
  std::vector<Mat> out;
  for (const auto& blk : df.blocks) {
    Mat G = Mat::Zero(blk.dim, blk.dim);
    for (const auto& t : blk.congruence)
      G.noalias() += t.coef * (t.T.transpose() * P[static_cast<size_t>(t.var)] * t.T);
    for (const auto& s : blk.scalar) G += y[s.var] * s.F;
    out.push_back(0.5 * (G + G.transpose()));
  }
  return out;
}

Vec adjoint_lp(const DualForm& df, const Vec& y) {
  Vec out(static_cast<Eigen::Index>(df.lp.size()));
  for (size_t i = 0; i < df.lp.size(); ++i) {
    double s = 0.0;
    for (const auto& [k, v] : df.lp[i].a) s += v * y[k];
    out[static_cast<Eigen::Index>(i)] = s;
  }
  return out;
}

/// 𝒜(S)_k = Σ_blocks ⟨A_k, S_block⟩ + Σ_lp a_ik s_i.
Vec forward(const DualForm& df, const std::vector<Mat>& S, const Vec& s_lp) {
  Vec out = Vec::Zero(df.m);
  std::vector<Mat> W;
  for (auto n : df.sizes) W.push_back(Mat::Zero(n, n));
  for (size_t bl = 0; bl < df.blocks.size(); ++bl) {
    const auto& blk = df.blocks[bl];
    for (const auto& t : blk.congruence) W[static_cast<size_t>(t.var)].noalias() += t.coef * (t.T * S[bl] * t.T.transpose());
    for (const auto& s : blk.scalar) out[s.var] += s.F.cwiseProduct(S[bl]).sum();
  }
  for (size_t i = 0; i < df.sizes.size(); ++i) {
    const Eigen::Index n = df.sizes[i], o = df.offsets[i];
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = a; b < n; ++b)
        out[o + svec_index(n, a, b)] += a == b ? W[i](a, a) : W[i](a, b) + W[i](b, a);
  }
  for (size_t i = 0; i < df.lp.size(); ++i)
    for (const auto& [k, v] : df.lp[i].a) out[k] += v * s_lp[static_cast<Eigen::Index>(i)];
  return out;
}

double max_step_psd(const Mat& X, const Mat& dX) {
  Eigen::LLT<Mat> llt(X);
  if (llt.info() != Eigen::Success) return 0.0;
  Mat Li = llt.matrixL().solve(Mat::Identity(X.rows(), X.cols()));
  Mat S = Li * dX * Li.transpose();
  S = 0.5 * (S + S.transpose());
  const double e = linalg::min_sym_eig(S);
  return e >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / e;
}

double max_step_lp(const Vec& x, const Vec& dx) {
  double a = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (dx[i] < 0.0) a = std::min(a, -x[i] / dx[i]);
  return a;
}

Mat sym(const Mat& A) { return 0.5 * (A + A.transpose()); }

struct Direction {
  Vec dy;
  std::vector<Mat> dX, dZ;
  Vec dx, dz;
};

SdpSolution run_ipm(const LmiProblem& prob, Mode mode, const SdpOptions& opts) {
  prob.validate();
  const double scale = prob.scale();
  const double margin = opts.margin * scale;
  Layout L = build_dual(prob, mode, margin, opts);
  const DualForm& df = L.df;
  const size_t nb = df.blocks.size();
  const Eigen::Index nlp = static_cast<Eigen::Index>(df.lp.size());
  Vec c_lp(nlp);
  for (Eigen::Index i = 0; i < nlp; ++i) c_lp[i] = df.lp[static_cast<size_t>(i)].c;

  SdpSolution sol;
  sol.margin = margin;
  const double schur_bytes = 2.0 * 8.0 * static_cast<double>(df.m) * static_cast<double>(df.m);
  if (opts.max_schur_bytes > 0.0 && schur_bytes > opts.max_schur_bytes) {
    sol.status = Status::max_iter;
    sol.budget_exceeded = true;
    std::ostringstream msg;
    msg << "Schur system with m = " << df.m << " needs " << schur_bytes / 1e9 << " GB, over the memory budget";
    sol.diagnostics = msg.str();
    return sol;
  }
  sol.objective = -std::numeric_limits<double>::infinity();
  sol.objective_bound = std::numeric_limits<double>::infinity();

  Eigen::Index N = nlp;
  std::vector<Mat> X(nb), Z(nb);
  for (size_t bl = 0; bl < nb; ++bl) {
    const auto& blk = df.blocks[bl];
    double cn = blk.C.norm();
    for (const auto& t : blk.congruence) cn = std::max(cn, std::abs(t.coef) * t.T.squaredNorm());
    for (const auto& s : blk.scalar) cn = std::max(cn, s.F.norm());
    const double d = static_cast<double>(blk.dim);
    const double xi = std::max(10.0, std::sqrt(d));
    const double eta = std::max({10.0, std::sqrt(d), cn});
    X[bl] = xi * Mat::Identity(blk.dim, blk.dim);
    Z[bl] = eta * Mat::Identity(blk.dim, blk.dim);
    N += blk.dim;
  }
  Vec x_lp = Vec::Constant(nlp, 10.0);
  Vec z_lp = Vec::Constant(nlp, 10.0);
  for (Eigen::Index i = 0; i < nlp; ++i) z_lp[i] = std::max(10.0, std::abs(c_lp[i]));
  Vec y = Vec::Zero(df.m);

  const double bnorm = df.b.norm();
  double cnorm = c_lp.norm();
  for (const auto& blk : df.blocks) cnorm = std::hypot(cnorm, blk.C.norm());

  std::optional<Assignment> best;
  double best_obj = -std::numeric_limits<double>::infinity();
  std::ostringstream diag;
  const auto t_start = std::chrono::steady_clock::now();

  for (int it = 0; it < opts.max_iter; ++it) {
    sol.iterations = it;
    if (opts.max_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() > opts.max_seconds) {
      diag << "time budget exhausted at iteration " << it << "; ";
      sol.budget_exceeded = true;
      break;
    }
    // Residuals.
    const std::vector<Mat> Ay = adjoint(df, y);
    const Vec Ay_lp = adjoint_lp(df, y);
    std::vector<Mat> Rd(nb);
    double rd_norm = 0.0;
    for (size_t bl = 0; bl < nb; ++bl) {
      Rd[bl] = df.blocks[bl].C - Z[bl] - Ay[bl];
      rd_norm = std::hypot(rd_norm, Rd[bl].norm());
    }
    const Vec rd_lp = c_lp - z_lp - Ay_lp;
    rd_norm = std::hypot(rd_norm, rd_lp.norm());
    const Vec Rp = df.b - forward(df, X, x_lp);
    double primal_obj = c_lp.dot(x_lp), gapsum = x_lp.dot(z_lp);
    for (size_t bl = 0; bl < nb; ++bl) {
      primal_obj += df.blocks[bl].C.cwiseProduct(X[bl]).sum();
      gapsum += X[bl].cwiseProduct(Z[bl]).sum();
    }
    const double dual_obj = df.b.dot(y);
    const double mu = gapsum / static_cast<double>(N);
    const double pinf = Rp.norm() / (1.0 + bnorm);
    const double dinf = rd_norm / (1.0 + cnorm);
    const double relgap = std::abs(primal_obj - dual_obj) / (1.0 + std::abs(primal_obj) + std::abs(dual_obj));
    sol.kkt_residual = std::max({pinf, dinf, relgap});

    // Any iterate whose assignment passes the independent check is a witness.
    Assignment cand = to_assignment(prob, L, y);
    const Verification ver = verify(prob, cand, margin);
    if (ver.ok) {
      if (mode == Mode::phase1) {
        sol.status = Status::feasible;
        sol.assignment = std::move(cand);
        sol.max_block_eig = ver.max_block_eig;
        sol.objective = -y[L.t_index];
        sol.diagnostics = "verified at iteration " + std::to_string(it);
        return sol;
      }
      const double obj = cand.scalars[*prob.objective];
      if (obj > best_obj) {
        best_obj = obj;
        best = std::move(cand);
      }
    }
    // Upper bound on bᵀy over the bounded region from the primal iterate.
    if (std::isfinite(L.ybound)) {
      const double ub = primal_obj + Rp.lpNorm<1>() * L.ybound;
      if (mode == Mode::phase1 && ub < 0.0) {
        sol.status = Status::infeasible;
        sol.objective_bound = ub;
        sol.diagnostics = "primal bound certifies t* > 0 at iteration " + std::to_string(it);
        return sol;
      }
      if (mode == Mode::maximize) sol.objective_bound = std::min(sol.objective_bound, ub);
    }
    if (pinf < opts.tol && dinf < opts.tol && relgap < opts.tol) {
      diag << "converged at iteration " << it << "; ";
      break;
    }
    if (mode == Mode::maximize && best && sol.objective_bound - best_obj <= opts.tol * (1.0 + std::abs(best_obj))) {
      diag << "bound gap closed at iteration " << it << "; ";
      break;
    }

    // Schur complement.
    std::vector<Mat> Zinv(nb);
    bool ok = true;
    for (size_t bl = 0; bl < nb; ++bl) {
      Eigen::LLT<Mat> llt(Z[bl]);
      if (llt.info() != Eigen::Success) {
        ok = false;
        break;
      }
      Zinv[bl] = sym(llt.solve(Mat::Identity(Z[bl].rows(), Z[bl].cols())));
    }
    if (!ok) {
      diag << "Z lost definiteness at iteration " << it << "; ";
      break;
    }
    Mat M = detail::schur_structured(df, X, Zinv, x_lp, z_lp, opts.exec);
    // Diagonal scaling keeps the factorization well conditioned.
    Vec dscale = M.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    M = dscale.asDiagonal() * M.selfadjointView<Eigen::Lower>().toDenseMatrix() * dscale.asDiagonal();
    Eigen::LLT<Mat> chol(M);
    if (chol.info() != Eigen::Success) {
      M.diagonal().array() += 1e-12;
      chol.compute(M);
    }
    if (chol.info() != Eigen::Success) {
      diag << "Schur complement not positive definite at iteration " << it << "; ";
      break;
    }

    auto direction = [&](double sigma_mu, const Direction* pred) {
      std::vector<Mat> S(nb);
      for (size_t bl = 0; bl < nb; ++bl) {
        Mat T = X[bl] * Rd[bl] - sigma_mu * Mat::Identity(X[bl].rows(), X[bl].cols());
        if (pred) T += pred->dX[bl] * pred->dZ[bl];
        S[bl] = sym(T * Zinv[bl]);
      }
      Vec s_lp = (x_lp.cwiseProduct(rd_lp).array() - sigma_mu).matrix();
      if (pred) s_lp += pred->dx.cwiseProduct(pred->dz);
      s_lp = s_lp.cwiseQuotient(z_lp);
      const Vec rhs = df.b + forward(df, S, s_lp);
      Direction d;
      d.dy = dscale.asDiagonal() * chol.solve(dscale.asDiagonal() * rhs);
      const auto Ad = adjoint(df, d.dy);
      const Vec Ad_lp = adjoint_lp(df, d.dy);
      for (size_t bl = 0; bl < nb; ++bl) {
        Mat dZ = Rd[bl] - Ad[bl];
        Mat T = sigma_mu * Mat::Identity(X[bl].rows(), X[bl].cols()) - X[bl] * Z[bl] - X[bl] * dZ;
        if (pred) T -= pred->dX[bl] * pred->dZ[bl];
        d.dX.push_back(sym(T * Zinv[bl]));
        d.dZ.push_back(sym(dZ));
      }
      d.dz = rd_lp - Ad_lp;
      Vec t = (sigma_mu - (x_lp.cwiseProduct(z_lp)).array()).matrix() - x_lp.cwiseProduct(d.dz);
      if (pred) t -= pred->dx.cwiseProduct(pred->dz);
      d.dx = t.cwiseQuotient(z_lp);
      return d;
    };
    auto steps = [&](const Direction& d) {
      double ap = max_step_lp(x_lp, d.dx), ad = max_step_lp(z_lp, d.dz);
      for (size_t bl = 0; bl < nb; ++bl) {
        ap = std::min(ap, max_step_psd(X[bl], d.dX[bl]));
        ad = std::min(ad, max_step_psd(Z[bl], d.dZ[bl]));
      }
      return std::pair<double, double>(ap, ad);
    };

    const Direction pred = direction(0.0, nullptr);
    auto [ap, ad] = steps(pred);
    ap = std::min(1.0, ap);
    ad = std::min(1.0, ad);
    double mu_aff = (x_lp + ap * pred.dx).dot(z_lp + ad * pred.dz);
    for (size_t bl = 0; bl < nb; ++bl)
      mu_aff += (X[bl] + ap * pred.dX[bl]).cwiseProduct(Z[bl] + ad * pred.dZ[bl]).sum();
    mu_aff /= static_cast<double>(N);
    const double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 0.0, 1.0);

    const Direction corr = direction(sigma * mu, &pred);
    auto [cp, cd] = steps(corr);
    const double alpha_p = std::min(1.0, opts.step_fraction * cp);
    const double alpha_d = std::min(1.0, opts.step_fraction * cd);
    if (!(alpha_p > 1e-14) || !(alpha_d > 1e-14)) {
      diag << "step length collapsed at iteration " << it << "; ";
      break;
    }
    for (size_t bl = 0; bl < nb; ++bl) {
      X[bl] = sym(X[bl] + alpha_p * corr.dX[bl]);
      Z[bl] = sym(Z[bl] + alpha_d * corr.dZ[bl]);
    }
    x_lp += alpha_p * corr.dx;
    z_lp += alpha_d * corr.dz;
    y += alpha_d * corr.dy;
    if (!y.allFinite()) {
      diag << "non-finite iterate at iteration " << it << "; ";
      break;
    }
    sol.iterations = it + 1;
  }

  if (mode == Mode::maximize) {
    if (best) {
      sol.status = Status::feasible;
      sol.assignment = *best;
      sol.objective = best_obj;
      sol.max_block_eig = verify(prob, *best, margin).max_block_eig;
    } else {
      sol.status = Status::max_iter;
    }
    sol.diagnostics = diag.str();
    return sol;
  }
  // Phase-I ended without a verified witness.
  const double t_final = y[L.t_index];
  sol.objective = -t_final;
  const bool converged = sol.kkt_residual < 1e-6;
  sol.status = converged && t_final > -1e-9 ? Status::infeasible : Status::max_iter;
  sol.assignment = to_assignment(prob, L, y);
  sol.max_block_eig = verify(prob, sol.assignment, margin).max_block_eig;
  diag << "t = " << t_final;
  sol.diagnostics = diag.str();
  return sol;
}

}  // namespace

DualForm detail::make_dual_form(const LmiProblem& prob, double margin, const SdpOptions& opts) {
  return build_dual(prob, Mode::phase1, margin, opts).df;
}

SdpSolution solve_feasibility(const LmiProblem& prob, const SdpOptions& opts) {
  LmiProblem p = prob;
  if (p.objective) {
    auto& sv = p.scalars[static_cast<size_t>(*p.objective)];
    if (!sv.fixed) p.objective.reset();
  }
  return run_ipm(p, Mode::phase1, opts);
}

SdpSolution maximize_objective(const LmiProblem& prob, const SdpOptions& opts) {
  return run_ipm(prob, Mode::maximize, opts);
}

LmiProblem bounded_real_lmi(const Mat& A, const Mat& B, const Mat& C, const Mat& D) {
  const Eigen::Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() || D.cols() != m)
    throw ValidationError("bounded_real_lmi: inconsistent dimensions");
  LmiProblem p;
  const int P = p.add_matrix("P", n);
  const int h = p.add_scalar("h");
  p.objective = h;
  LmiBlock& blk = p.add_block("bounded_real", n + m);
  Mat T(n, n + m);
  T << A, B;
  Mat J = Mat::Zero(n, n + m);
  J.leftCols(n).setIdentity();
  blk.congruence.push_back({P, 1.0, T});
  blk.congruence.push_back({P, -1.0, J});
  blk.constant.bottomRightCorner(m, m) = -Mat::Identity(m, m);
  Mat CD(C.rows(), n + m);
  CD << C, D;
  blk.scalar.push_back({h, CD.transpose() * CD});
  return p;
}

LmiProblem at_gamma(const LmiProblem& prob, double gamma) {
  if (!prob.objective) throw ValidationError("at_gamma: problem has no gamma slot");
  if (!(gamma > 0.0)) throw ValidationError("at_gamma: gamma must be positive");
  LmiProblem p = prob;
  p.scalars[static_cast<size_t>(*p.objective)].fixed = 1.0 / (gamma * gamma);
  return p;
}

GammaResult minimize_gamma(const LmiProblem& prob, const GammaOptions& opts) {
  if (!prob.objective) throw ValidationError("minimize_gamma: problem has no gamma slot");
  if (!(opts.lo > 0.0) || !(opts.hi > opts.lo) || !(opts.tol > 0.0))
    throw ValidationError("minimize_gamma: need 0 < lo < hi and tol > 0");
  GammaResult res;
  double lo = opts.lo, hi = opts.hi;
  bool hi_known = false;

  auto test = [&](double g) {
    SdpSolution s = solve_feasibility(at_gamma(prob, g), opts.sdp);
    ++res.solves;
    res.budget_exceeded = res.budget_exceeded || s.budget_exceeded;
    const bool ok = s.status == Status::feasible;
    res.history.emplace_back(g, ok);
    return std::pair<bool, SdpSolution>(ok, std::move(s));
  };

  if (opts.seed_with_max) {
    LmiProblem p = prob;
    auto& h = p.scalars[static_cast<size_t>(*p.objective)];
    h.fixed.reset();
    h.sign = Sign::nonneg;
    h.upper = 1.0 / (opts.lo * opts.lo);
    SdpSolution s = maximize_objective(p, opts.sdp);
    ++res.solves;
    res.budget_exceeded = s.budget_exceeded;
    if (s.status == Status::feasible && s.objective > 0.0) {
      const double g = 1.0 / std::sqrt(s.objective);
      if (g <= opts.hi) {
        // Re-check the witness against the fixed-γ problem it certifies.
        const LmiProblem fixed = at_gamma(prob, g);
        if (verify(fixed, s.assignment, opts.sdp.margin * fixed.scale()).ok) {
          hi = std::max(g, opts.lo);
          hi_known = true;
          res.witness = s;
          res.witness.status = Status::feasible;
          res.history.emplace_back(hi, true);
        }
      }
    }
    if (std::isfinite(s.objective_bound) && s.objective_bound > 0.0) {
      const double g_lb = 1.0 / std::sqrt(s.objective_bound);
      if (g_lb > lo && g_lb < hi) lo = g_lb;
    }
    // The maximizer usually lands within tol of γ*, while its duality bound
    // stays loose; one probe just below closes the bracket in that case.
    if (hi_known && hi - lo > opts.tol) {
      const double probe = hi - 0.9 * opts.tol;
      auto [ok, w] = test(probe);
      if (ok) {
        hi = probe;
        res.witness = std::move(w);
      } else {
        lo = probe;
      }
    }
  }
  if (!hi_known) {
    auto [ok, s] = test(hi);
    if (!ok) {
      res.certified = false;
      res.gamma = hi;
      res.lo = lo;
      res.witness = std::move(s);
      res.message = "no certificate below hi";
      return res;
    }
    res.witness = std::move(s);
  }
  while (hi - lo > opts.tol) {
    const double mid = hi / lo > 4.0 ? std::sqrt(hi * lo) : 0.5 * (hi + lo);
    auto [ok, s] = test(mid);
    if (ok) {
      hi = mid;
      res.witness = std::move(s);
    } else {
      lo = mid;
    }
  }
  res.certified = true;
  res.gamma = hi;
  res.lo = lo;
  res.message = "certified";
  return res;
}

}  // namespace pwacert::sdp
