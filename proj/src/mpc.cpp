#include "pwacert/mpc.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

namespace pwacert::mpc {

void MpcConfig::validate(Eigen::Index n_y, Eigen::Index n_u) const {
  if (n_out < 1) throw ValidationError("mpc.n_out must be >= 1");
  if (n_in < 1) throw ValidationError("mpc.n_in must be >= 1");
  if (n_in > n_out) throw ValidationError("mpc.n_in must not exceed mpc.n_out");
  if (!(r >= 0.0)) throw ValidationError("mpc.r must be >= 0");
  if (ref.size() != n_y) throw ValidationError("mpc.ref has wrong dimension");
  if (u_lower.size() != n_u || u_upper.size() != n_u) throw ValidationError("mpc input bounds have wrong dimension");
  if ((u_lower.array() > u_upper.array()).any()) throw ValidationError("mpc input bounds are inverted");
}

Vec MpcQp::stack_outputs(const Vec& y) const {
  const Eigen::Index ny = y.size();
  const Eigen::Index n_out = ny > 0 ? G.rows() / ny : 0;
  Vec out(G.rows());
  for (Eigen::Index k = 0; k < n_out; ++k) out.segment(k * ny, ny) = y;
  return out;
}

MpcQp condense(const core::PwaModel& model, const MpcConfig& cfg) {
  model.validate();
  const Eigen::Index nx = model.n_x(), nu = model.n_u(), ny = model.n_y();
  if (!(cfg.r >= 0.0)) throw ValidationError("condense: r must be >= 0");
  if (cfg.n_in < 1 || cfg.n_out < 1 || cfg.n_in > cfg.n_out) throw ValidationError("condense: invalid horizons");
  const Eigen::Index N_U = cfg.n_in * nu;

  MpcQp qp;
  qp.n_u = nu;
  qp.Phi.resize(cfg.n_out * ny, nx);
  qp.G = Mat::Zero(cfg.n_out * ny, N_U);
  // Markov-style recursion: x(k) = A^k x0 + Σ_j A^{k-1-j} B u(j).
  Mat Apow = Mat::Identity(nx, nx);
  std::vector<Mat> AkB;  // A^j B
  for (int k = 1; k <= cfg.n_out; ++k) {
    AkB.push_back(Apow * model.B);
    Apow = model.A * Apow;
    qp.Phi.block((k - 1) * ny, 0, ny, nx) = model.C * Apow;
    for (int j = 0; j < k; ++j) {
      const int blk = std::min(j, cfg.n_in - 1);
      qp.G.block((k - 1) * ny, blk * nu, ny, nu) += model.C * AkB[static_cast<size_t>(k - 1 - j)];
    }
  }
  qp.H = qp.G.transpose() * qp.G + cfg.r * Mat::Identity(N_U, N_U);
  qp.H = 0.5 * (qp.H + qp.H.transpose());
  Eigen::LLT<Mat> llt(qp.H);
  if (llt.info() != Eigen::Success || linalg::min_sym_eig(qp.H) <= 1e-12 * std::max(1.0, qp.H.norm()))
    throw NumericError("condense: Hessian is numerically singular for model " + std::to_string(model.id));

  qp.F_x = -qp.G.transpose() * qp.Phi;
  Mat S = Mat::Zero(cfg.n_out * ny, ny);
  for (int k = 0; k < cfg.n_out; ++k) S.block(k * ny, 0, ny, ny).setIdentity();
  qp.F_d = qp.G.transpose() * S;

  if (cfg.u_lower.size() != nu || cfg.u_upper.size() != nu) throw ValidationError("condense: bound dimension");
  qp.lower.resize(N_U);
  qp.upper.resize(N_U);
  for (int j = 0; j < cfg.n_in; ++j) {
    qp.lower.segment(j * nu, nu) = cfg.u_lower - model.centroid_u;
    qp.upper.segment(j * nu, nu) = cfg.u_upper - model.centroid_u;
  }
  if ((qp.lower.array() > 0.0).any() || (qp.upper.array() < 0.0).any())
    throw ValidationError("condense: centroid input of model " + std::to_string(model.id) +
                          " lies outside the input bounds, zero would be infeasible");
  qp.L = Mat::Zero(2 * N_U, N_U);
  qp.b.resize(2 * N_U);
  for (Eigen::Index j = 0; j < N_U; ++j) {
    qp.L(2 * j, j) = 1.0;
    qp.L(2 * j + 1, j) = -1.0;
    qp.b[2 * j] = qp.upper[j];
    qp.b[2 * j + 1] = -qp.lower[j];
  }
  qp.Meq.resize(0, N_U);
  return qp;
}

QpResult solve_qp(const Mat& H, const Vec& f, const Mat& L, const Vec& b, const Mat& Meq, const QpOptions& opts) {
  const Eigen::Index n = H.rows();
  if (H.cols() != n || f.size() != n) throw ValidationError("solve_qp: H/f dimension mismatch");
  if (L.cols() != n && L.rows() > 0) throw ValidationError("solve_qp: L dimension mismatch");
  if (L.rows() != b.size()) throw ValidationError("solve_qp: L/b dimension mismatch");
  const Mat E = Meq.size() == 0 ? Mat(0, n) : Meq;
  if (E.cols() != n) throw ValidationError("solve_qp: Meq dimension mismatch");
  if ((b.array() < 0.0).any()) throw ValidationError("solve_qp: b must be >= 0 so that U = 0 is feasible");
  const Eigen::Index m = L.rows(), p = E.rows();

  QpResult res;
  Vec U = Vec::Zero(n);
  std::vector<int> W;
  const double scale = 1.0 + f.cwiseAbs().maxCoeff() + H.cwiseAbs().maxCoeff();
  const double step_eps = 1e-14 * scale;
  Vec lambda;

  auto kkt_solve = [&](const Vec& g, Vec& step, Vec& mult) {
    const Eigen::Index k = p + static_cast<Eigen::Index>(W.size());
    Mat K = Mat::Zero(n + k, n + k);
    K.topLeftCorner(n, n) = H;
    Mat AW(k, n);
    if (p > 0) AW.topRows(p) = E;
    for (size_t i = 0; i < W.size(); ++i) AW.row(p + static_cast<Eigen::Index>(i)) = L.row(W[i]);
    K.block(0, n, n, k) = AW.transpose();
    K.block(n, 0, k, n) = AW;
    Vec rhs = Vec::Zero(n + k);
    rhs.head(n) = -g;
    Eigen::FullPivLU<Mat> lu(K);
    const Vec sol = lu.solve(rhs);
    step = sol.head(n);
    mult = sol.tail(k);
  };

  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vec g = H * U - f;
    Vec step, mult;
    kkt_solve(g, step, mult);
    if (step.norm() <= step_eps * (1.0 + U.norm()) || step.norm() < 1e-15) {
      // Stationary on the working set: check inequality multipliers.
      int drop = -1;
      double most_negative = -1e-12 * scale;
      for (size_t i = 0; i < W.size(); ++i) {
        const double lam = mult[p + static_cast<Eigen::Index>(i)];
        if (lam < most_negative) {
          most_negative = lam;
          drop = static_cast<int>(i);
        }
      }
      if (drop < 0) {
        lambda = mult;
        break;
      }
      W.erase(W.begin() + drop);
      continue;
    }
    double alpha = 1.0;
    int blocking = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::find(W.begin(), W.end(), static_cast<int>(i)) != W.end()) continue;
      const double ap = L.row(i).dot(step);
      if (ap <= 1e-14 * L.row(i).norm() * step.norm()) continue;
      const double room = std::max(0.0, b[i] - L.row(i).dot(U));
      const double a = room / ap;
      if (a < alpha) {
        alpha = a;
        blocking = static_cast<int>(i);
      }
    }
    U += alpha * step;
    if (blocking >= 0) W.push_back(blocking);
  }
  if (it >= opts.max_iter) throw NumericError("solve_qp: active-set iteration cap reached (possible cycling)");

  res.U = U;
  res.iterations = it + 1;
  res.mu = Vec::Zero(m);
  res.nu = p > 0 ? Vec(lambda.head(p)) : Vec();
  for (size_t i = 0; i < W.size(); ++i) res.mu[W[i]] = std::max(0.0, lambda[p + static_cast<Eigen::Index>(i)]);
  res.active = W;
  Vec grad = H * U - f;
  if (m > 0) grad += L.transpose() * res.mu;
  if (p > 0) grad += E.transpose() * res.nu;
  double resid = grad.cwiseAbs().maxCoeff();
  if (m > 0) {
    const Vec slack = L * U - b;
    resid = std::max(resid, slack.cwiseMax(0.0).maxCoeff());
    resid = std::max(resid, res.mu.cwiseProduct(slack).cwiseAbs().maxCoeff());
  }
  if (p > 0) resid = std::max(resid, (E * U).cwiseAbs().maxCoeff());
  res.kkt_residual = resid;
  return res;
}

QpResult solve_qp(const MpcQp& qp, const Vec& f, const QpOptions& opts) {
  return solve_qp(qp.H, f, qp.L, qp.b, qp.Meq, opts);
}

PhiResult phi(const std::vector<MpcQp>& qps, size_t active, const Vec& f) {
  if (active >= qps.size()) throw ValidationError("phi: active model index out of range");
  const auto& qp = qps[active];
  auto res = solve_qp(qp, f);
  return {res.U, res.U.head(qp.n_u)};
}

Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  const Eigen::Index n = A.rows();
  Mat Ak = A;
  Mat Gk = B * R.ldlt().solve(B.transpose());
  Mat Hk = Q;
  const Mat I = Mat::Identity(n, n);
  for (int it = 0; it < 100; ++it) {
    const Mat W = I + Gk * Hk;
    Eigen::PartialPivLU<Mat> lu(W);
    const Mat WinvA = lu.solve(Ak);
    const Mat WinvG = lu.solve(Gk);
    const Mat Hn = Hk + Ak.transpose() * Hk * WinvA;
    Gk = Gk + Ak * WinvG * Ak.transpose();
    Ak = Ak * WinvA;
    const double delta = (Hn - Hk).norm();
    Hk = 0.5 * (Hn + Hn.transpose());
    if (!Hk.allFinite()) throw NumericError("solve_dare: iteration diverged");
    if (delta <= 1e-13 * std::max(1.0, Hk.norm())) return Hk;
  }
  throw NumericError("solve_dare: no convergence");
}

namespace {

/// Pole placement for A − L C through a single output combination q.
bool place_poles(const Mat& A, const Mat& C, double decay, Mat& gain) {
  const Eigen::Index n = A.rows(), ny = C.rows();
  std::vector<Vec> candidates;
  for (Eigen::Index i = 0; i < ny; ++i) candidates.push_back(Vec::Unit(ny, i));
  candidates.push_back(Vec::Ones(ny));
  Vec alt(ny);
  for (Eigen::Index i = 0; i < ny; ++i) alt[i] = 1.0 + 0.37 * static_cast<double>(i);
  candidates.push_back(alt);
  // Desired characteristic polynomial from distinct real poles inside decay/2.
  Vec coeff = Vec::Zero(n + 1);  // coeff[k] multiplies s^k
  coeff[0] = 1.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double pole = decay * 0.5 * static_cast<double>(k + 1) / static_cast<double>(n);
    Vec next = Vec::Zero(n + 1);
    for (Eigen::Index j = 0; j <= k; ++j) {
      next[j + 1] += coeff[j];
      next[j] -= pole * coeff[j];
    }
    coeff = next;
  }
  const Mat At = A.transpose();
  for (const auto& q : candidates) {
    const Vec bt = C.transpose() * q;
    Mat ctrb(n, n);
    Vec col = bt;
    for (Eigen::Index k = 0; k < n; ++k) {
      ctrb.col(k) = col;
      col = At * col;
    }
    Eigen::FullPivLU<Mat> lu(ctrb);
    if (lu.rank() < n) continue;
    Mat poly = Mat::Zero(n, n);
    Mat pw = Mat::Identity(n, n);
    for (Eigen::Index k = 0; k <= n; ++k) {
      poly += coeff[k] * pw;
      pw = At * pw;
    }
    const Vec en = Vec::Unit(n, n - 1);
    const Mat ctrb_inv = lu.solve(Mat::Identity(n, n));
    const Vec kvec = poly.transpose() * (ctrb_inv.transpose() * en);
    // Aᵀ − bt kᵀ  <=>  A − k btᵀ = A − k qᵀ C
    Mat L = kvec * q.transpose();
    if (!L.allFinite()) continue;
    if (linalg::spectral_radius(A - L * C) <= std::max(decay, 1e-9) + 1e-9) {
      gain = L;
      return true;
    }
  }
  return false;
}

}  // namespace

Observer design_observer(const core::PwaModel& model, double decay) {
  model.validate();
  if (!(decay >= 0.0 && decay < 1.0)) throw ValidationError("design_observer: decay must lie in [0, 1)");
  const Mat& A = model.A;
  const Mat& C = model.C;
  const Eigen::Index n = A.rows();

  // Modes the output cannot see bound the achievable error radius.
  Eigen::EigenSolver<Mat> es(A);
  double floor_radius = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::complex<double> lam = es.eigenvalues()[k];
    Eigen::MatrixXcd pbh(n + C.rows(), n);
    pbh.topRows(n) = lam * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    pbh.bottomRows(C.rows()) = C.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pbh);
    const auto& s = svd.singularValues();
    if (s[s.size() - 1] <= 1e-10 * std::max(1.0, s[0])) {
      if (std::abs(lam) >= 1.0)
        throw ValidationError("design_observer: (A, C) of model " + std::to_string(model.id) +
                              " is not detectable");
      floor_radius = std::max(floor_radius, std::abs(lam));
    }
  }
  const double target = std::max(decay, floor_radius > 0.0 ? floor_radius + 1e-6 : 0.0);

  Observer obs;
  if (target > 0.0) {
    try {
      const Mat As = A / target;
      const Mat X = solve_dare(As.transpose(), C.transpose(), Mat::Identity(n, n),
                               Mat::Identity(C.rows(), C.rows()));
      const Mat S = C * X * C.transpose() + Mat::Identity(C.rows(), C.rows());
      const Mat Ls = As * X * C.transpose() * S.inverse();
      obs.gain = target * Ls;
      obs.radius = linalg::spectral_radius(A - obs.gain * C);
      if (obs.radius <= target + 1e-9) return obs;
    } catch (const NumericError&) {
    }
  }
  Mat gain;
  if (!place_poles(A, C, target, gain))
    throw ValidationError("design_observer: could not place observer poles for model " + std::to_string(model.id));
  obs.gain = gain;
  obs.radius = linalg::spectral_radius(A - gain * C);
  return obs;
}

}  // namespace pwacert::mpc
