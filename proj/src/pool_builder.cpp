#include "pwacert/pool_builder.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pwacert::pool {

void BlackBoxSimulator::validate() const {
  if (!step) throw ValidationError("simulator has no step function");
  if (n_x <= 0) throw ValidationError("simulator n_x must be positive");
  if (n_u < 0) throw ValidationError("simulator n_u must be nonnegative");
  if (x_lower.size() != n_x || x_upper.size() != n_x) throw ValidationError("simulator state bounds have wrong size");
  if (u_lower.size() != n_u || u_upper.size() != n_u) throw ValidationError("simulator input bounds have wrong size");
  if ((x_lower.array() > x_upper.array()).any() || (u_lower.array() > u_upper.array()).any())
    throw ValidationError("simulator bounds are inverted");
}

namespace {

Vec uniform_in(const Vec& lo, const Vec& hi, std::mt19937_64& rng) {
  Vec out(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    std::uniform_real_distribution<double> dist(lo[i], hi[i]);
    out[i] = dist(rng);
  }
  return out;
}

core::Trajectory collect_one(const BlackBoxSimulator& sim, int index, int horizon, std::uint64_t seed,
                             const CollectOptions& opts) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  core::Trajectory traj;
  traj.states.resize(horizon + 1, sim.n_x);
  traj.inputs.resize(horizon, sim.n_u);
  Vec x = sim.sample_initial ? sim.sample_initial(rng) : uniform_in(sim.x_lower, sim.x_upper, rng);
  Vec u;
  traj.states.row(0) = x.transpose();
  for (int k = 0; k < horizon; ++k) {
    if (k % std::max(1, opts.hold_steps) == 0) u = uniform_in(sim.u_lower, sim.u_upper, rng);
    x = sim.step(x, u);
    if (!x.allFinite())
      throw NumericError("simulator returned a non-finite state (trajectory " + std::to_string(index) + ", step " +
                         std::to_string(k) + ")");
    traj.inputs.row(k) = u.transpose();
    traj.states.row(k + 1) = x.transpose();
  }
  return traj;
}

}  // namespace

std::vector<core::Trajectory> collect_trajectories(const BlackBoxSimulator& sim, int n_traj, int horizon,
                                                   std::uint64_t seed, const CollectOptions& opts, Exec exec) {
  sim.validate();
  if (n_traj < 1) throw ValidationError("n_traj must be >= 1");
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  std::vector<core::Trajectory> out(static_cast<size_t>(n_traj));
  if (exec == Exec::serial) {
    for (int i = 0; i < n_traj; ++i) out[static_cast<size_t>(i)] = collect_one(sim, i, horizon, seed, opts);
    return out;
  }
  std::vector<std::string> errors(static_cast<size_t>(n_traj));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_traj; ++i) {
    try {
      out[static_cast<size_t>(i)] = collect_one(sim, i, horizon, seed, opts);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericError(e);
  return out;
}

Mat stack_samples(const std::vector<core::Trajectory>& trajectories) {
  Eigen::Index rows = 0;
  for (const auto& t : trajectories) rows += t.inputs.rows();
  if (trajectories.empty()) return {};
  const auto nx = trajectories.front().states.cols();
  const auto nu = trajectories.front().inputs.cols();
  Mat out(rows, nx + nu);
  Eigen::Index r = 0;
  for (const auto& t : trajectories) {
    for (Eigen::Index k = 0; k < t.inputs.rows(); ++k, ++r) {
      out.block(r, 0, 1, nx) = t.states.row(k);
      out.block(r, nx, 1, nu) = t.inputs.row(k);
    }
  }
  return out;
}

Eigen::Index PcaBasis::components_for(double fraction) const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < explained_variance.size(); ++i) {
    acc += explained_variance[i];
    if (acc >= fraction - 1e-12) return i + 1;
  }
  return std::max<Eigen::Index>(1, explained_variance.size());
}

PcaBasis PcaBasis::truncated(Eigen::Index k) const {
  k = std::clamp<Eigen::Index>(k, 1, components.cols());
  return {mean, components.leftCols(k), explained_variance.head(k)};
}

Mat PcaBasis::project(const Mat& samples) const {
  return (samples.rowwise() - mean.transpose()) * components;
}

PcaBasis fit_pca(const Mat& samples) {
  if (samples.rows() < 2) throw ValidationError("PCA needs at least 2 samples");
  PcaBasis basis;
  basis.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - basis.mean.transpose();
  const Mat cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.info() != Eigen::Success) throw NumericError("PCA eigen-decomposition failed");
  const auto d = cov.rows();
  basis.components.resize(d, d);
  basis.explained_variance.resize(d);
  double total = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) total += std::max(0.0, es.eigenvalues()[i]);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index src = d - 1 - i;  // eigenvalues come ascending
    Vec v = es.eigenvectors().col(src);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.components.col(i) = v;
    basis.explained_variance[i] = total > 0.0 ? std::max(0.0, es.eigenvalues()[src]) / total : 0.0;
  }
  return basis;
}

namespace {

double assign_all(const Mat& points, const Mat& centroids, std::vector<int>& assign) {
  double wcss = 0.0;
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(p) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    assign[static_cast<size_t>(p)] = best;
    wcss += best_d;
  }
  return wcss;
}

}  // namespace

KMeansResult kmeans(const Mat& points, int clusters, std::uint64_t seed, int max_iter) {
  const Eigen::Index n = points.rows();
  if (clusters < 1) throw ValidationError("kmeans: cluster count must be >= 1");
  if (clusters > n) throw ValidationError("kmeans: more clusters than samples");
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  Mat centroids(clusters, points.cols());
  std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(static_cast<size_t>(n), false);
  Eigen::Index first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
  centroids.row(0) = points.row(first);
  chosen[static_cast<size_t>(first)] = true;
  for (int c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      d2[static_cast<size_t>(p)] = std::min(d2[static_cast<size_t>(p)], (points.row(p) - centroids.row(c - 1)).squaredNorm());
      total += d2[static_cast<size_t>(p)];
    }
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (Eigen::Index p = 0; p < n; ++p) {
        acc += d2[static_cast<size_t>(p)];
        if (acc >= r && d2[static_cast<size_t>(p)] > 0.0) {
          pick = p;
          break;
        }
      }
    }
    if (pick < 0) {
      for (Eigen::Index p = 0; p < n; ++p)
        if (!chosen[static_cast<size_t>(p)]) {
          pick = p;
          break;
        }
    }
    chosen[static_cast<size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
  }

  KMeansResult res;
  res.assignments.assign(static_cast<size_t>(n), -1);
  std::vector<int> prev;
  for (int it = 0; it < max_iter; ++it) {
    const double wcss = assign_all(points, centroids, res.assignments);
    res.wcss_history.push_back(wcss);
    res.iterations = it + 1;
    if (res.assignments == prev) break;
    prev = res.assignments;

    Mat sums = Mat::Zero(clusters, points.cols());
    std::vector<Eigen::Index> counts(static_cast<size_t>(clusters), 0);
    for (Eigen::Index p = 0; p < n; ++p) {
      sums.row(res.assignments[static_cast<size_t>(p)]) += points.row(p);
      ++counts[static_cast<size_t>(res.assignments[static_cast<size_t>(p)])];
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
        continue;
      }
      // Empty cluster: re-seed at the point farthest from its own centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index p = 0; p < n; ++p) {
        const double d = (points.row(p) - centroids.row(res.assignments[static_cast<size_t>(p)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = p;
        }
      }
      centroids.row(c) = points.row(far);
    }
  }
  res.centroids = centroids;
  return res;
}

Eigen::Index nearest_sample(const Vec& centroid, const Mat& projected) {
  if (projected.rows() == 0) throw ValidationError("nearest_sample: empty data");
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index p = 0; p < projected.rows(); ++p) {
    const double d = (projected.row(p).transpose() - centroid).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

Vec snap_to_feasible(const Vec& centroid, const Mat& projected, const Mat& samples) {
  return samples.row(nearest_sample(centroid, projected)).transpose();
}

Mat selection_matrix(Eigen::Index n_x, const std::vector<int>& indices) {
  if (indices.empty()) return Mat::Identity(n_x, n_x);
  Mat c = Mat::Zero(static_cast<Eigen::Index>(indices.size()), n_x);
  for (size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= n_x) throw ValidationError("output index out of range");
    c(static_cast<Eigen::Index>(r), indices[r]) = 1.0;
  }
  return c;
}

core::PwaModel linearize(const BlackBoxSimulator& sim, const Vec& x0, const Vec& u0, const LinearizeOptions& opts,
                         Exec exec) {
  sim.validate();
  if (x0.size() != sim.n_x || u0.size() != sim.n_u) throw ValidationError("linearize: dimension mismatch");
  if (!(opts.h > 0.0)) throw ValidationError("linearize: step must be positive");
  const Eigen::Index nx = sim.n_x, nu = sim.n_u, nz = nx + nu;
  Vec z0(nz);
  z0 << x0, u0;
  Vec lo(nz), hi(nz);
  lo << sim.x_lower, sim.u_lower;
  hi << sim.x_upper, sim.u_upper;
  Vec steps(nz);
  for (Eigen::Index j = 0; j < nz; ++j) {
    steps[j] = opts.h * std::max(1.0, std::abs(z0[j]));
    if (z0[j] - steps[j] < lo[j] || z0[j] + steps[j] > hi[j])
      throw ValidationError("linearize: point is within one step of the feasible box in coordinate " +
                            std::to_string(j));
  }
  const Vec f0 = sim.step(x0, u0);
  if (!f0.allFinite()) throw NumericError("linearize: simulator returned a non-finite state");

  Mat jac(nx, nz);
  std::vector<int> bad(static_cast<size_t>(nz), 0);
  auto column = [&](Eigen::Index j) {
    Vec zp = z0, zm = z0;
    zp[j] += steps[j];
    zm[j] -= steps[j];
    const Vec fp = sim.step(zp.head(nx), zp.tail(nu));
    const Vec fm = sim.step(zm.head(nx), zm.tail(nu));
    if (!fp.allFinite() || !fm.allFinite()) bad[static_cast<size_t>(j)] = 1;
    jac.col(j) = (fp - fm) / (zp[j] - zm[j]);
  };
  if (exec == Exec::serial) {
    for (Eigen::Index j = 0; j < nz; ++j) column(j);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (Eigen::Index j = 0; j < nz; ++j) column(j);
  }
  if (std::any_of(bad.begin(), bad.end(), [](int b) { return b != 0; }))
    throw NumericError("linearize: simulator returned a non-finite state");

  core::PwaModel m;
  m.A = jac.leftCols(nx);
  m.B = jac.rightCols(nu);
  m.f = f0 - m.A * x0 - m.B * u0;
  m.C = selection_matrix(nx, opts.output_indices);
  m.centroid_x = x0;
  m.centroid_u = u0;
  if (opts.require_stable) core::require_open_loop_stable(m);
  return m;
}

PoolBuildResult build_pool_from_samples(const BlackBoxSimulator& sim, const Mat& samples,
                                        const PoolBuildOptions& opts, Exec exec) {
  PoolBuildResult out;
  out.samples = samples;
  out.report.n_samples = samples.rows();

  const PcaBasis full = fit_pca(samples);
  const PcaBasis basis = full.truncated(full.components_for(opts.pca_variance));
  out.report.pca_components = basis.components.cols();
  out.report.pca_retained = basis.explained_variance.sum();
  const Mat projected = basis.project(samples);

  const KMeansResult km = kmeans(projected, opts.clusters, opts.seed);
  out.report.wcss = km.wcss();
  out.report.kmeans_iterations = km.iterations;

  std::vector<Eigen::Index> picked;
  std::vector<core::PwaModel> models;
  for (int c = 0; c < opts.clusters; ++c) {
    const Eigen::Index idx = nearest_sample(km.centroids.row(c).transpose(), projected);
    if (std::find(picked.begin(), picked.end(), idx) != picked.end()) {
      out.report.collapsed.push_back(c);
      out.report.warnings.push_back("cluster " + std::to_string(c) + " snapped to an already used sample");
      continue;
    }
    picked.push_back(idx);
    const Vec z = samples.row(idx).transpose();
    try {
      auto m = linearize(sim, z.head(sim.n_x), z.tail(sim.n_u), opts.linearize, exec);
      m.id = static_cast<int>(models.size());
      models.push_back(std::move(m));
    } catch (const ValidationError& e) {
      out.report.rejected.push_back(c);
      out.report.warnings.push_back("cluster " + std::to_string(c) + " rejected: " + e.what());
    }
  }
  if (models.empty()) throw NumericError("build_pool: every linearization was rejected");
  out.pool = core::ModelPool(std::move(models));
  return out;
}

PoolBuildResult build_pool(const BlackBoxSimulator& sim, const PoolBuildOptions& opts, Exec exec) {
  const auto trajs = collect_trajectories(sim, opts.n_traj, opts.horizon, opts.seed, opts.collect, exec);
  return build_pool_from_samples(sim, stack_samples(trajs), opts, exec);
}

}  // namespace pwacert::pool
