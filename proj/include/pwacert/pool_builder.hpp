#pragma once

#include "pwacert/linalg.hpp"
#include "pwacert/parallel.hpp"
#include "pwacert/pwa_model.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace pwacert::pool {

/// Deterministic one-sample-time map x(k+1) = F(x(k), u(k)).
struct BlackBoxSimulator {
  std::function<Vec(const Vec&, const Vec&)> step;
  Eigen::Index n_x = 0;
  Eigen::Index n_u = 0;
  Vec x_lower, x_upper;
  Vec u_lower, u_upper;
  /// Optional initial-state sampler; uniform in [x_lower, x_upper] if unset.
  std::function<Vec(std::mt19937_64&)> sample_initial;

  void validate() const;
};

struct CollectOptions {
  /// Inputs are piecewise constant and resampled every `hold_steps` steps.
  int hold_steps = 5;
};

std::vector<core::Trajectory> collect_trajectories(const BlackBoxSimulator& sim, int n_traj, int horizon,
                                                   std::uint64_t seed, const CollectOptions& opts = {},
                                                   Exec exec = Exec::parallel);

/// Rows are samples [x; u] of every (state, input) pair in the trajectories.
Mat stack_samples(const std::vector<core::Trajectory>& trajectories);

struct PcaBasis {
  Vec mean;
  Mat components;          // (n_x+n_u) x k, orthonormal columns, descending variance
  Vec explained_variance;  // ratio per retained component

  /// Number of leading components whose cumulative ratio reaches `fraction`.
  Eigen::Index components_for(double fraction) const;
  /// Copy restricted to the first k components.
  PcaBasis truncated(Eigen::Index k) const;
  /// Coordinates of each sample row in the component basis.
  Mat project(const Mat& samples) const;
};

PcaBasis fit_pca(const Mat& samples);

struct KMeansResult {
  Mat centroids;                    // M x d
  std::vector<int> assignments;     // per sample
  std::vector<double> wcss_history; // after every Lloyd iteration
  int iterations = 0;
  double wcss() const { return wcss_history.empty() ? 0.0 : wcss_history.back(); }
};

KMeansResult kmeans(const Mat& points, int clusters, std::uint64_t seed, int max_iter = 300);

/// Index of the row of `projected` nearest to `centroid`, lowest index on ties.
Eigen::Index nearest_sample(const Vec& centroid, const Mat& projected);

/// Full-space sample ([x; u]) whose projection is nearest the centroid.
Vec snap_to_feasible(const Vec& centroid, const Mat& projected, const Mat& samples);

struct LinearizeOptions {
  /// Relative step: the perturbation of coordinate j is h * max(1, |z_j|).
  double h = 1e-5;
  /// Output rows selected from the state; all states when empty.
  std::vector<int> output_indices;
  bool require_stable = true;
};

/// Central finite-difference Jacobian linearization of the simulator at
/// (x0, u0). Columns are evaluated in parallel unless exec is serial.
core::PwaModel linearize(const BlackBoxSimulator& sim, const Vec& x0, const Vec& u0,
                         const LinearizeOptions& opts = {}, Exec exec = Exec::parallel);

/// Selection matrix picking the given state indices.
Mat selection_matrix(Eigen::Index n_x, const std::vector<int>& indices);

struct PoolBuildOptions {
  int n_traj = 250;
  int horizon = 40;
  int clusters = 14;
  std::uint64_t seed = 0;
  double pca_variance = 0.99;
  LinearizeOptions linearize;
  CollectOptions collect;
};

struct PoolBuildReport {
  Eigen::Index n_samples = 0;
  Eigen::Index pca_components = 0;
  double pca_retained = 0.0;
  double wcss = 0.0;
  int kmeans_iterations = 0;
  std::vector<int> collapsed;  // cluster ids whose snapped point duplicated an earlier one
  std::vector<int> rejected;   // cluster ids whose linearization was not open-loop stable
  std::vector<std::string> warnings;
};

struct PoolBuildResult {
  core::ModelPool pool;
  PoolBuildReport report;
  Mat samples;  // stacked dataset, cached by the CLI
};

/// Trajectory collection, PCA, k-means, centroid snapping and Jacobian
/// linearization.
PoolBuildResult build_pool(const BlackBoxSimulator& sim, const PoolBuildOptions& opts,
                           Exec exec = Exec::parallel);

/// Same pipeline on an already collected dataset (rows [x; u]).
PoolBuildResult build_pool_from_samples(const BlackBoxSimulator& sim, const Mat& samples,
                                        const PoolBuildOptions& opts, Exec exec = Exec::parallel);

}  // namespace pwacert::pool
