#pragma once

#include "pwacert/linalg.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pwacert::core {

/// One affine sub-model x+ = A x + B u + f, y = C x, linearized at
/// (centroid_x, centroid_u).
struct PwaModel {
  Mat A;
  Mat B;
  Vec f;
  Mat C;
  Vec centroid_x;
  Vec centroid_u;
  int id = 0;

  Eigen::Index n_x() const { return A.rows(); }
  Eigen::Index n_u() const { return B.cols(); }
  Eigen::Index n_y() const { return C.rows(); }

  /// Output of the linearization point, C * centroid_x.
  Vec centroid_output() const { return C * centroid_x; }

  /// Throws ValidationError when matrix dimensions disagree or entries are
  /// non-finite.
  void validate() const;
};

/// Throws ValidationError if spectral radius(A) >= 1.
void require_open_loop_stable(const PwaModel& model);

class ModelPool {
 public:
  ModelPool() = default;
  explicit ModelPool(std::vector<PwaModel> models);

  const std::vector<PwaModel>& models() const { return models_; }
  const PwaModel& operator[](size_t i) const { return models_.at(i); }
  size_t size() const { return models_.size(); }
  bool empty() const { return models_.empty(); }

  Eigen::Index n_x() const { return models_.front().n_x(); }
  Eigen::Index n_u() const { return models_.front().n_u(); }
  Eigen::Index n_y() const { return models_.front().n_y(); }

  /// Index of the model whose centroid output is nearest to `y`
  /// (Euclidean), lowest index on ties.
  size_t select_model(const Vec& y) const;

  /// Initial switching decision: each model is scored with its own C.
  size_t select_initial(const Vec& x) const;

 private:
  std::vector<PwaModel> models_;
  std::vector<Vec> centroid_outputs_;
};

struct PwaStep {
  Vec x_next;
  Vec y;
  size_t active = 0;
};

/// One step of the switched affine model. The switching output is computed
/// with the previously active model's C; without a previous model the
/// initial rule applies.
PwaStep step_pwa(const ModelPool& pool, const Vec& x, const Vec& u,
                 std::optional<size_t> previous = std::nullopt);

struct Trajectory {
  Mat states;   // (T+1) x n_x
  Mat inputs;   // T x n_u
  Mat outputs;  // (T+1) x n_y, may be empty

  Eigen::Index length() const { return inputs.rows(); }
  void validate() const;
};

/// Rolls the switched model forward from x0 under the given input rows.
Trajectory simulate_pwa(const ModelPool& pool, const Vec& x0, const Mat& inputs);

// JSON document with version tag, dimensions and row-major matrices.
std::string pool_to_json(const ModelPool& pool);
ModelPool pool_from_json(const std::string& text);
void save_pool(const ModelPool& pool, const std::string& path);
ModelPool load_pool(const std::string& path);

// CSV with header `k,x_0..x_{n-1},u_0..u_{m-1}`. The final row carries the
// terminal state and empty input cells.
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& text);

}  // namespace pwacert::core
