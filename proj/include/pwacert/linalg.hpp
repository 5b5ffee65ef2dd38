#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace pwacert {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Input or configuration violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure broke down (non-finite values, no convergence, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace linalg {

double spectral_radius(const Mat& a);

/// Largest eigenvalue of the symmetric part of `a`.
double max_sym_eig(const Mat& a);
double min_sym_eig(const Mat& a);

bool is_symmetric(const Mat& a, double tol = 0.0);
bool all_finite(const Mat& a);

/// Block-diagonal stacking; empty blocks are skipped.
Mat block_diag(const std::vector<Mat>& blocks);

/// Row-major flattening used by the JSON formats.
std::vector<double> to_row_major(const Mat& a);
Mat from_row_major(const std::vector<double>& data, Eigen::Index rows, Eigen::Index cols);

}  // namespace linalg
}  // namespace pwacert
