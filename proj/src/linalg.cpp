#include "pwacert/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace pwacert::linalg {

double spectral_radius(const Mat& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(a, false);
  if (es.info() != Eigen::Success) throw NumericError("eigenvalue solve failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double max_sym_eig(const Mat& a) {
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  Mat s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double min_sym_eig(const Mat& a) {
  if (a.size() == 0) return std::numeric_limits<double>::infinity();
  Mat s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_symmetric(const Mat& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

bool all_finite(const Mat& a) { return a.allFinite(); }

Mat block_diag(const std::vector<Mat>& blocks) {
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    r += b.rows();
    c += b.cols();
  }
  Mat out = Mat::Zero(r, c);
  Eigen::Index i = 0, j = 0;
  for (const auto& b : blocks) {
    out.block(i, j, b.rows(), b.cols()) = b;
    i += b.rows();
    j += b.cols();
  }
  return out;
}

std::vector<double> to_row_major(const Mat& a) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(a.size()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.push_back(a(i, j));
  return out;
}

Mat from_row_major(const std::vector<double>& data, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ValidationError("matrix data has " + std::to_string(data.size()) + " entries, expected " +
                          std::to_string(rows * cols));
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = data[static_cast<size_t>(i * cols + j)];
  return out;
}

}  // namespace pwacert::linalg
