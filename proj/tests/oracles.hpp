#pragma once

#include "pwacert/linalg.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <complex>
#include <random>

namespace oracle {

using pwacert::Mat;
using pwacert::Vec;

/// max over a frequency grid of σ_max(C (e^{jω} I − A)⁻¹ B + D).
inline double hinf_grid(const Mat& A, const Mat& B, const Mat& C, const Mat& D, int n_freq = 10000) {
  using CMat = Eigen::MatrixXcd;
  const Eigen::Index n = A.rows();
  const double pi = std::acos(-1.0);
  double best = 0.0;
  for (int k = 0; k <= n_freq; ++k) {
    const double w = pi * k / n_freq;
    const std::complex<double> z(std::cos(w), std::sin(w));
    CMat M = z * CMat::Identity(n, n) - A.cast<std::complex<double>>();
    CMat G = C.cast<std::complex<double>>() * M.partialPivLu().solve(B.cast<std::complex<double>>()) +
             D.cast<std::complex<double>>();
    Eigen::JacobiSVD<CMat> svd(G);
    best = std::max(best, svd.singularValues()(0));
  }
  return best;
}

/// Grid refinement around the coarse peak (golden-section on each local max).
inline double hinf_refined(const Mat& A, const Mat& B, const Mat& C, const Mat& D) {
  using CMat = Eigen::MatrixXcd;
  const Eigen::Index n = A.rows();
  auto gain = [&](double w) {
    const std::complex<double> z(std::cos(w), std::sin(w));
    CMat M = z * CMat::Identity(n, n) - A.cast<std::complex<double>>();
    CMat G = C.cast<std::complex<double>>() * M.partialPivLu().solve(B.cast<std::complex<double>>()) +
             D.cast<std::complex<double>>();
    Eigen::JacobiSVD<CMat> svd(G);
    return svd.singularValues()(0);
  };
  const double pi = std::acos(-1.0);
  const int N = 10000;
  std::vector<double> g(N + 1);
  for (int k = 0; k <= N; ++k) g[k] = gain(pi * k / N);
  double best = *std::max_element(g.begin(), g.end());
  for (int k = 0; k <= N; ++k) {
    const bool peak = (k == 0 || g[k] >= g[k - 1]) && (k == N || g[k] >= g[k + 1]);
    if (!peak) continue;
    double a = pi * std::max(0, k - 1) / N, b = pi * std::min(N, k + 1) / N;
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 60; ++it) {
      const double c = b - r * (b - a), d = a + r * (b - a);
      if (gain(c) > gain(d)) b = d; else a = c;
    }
    best = std::max(best, gain(0.5 * (a + b)));
  }
  return best;
}

/// Random Schur-stable matrix with spectral radius `rho`.
inline Mat random_stable(std::mt19937_64& rng, Eigen::Index n, double rho) {
  std::normal_distribution<double> N(0.0, 1.0);
  Mat A(n, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = N(rng);
  const double r = pwacert::linalg::spectral_radius(A);
  return A * (rho / r);
}

inline Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> N(0.0, 1.0);
  Mat A(r, c);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = N(rng);
  return A;
}

}  // namespace oracle
