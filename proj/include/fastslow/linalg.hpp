#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "fastslow/error.hpp"

namespace fastslow {

// State dimensions are small; fixed-capacity storage keeps the per-step
// recursions free of heap traffic.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

// grad[k] holds the partial derivative of a matrix field with respect to x_k.
using MatGrad = std::array<Mat, kMaxDim>;

inline Vec zero_vec(int d) { return Vec::Zero(d); }

inline Vec scalar_vec(double v) {
  Vec out(1);
  out(0) = v;
  return out;
}

inline double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Symmetric PSD square root by eigendecomposition. Eigenvalues down to
// -tol are clamped to zero; anything more negative is rejected.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol = 1e-10) {
  detail::require(m.rows() == m.cols() && m.rows() > 0, "psd_sqrt: matrix must be square and non-empty");
  const double asym = max_abs(m - m.transpose());
  detail::require(asym <= tol, "psd_sqrt: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    detail::require(lambda(i) >= -tol,
                    "psd_sqrt: matrix is indefinite (eigenvalue " + std::to_string(lambda(i)) + ")");
    lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
  }
  Eigen::MatrixXd root = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (root + root.transpose());
}

// Moore-Penrose inverse of the PSD square root; used for whitening.
inline Eigen::MatrixXd psd_inverse_sqrt(const Eigen::MatrixXd& m, double tol = 1e-10) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    lambda(i) = lambda(i) > tol * scale ? 1.0 / std::sqrt(lambda(i)) : 0.0;
  }
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

// Symmetrize and clamp negative eigenvalues. Returns the smallest eigenvalue
// seen before clamping through `min_eigenvalue`.
inline Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m, double* min_eigenvalue = nullptr) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd lambda = eig.eigenvalues();
  if (min_eigenvalue) *min_eigenvalue = lambda.minCoeff();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda(i) = std::max(lambda(i), 0.0);
  Eigen::MatrixXd out = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace fastslow
