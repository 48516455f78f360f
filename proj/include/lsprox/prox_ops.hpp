#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

#include "lsprox/matrix.hpp"

namespace lsprox {

// Thin SVD of an m x n matrix: Q = U * diag(K) * V^T with r = min(m, n).
// K is sorted descending; the first nonzero component of each column of U
// is nonnegative (sign convention shared with V).
struct SvdFactors {
  Matrix U;  // m x r, column-orthonormal
  Vector K;  // r singular values, descending, >= 0
  Matrix V;  // n x r, column-orthonormal

  // Numerical rank: singular values below 1e-12 * K[0] count as zero.
  Eigen::Index rank() const {
    if (K.size() == 0 || K[0] <= 0.0) return 0;
    const double floor = 1e-12 * K[0];
    Eigen::Index r = 0;
    while (r < K.size() && K[r] > floor) ++r;
    return r;
  }
};

// soft(q, tau) = sign(q) * max(|q| - tau, 0)
inline double soft(double q, double tau) {
  require_finite(q, "soft");
  require_nonneg(tau, "soft");
  const double mag = std::abs(q) - tau;
  if (mag <= 0.0) return 0.0;
  return q > 0.0 ? mag : -mag;
}

inline Matrix soft_matrix(const Matrix& q, double tau) {
  require_finite(q, "soft_matrix");
  require_nonneg(tau, "soft_matrix");
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double v = q(i, j);
      const double mag = std::abs(v) - tau;
      out(i, j) = mag <= 0.0 ? 0.0 : (v > 0.0 ? mag : -mag);
    }
  return out;
}

inline SvdFactors svd(const Matrix& q) {
  require_finite(q, "svd");
  Eigen::JacobiSVD<Matrix> solver(q, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("svd: Jacobi iteration did not converge within the sweep budget");
  SvdFactors f;
  f.U = solver.matrixU();
  f.K = solver.singularValues();
  f.V = solver.matrixV();
  // Fix signs: first nonzero component of each U column made nonnegative.
  for (Eigen::Index j = 0; j < f.U.cols(); ++j) {
    for (Eigen::Index i = 0; i < f.U.rows(); ++i) {
      const double u = f.U(i, j);
      if (u != 0.0) {
        if (u < 0.0) {
          f.U.col(j) = -f.U.col(j);
          f.V.col(j) = -f.V.col(j);
        }
        break;
      }
    }
  }
  return f;
}

// svt(Q, tau) = U * soft(K, tau) * V^T
inline Matrix svt_from_factors(const SvdFactors& f, double tau) {
  require_nonneg(tau, "svt");
  Vector k(f.K.size());
  for (Eigen::Index i = 0; i < k.size(); ++i) k[i] = std::max(f.K[i] - tau, 0.0);
  // Drop the zeroed tail so the reconstruction cost tracks the surviving rank.
  Eigen::Index r = 0;
  while (r < k.size() && k[r] > 0.0) ++r;
  if (r == 0) return Matrix::Zero(f.U.rows(), f.V.rows());
  return f.U.leftCols(r) * k.head(r).asDiagonal() * f.V.leftCols(r).transpose();
}

inline Matrix svt(const Matrix& q, double tau) {
  require_nonneg(tau, "svt");
  if (tau == 0.0) {
    require_finite(q, "svt");
    return q;
  }
  return svt_from_factors(svd(q), tau);
}

inline double nuclear_norm(const Matrix& q) { return svd(q).K.sum(); }

inline double l1_norm(const Matrix& q) {
  require_finite(q, "l1_norm");
  return q.cwiseAbs().sum();
}

inline double frobenius_norm(const Matrix& q) {
  require_finite(q, "frobenius_norm");
  return std::sqrt(q.squaredNorm());
}

}  // namespace lsprox
