#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lsprox {

// Column-major dense matrix; column j holds the j-th frame/data vector.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x))
    throw std::invalid_argument(std::string(what) + ": non-finite value");
}

inline void require_finite(const Matrix& q, const char* what) {
  if (q.rows() < 1 || q.cols() < 1)
    throw std::invalid_argument(std::string(what) + ": empty matrix");
  if (!q.allFinite())
    throw std::invalid_argument(std::string(what) + ": matrix has non-finite entries");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

inline void require_nonneg(double tau, const char* what) {
  if (!(tau >= 0.0) || !std::isfinite(tau))
    throw std::invalid_argument(std::string(what) + ": threshold must be finite and >= 0");
}

}  // namespace lsprox
