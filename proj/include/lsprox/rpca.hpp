#pragma once

#include <stdexcept>
#include <vector>

#include "lsprox/matrix.hpp"
#include "lsprox/prox_ops.hpp"

namespace lsprox::rpca {

struct RpcaConfig {
  double lambda_star = 1.0;   // weight of ||L||_*
  double lambda_1 = 5e-3;     // weight of ||S||_1
  double alpha = 0.5;         // step size, must satisfy 0 < alpha <= 1/2
  int max_iter = 10000;
  double tol = 1e-6;          // relative combined-change stopping threshold

  void validate() const {
    if (!(lambda_star > 0.0) || !(lambda_1 > 0.0))
      throw std::invalid_argument("RpcaConfig: lambda_star and lambda_1 must be > 0");
    // The forward operator [I, I] has largest singular value sqrt(2), so the
    // descent guarantee needs alpha <= 1/2.
    if (!(alpha > 0.0) || !(alpha <= 0.5))
      throw std::invalid_argument("RpcaConfig: alpha must lie in (0, 0.5]");
    if (max_iter < 1) throw std::invalid_argument("RpcaConfig: max_iter must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("RpcaConfig: tol must be > 0");
  }
};

struct LSDecomposition {
  Matrix L;
  Matrix S;
  int iterations_run = 0;
  std::vector<double> objective_history;  // entry 0 is the value at L = S = 0
  bool converged = false;
};

// 1/2 ||D - (L+S)||_F^2 + lambda_star ||L||_* + lambda_1 ||S||_1
inline double objective(const Matrix& d, const Matrix& l, const Matrix& s,
                        double lambda_star, double lambda_1) {
  require_finite(d, "rpca::objective");
  require_same_shape(d, l, "rpca::objective");
  require_same_shape(d, s, "rpca::objective");
  const double fit = 0.5 * (d - l - s).squaredNorm();
  return fit + lambda_star * nuclear_norm(l) + lambda_1 * l1_norm(s);
}

// Proximal forward-backward splitting on the stacked variable (L, S).
// Both blocks step from the same previous iterate:
//   L <- svt(L + alpha (D - L - S), alpha lambda_star)
//   S <- soft(S + alpha (D - L - S), alpha lambda_1)
inline LSDecomposition decompose(const Matrix& d, const RpcaConfig& cfg) {
  cfg.validate();
  require_finite(d, "rpca::decompose");

  LSDecomposition out;
  out.L = Matrix::Zero(d.rows(), d.cols());
  out.S = Matrix::Zero(d.rows(), d.cols());
  out.objective_history.reserve(static_cast<std::size_t>(cfg.max_iter) + 1);
  out.objective_history.push_back(objective(d, out.L, out.S, cfg.lambda_star, cfg.lambda_1));

  const double d_norm = frobenius_norm(d);
  for (int k = 1; k <= cfg.max_iter; ++k) {
    const Matrix residual = d - out.L - out.S;
    Matrix l_next = svt(out.L + cfg.alpha * residual, cfg.alpha * cfg.lambda_star);
    Matrix s_next = soft_matrix(out.S + cfg.alpha * residual, cfg.alpha * cfg.lambda_1);
    const double step = (l_next - out.L).norm() + (s_next - out.S).norm();
    out.L = std::move(l_next);
    out.S = std::move(s_next);
    out.iterations_run = k;
    out.objective_history.push_back(objective(d, out.L, out.S, cfg.lambda_star, cfg.lambda_1));
    if (step <= cfg.tol * (1.0 + d_norm)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace lsprox::rpca
