#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <stdexcept>

#include "radmm/forward_model.hpp"

namespace radmm {

/// Magnitude shrinkage: out_i = v_i * max(1 - kappa/|v_i|, 0), with zeros
/// mapped to zero. Shrinks the modulus, keeps the phase.
inline CVector soft_threshold(const CVector& v, double kappa) {
  if (!(kappa >= 0.0))
    throw std::invalid_argument("soft_threshold: kappa must be >= 0");
  CVector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v[i]);
    out[i] = mag > kappa ? v[i] * (1.0 - kappa / mag) : Complex{0.0, 0.0};
  }
  return out;
}

/// Cholesky factorization of (mu * A^H A + beta * I), sized to one sensor's
/// active pixel set. The matrix is Hermitian positive definite for any
/// beta > 0, so LLT cannot fail on finite input. Rebuilt only when the
/// active set changes; between changes every solve reuses the same factor
/// and is bitwise reproducible.
class LocalSolveCache {
 public:
  LocalSolveCache() = default;

  LocalSolveCache(const CMatrix& a_hat, double mu, double beta) {
    if (!(mu > 0.0)) throw std::invalid_argument("factorize: mu must be > 0");
    if (!(beta > 0.0)) throw std::invalid_argument("factorize: beta must be > 0");
    if (!a_hat.allFinite())
      throw std::invalid_argument("factorize: matrix has non-finite entries");
    CMatrix gram = mu * (a_hat.adjoint() * a_hat);
    gram.diagonal().array() += beta;
    llt_.compute(gram);
    if (llt_.info() != Eigen::Success)
      throw std::runtime_error("factorize: Cholesky failed");
    size_ = a_hat.cols();
  }

  CVector solve(const CVector& rhs) const {
    if (rhs.size() != size_)
      throw std::invalid_argument("solve_local: rhs size does not match active set");
    return llt_.solve(rhs);
  }

  Eigen::Index size() const { return size_; }

 private:
  Eigen::LLT<CMatrix> llt_;
  Eigen::Index size_ = 0;
};

inline LocalSolveCache factorize(const CMatrix& a_hat, double mu, double beta) {
  return LocalSolveCache(a_hat, mu, beta);
}

inline CVector solve_local(const LocalSolveCache& cache, const CVector& rhs) {
  return cache.solve(rhs);
}

}  // namespace radmm
