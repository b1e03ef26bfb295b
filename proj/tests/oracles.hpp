#pragma once

// Reference implementations used only by tests. Written straight-line with
// Eigen's own solvers and hand-rolled scalar loops, sharing no code with the
// library under test.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

namespace oracles {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline CVec shrink(const CVec& v, double kappa) {
  CVec out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v[i]);
    out[i] = mag > kappa ? v[i] * ((mag - kappa) / mag)
                         : std::complex<double>{0.0, 0.0};
  }
  return out;
}

struct ReferenceRun {
  int iterations = 0;
  bool converged = false;
  CVec x_global;
};

/// Plain sharing-form solver: synchronous sweep against the iteration-k
/// aggregate, threshold, dual step, stopping rule. No caching, no screening,
/// LU solves instead of Cholesky.
inline ReferenceRun reference_sharing_solver(
    const std::vector<CMat>& ops, const std::vector<CVec>& ys, double mu,
    double lambda, double beta, double eps_abs, double eps_rel, int max_iter) {
  const int q_count = static_cast<int>(ops.size());
  const Eigen::Index n = ops[0].cols();
  std::vector<CVec> x(q_count, CVec::Zero(n));
  CVec x_g = CVec::Zero(n);
  CVec sigma = CVec::Zero(n);
  bool has_prev = false;
  ReferenceRun out;
  for (int k = 1; k <= max_iter; ++k) {
    CVec s_prev = CVec::Zero(n);
    for (const CVec& xq : x) s_prev += xq;
    s_prev /= static_cast<double>(q_count);
    std::vector<CVec> next(q_count);
    for (int q = 0; q < q_count; ++q) {
      CMat sys = mu * (ops[q].adjoint() * ops[q]);
      sys.diagonal().array() += beta;
      const CVec rhs = mu * (ops[q].adjoint() * ys[q]) +
                       beta * (x_g - s_prev) + beta * x[q] - sigma;
      next[q] = sys.partialPivLu().solve(rhs);
    }
    x = std::move(next);
    CVec s = CVec::Zero(n);
    for (const CVec& xq : x) s += xq;
    s /= static_cast<double>(q_count);
    const CVec x_g_prev = x_g;
    x_g = shrink(s + sigma / beta, lambda / beta);
    const double pri = (s - x_g).norm();
    const double dual = beta * (x_g - x_g_prev).norm();
    sigma += beta * (s - x_g);
    const double root_n = std::sqrt(static_cast<double>(n));
    const double eps_pri =
        root_n * eps_abs + eps_rel * std::max(s.norm(), x_g.norm());
    const double eps_dual = root_n * eps_abs + eps_rel * sigma.norm();
    out.iterations = k;
    if (has_prev && pri <= eps_pri && dual <= eps_dual) {
      out.converged = true;
      break;
    }
    has_prev = true;
  }
  out.x_global = x_g;
  return out;
}

inline double block_objective(const std::vector<CMat>& ops,
                              const std::vector<CVec>& ys,
                              const std::vector<CVec>& x, double mu,
                              double lambda) {
  double f = 0.0;
  CVec total = CVec::Zero(ops[0].cols());
  for (std::size_t q = 0; q < ops.size(); ++q) {
    f += 0.5 * mu * (ys[q] - ops[q] * x[q]).squaredNorm();
    total += x[q];
  }
  for (Eigen::Index i = 0; i < total.size(); ++i) f += lambda * std::abs(total[i]);
  return f;
}

/// Long-run proximal gradient on
///   F(x_1..x_Q) = sum_q (mu/2) |y_q - A_q x_q|^2 + lambda * |sum_q x_q|_1.
/// The coupling operator B, stacking identities so that B x = sum_q x_q,
/// satisfies B B^H = Q I, which gives the prox of the composed l1 term in
/// closed form: each block moves by (shrink(u) - u)/Q where u = sum_q v_q.
inline double prox_gradient_objective(const std::vector<CMat>& ops,
                                      const std::vector<CVec>& ys, double mu,
                                      double lambda, int iterations) {
  const int q_count = static_cast<int>(ops.size());
  const Eigen::Index n = ops[0].cols();
  double lip = 0.0;
  for (const CMat& a : ops) {
    Eigen::SelfAdjointEigenSolver<CMat> eig(a.adjoint() * a);
    lip = std::max(lip, mu * eig.eigenvalues().maxCoeff());
  }
  const double gamma = 1.0 / lip;
  std::vector<CVec> x(q_count, CVec::Zero(n));
  std::vector<CVec> v(q_count);
  for (int it = 0; it < iterations; ++it) {
    for (int q = 0; q < q_count; ++q)
      v[q] = x[q] - gamma * (mu * (ops[q].adjoint() * (ops[q] * x[q] - ys[q])));
    CVec u = CVec::Zero(n);
    for (const CVec& vq : v) u += vq;
    const CVec w = shrink(u, gamma * q_count * lambda);
    for (int q = 0; q < q_count; ++q)
      x[q] = v[q] + (w - u) / static_cast<double>(q_count);
  }
  return block_objective(ops, ys, x, mu, lambda);
}

}  // namespace oracles
