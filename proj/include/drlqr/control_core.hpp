#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "drlqr/errors.hpp"
#include "drlqr/types.hpp"

// Dense kernels for small control problems: spectral radius, discrete
// Lyapunov solves (both orientations), the discrete algebraic Riccati
// equation, and stability predicates. Everything here is a pure function of
// its inputs and freely shareable across threads.

namespace drlqr {

// Strict margin for stability predicates; marginal eigenvalues make the
// infinite-horizon cost blow up, so rho < 1 - margin is required.
inline constexpr double kStabilityMargin = 1e-9;
inline constexpr double kDlyapTol = 1e-9;
inline constexpr double kDareStepTol = 1e-12;
inline constexpr int kDareMaxIters = 100000;

// max |lambda_i(m)|. Closed form up to 2x2, Schur-based otherwise.
inline double spectral_radius(const Matrix& m) {
  require_square(m, "spectral_radius");
  require_finite(m, "spectral_radius");
  const Eigen::Index n = m.rows();
  if (n == 1) return std::abs(m(0, 0));
  if (n == 2) {
    const double tr = m(0, 0) + m(1, 1);
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double disc = tr * tr - 4.0 * det;
    if (disc >= 0.0) {
      const double root = std::sqrt(disc);
      return std::max(std::abs(0.5 * (tr + root)), std::abs(0.5 * (tr - root)));
    }
    return std::sqrt(det);  // complex pair: |lambda|^2 = det
  }
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw ConvergenceError("spectral_radius: eigenvalue iteration failed", 0.0);
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Which discrete Lyapunov equation to solve.
//   TransposeOutside:  P = A^T P A + Q   (cost matrices P_K)
//   Adjoint:           P = A P A^T + Q   (state covariances Sigma_K)
enum class LyapunovForm { TransposeOutside, Adjoint };

struct SolveReport {
  Matrix value;
  double residual_norm = 0.0;
  int iterations_used = 0;
};

namespace detail {

// Direct solve of P = M^T P M + Q via vectorization:
// (I - kron(M^T, M^T)) vec(P) = vec(Q), column-major vec.
inline Matrix dlyap_kron(const Matrix& m, const Matrix& q) {
  const Eigen::Index n = m.rows();
  const Matrix mt = m.transpose();
  Matrix lhs = Matrix::Identity(n * n, n * n);
  for (Eigen::Index bi = 0; bi < n; ++bi) {
    for (Eigen::Index bj = 0; bj < n; ++bj) {
      lhs.block(bi * n, bj * n, n, n) -= mt(bi, bj) * mt;
    }
  }
  const Eigen::Map<const Vector> q_vec(q.data(), n * n);
  Vector p_vec = lhs.partialPivLu().solve(q_vec);
  return Eigen::Map<Matrix>(p_vec.data(), n, n);
}

// Squaring iteration for larger systems:
//   Q <- A^T Q A + Q,  A <- A^2, converges quadratically for rho(A) < 1.
inline Matrix dlyap_doubling(Matrix a, Matrix q, int* iterations) {
  constexpr int kMaxDoublings = 200;
  for (int it = 1; it <= kMaxDoublings; ++it) {
    const Matrix q_next = a.transpose() * q * a + q;
    const double step = (q_next - q).norm();
    q = q_next;
    a = (a * a).eval();
    if (step <= 1e-14 * std::max(1.0, q.norm())) {
      *iterations = it;
      return q;
    }
  }
  *iterations = kMaxDoublings;
  return q;
}

}  // namespace detail

// Solve the discrete Lyapunov equation in the requested orientation.
// Preconditions: rho(a) < 1 - margin, q symmetric. Dimensions <= 8 use the
// exact vectorized solve, larger ones the doubling iteration.
inline SolveReport dlyap(const Matrix& a, const Matrix& q,
                         LyapunovForm form = LyapunovForm::TransposeOutside,
                         double tol = kDlyapTol) {
  require_square(a, "dlyap.a");
  require_finite(a, "dlyap.a");
  require_square(q, "dlyap.q");
  require_finite(q, "dlyap.q");
  if (a.rows() != q.rows()) {
    throw DimensionError("dlyap: A and Q must have matching dimensions");
  }
  if (!is_symmetric(q)) {
    throw DomainError("dlyap: Q must be symmetric");
  }
  const double rho = spectral_radius(a);
  if (rho >= 1.0 - kStabilityMargin) {
    throw InstabilityError("dlyap: spectral radius " + std::to_string(rho) +
                               " >= 1, equation has no PSD solution",
                           rho);
  }

  // Both orientations reduce to P = M^T P M + Q with M = a or a^T.
  const Matrix m = (form == LyapunovForm::TransposeOutside) ? a : Matrix(a.transpose());

  SolveReport report;
  if (a.rows() <= 8) {
    report.value = detail::dlyap_kron(m, q);
    report.iterations_used = 1;
  } else {
    report.value = detail::dlyap_doubling(m, q, &report.iterations_used);
  }
  report.value = 0.5 * (report.value + report.value.transpose()).eval();

  report.residual_norm = (m.transpose() * report.value * m - report.value + q).norm();
  if (report.residual_norm > tol * std::max(1.0, q.norm())) {
    throw ConvergenceError("dlyap: residual " + std::to_string(report.residual_norm) +
                               " exceeds tolerance",
                           report.residual_norm);
  }
  return report;
}

struct DareSolution {
  Matrix p;
  Gain k_opt;
  double residual_norm = 0.0;
  int iterations_used = 0;
};

// Stabilizing solution of the discrete algebraic Riccati equation by the
// fixed-point recursion P <- Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A
// from P_0 = Q. Gain convention: u = K x, closed loop A + B K, so
// k_opt = -(R + B^T P B)^{-1} B^T P A.
inline DareSolution dare(const LinearSystem& sys, const CostSpec& cost) {
  const Matrix& a = sys.a;
  const Matrix& b = sys.b;
  const Matrix& q = cost.q();
  const Matrix& r = cost.r();
  if (q.rows() != a.rows() || r.rows() != b.cols()) {
    throw DimensionError("dare: cost dimensions do not match the system");
  }

  Matrix p = q;
  int iters = 0;
  double step = 0.0;
  for (; iters < kDareMaxIters; ++iters) {
    const Matrix btp = b.transpose() * p;
    const Matrix gram = r + btp * b;
    const Matrix k = gram.ldlt().solve(btp * a);  // = (R + B^T P B)^{-1} B^T P A
    Matrix p_next = q + a.transpose() * p * a - (btp * a).transpose() * k;
    p_next = 0.5 * (p_next + p_next.transpose()).eval();
    step = (p_next - p).norm();
    p = p_next;
    // 1e-12 absolute, with a floor at the double-precision resolution of P.
    if (step <= std::max(kDareStepTol, 4.0 * 2.220446049250313e-16 * p.norm())) {
      ++iters;
      break;
    }
  }
  if (iters >= kDareMaxIters) {
    throw ConvergenceError("dare: no convergence after " + std::to_string(kDareMaxIters) +
                               " iterations (step " + std::to_string(step) + ")",
                           step);
  }

  const Matrix btp = b.transpose() * p;
  const Matrix gram = r + btp * b;
  DareSolution sol;
  sol.p = p;
  sol.k_opt = Gain(-gram.ldlt().solve(btp * a));
  sol.iterations_used = iters;
  sol.residual_norm =
      (q + a.transpose() * p * a - (btp * a).transpose() * gram.ldlt().solve(btp * a) - p).norm();

  const double rho_cl = spectral_radius(a + b * sol.k_opt.k);
  if (rho_cl >= 1.0 - kStabilityMargin) {
    throw ConvergenceError("dare: fixed point reached but the gain is not stabilizing (rho = " +
                               std::to_string(rho_cl) + "); system may not be stabilizable",
                           sol.residual_norm);
  }
  return sol;
}

inline double closed_loop_radius(const Gain& k, const LinearSystem& sys) {
  if (k.k.rows() != sys.input_dim() || k.k.cols() != sys.state_dim()) {
    throw DimensionError("gain/system dimension mismatch: K is " + std::to_string(k.k.rows()) +
                         "x" + std::to_string(k.k.cols()));
  }
  return spectral_radius(sys.a + sys.b * k.k);
}

// rho(A + B K) < 1 with a strict margin.
inline bool is_stabilizing(const Gain& k, const LinearSystem& sys) {
  return closed_loop_radius(k, sys) < 1.0 - kStabilityMargin;
}

}  // namespace drlqr
