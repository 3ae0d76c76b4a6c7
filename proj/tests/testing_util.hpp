#pragma once

// Shared helpers for the test suites: reproducible random instances and
// independent oracles (vectorized Lyapunov solve, characteristic-polynomial
// eigenvalues, finite differences). Oracles here must stay independent of the
// library implementation paths they check.

#include <cmath>
#include <complex>
#include <vector>

#include "drlqr/control_core.hpp"
#include "drlqr/lqr.hpp"
#include "drlqr/rng.hpp"
#include "drlqr/types.hpp"

namespace testutil {

using drlqr::CostSpec;
using drlqr::Gain;
using drlqr::LinearSystem;
using drlqr::Matrix;

inline Matrix random_matrix(drlqr::rng::Stream& s, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * (2.0 * s.next_uniform01() - 1.0);
  return m;
}

// Random A rescaled to spectral radius `rho` (rho < 1 makes K = 0 admissible).
inline Matrix random_a_with_radius(drlqr::rng::Stream& s, int n, double rho) {
  Matrix a = random_matrix(s, n, n);
  const double r = drlqr::spectral_radius(a);
  if (r > 0.0) a *= rho / r;
  return a;
}

struct RandomInstance {
  LinearSystem sys;
  CostSpec cost;
  Gain k0;
};

// Open-loop-stable instance with identity cost; K = 0 is stabilizing.
inline RandomInstance random_stable_instance(std::uint64_t seed, int max_dx = 4) {
  drlqr::rng::Stream s(seed, 0);
  const int dx = 1 + static_cast<int>(s.next_word() % max_dx);
  const int du = 1 + static_cast<int>(s.next_word() % 2);
  const double rho = 0.3 + 0.6 * s.next_uniform01();
  Matrix a = random_a_with_radius(s, dx, rho);
  Matrix b = random_matrix(s, dx, du);
  return {LinearSystem(a, b), CostSpec::identity(dx, du), Gain::zero(du, dx)};
}

// ---------------------------------------------------------------------------
// Oracle: direct vectorized solve of P = A^T P A + Q. The n^2 unknowns P(r,c)
// satisfy (A^T P A)(r,c) - P(r,c) = -Q(r,c); assemble the linear system
// entrywise and solve with a full-pivot factorization.
inline Matrix dlyap_vectorized_oracle(const Matrix& a, const Matrix& q) {
  const int n = static_cast<int>(a.rows());
  Matrix lhs = Matrix::Zero(n * n, n * n);
  Eigen::VectorXd rhs(n * n);
  auto idx = [n](int r, int c) { return r * n + c; };
  // (A^T P A)(r,c) = sum_{i,j} A(i,r) P(i,j) A(j,c)
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) lhs(idx(r, c), idx(i, j)) += a(i, r) * a(j, c);
      lhs(idx(r, c), idx(r, c)) -= 1.0;
      rhs(idx(r, c)) = -q(r, c);
    }
  }
  Eigen::VectorXd p_vec = lhs.fullPivLu().solve(rhs);
  Matrix p(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) p(r, c) = p_vec(idx(r, c));
  return p;
}

// ---------------------------------------------------------------------------
// Oracle: eigenvalue moduli from the characteristic polynomial, roots via
// Durand-Kerner on the monic coefficients. Supports n = 2, 3.
inline double spectral_radius_charpoly_oracle(const Matrix& m) {
  const int n = static_cast<int>(m.rows());
  std::vector<std::complex<double>> coeffs;  // monic: z^n + c[0] z^{n-1} + ...
  if (n == 2) {
    coeffs = {-m.trace(), m.determinant()};
  } else if (n == 3) {
    const double tr = m.trace();
    const double sum2 = 0.5 * (tr * tr - (m * m).trace());  // sum of 2x2 principal minors
    coeffs = {-tr, sum2, -m.determinant()};
  } else {
    throw std::logic_error("charpoly oracle supports n = 2, 3 only");
  }
  std::vector<std::complex<double>> roots(n);
  for (int i = 0; i < n; ++i) roots[i] = std::pow(std::complex<double>(0.4, 0.9), i + 1);
  auto eval = [&](std::complex<double> z) {
    std::complex<double> v = 1.0;
    for (const auto& c : coeffs) v = v * z + c;
    return v;
  };
  for (int iter = 0; iter < 500; ++iter) {
    double moved = 0.0;
    for (int i = 0; i < n; ++i) {
      std::complex<double> denom = 1.0;
      for (int j = 0; j < n; ++j)
        if (j != i) denom *= roots[i] - roots[j];
      const std::complex<double> delta = eval(roots[i]) / denom;
      roots[i] -= delta;
      moved = std::max(moved, std::abs(delta));
    }
    if (moved < 1e-14) break;
  }
  double r = 0.0;
  for (const auto& z : roots) r = std::max(r, std::abs(z));
  return r;
}

// ---------------------------------------------------------------------------
// Oracle: central finite differences of a scalar function of the gain.
template <typename F>
inline Matrix finite_difference_gradient(const F& f, const Gain& k, double h = 1e-6) {
  Matrix g(k.k.rows(), k.k.cols());
  for (Eigen::Index i = 0; i < k.k.rows(); ++i) {
    for (Eigen::Index j = 0; j < k.k.cols(); ++j) {
      const double step = h * std::max(1.0, std::abs(k.k(i, j)));
      Gain kp = k, km = k;
      kp.k(i, j) += step;
      km.k(i, j) -= step;
      g(i, j) = (f(kp) - f(km)) / (2.0 * step);
    }
  }
  return g;
}

inline double relative_error(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

}  // namespace testutil
