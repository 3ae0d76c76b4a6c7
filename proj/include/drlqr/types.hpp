#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "drlqr/errors.hpp"

namespace drlqr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw DomainError(std::string(what) + ": entries must be finite");
  }
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

// Largest singular value (spectral norm).
inline double operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  if (m.size() == 1) return std::abs(m(0, 0));
  return m.jacobiSvd().singularValues()(0);
}

// Plant for one parameter draw: x+ = A x + B u + w.
struct LinearSystem {
  Matrix a;  // d_x x d_x
  Matrix b;  // d_x x d_u

  LinearSystem() = default;
  LinearSystem(Matrix a_in, Matrix b_in) : a(std::move(a_in)), b(std::move(b_in)) {
    require_square(a, "LinearSystem.a");
    require_finite(a, "LinearSystem.a");
    require_finite(b, "LinearSystem.b");
    if (b.rows() != a.rows() || b.cols() == 0) {
      throw DimensionError("LinearSystem: B must be d_x x d_u with d_x matching A, got " +
                           std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
  }

  Eigen::Index state_dim() const { return a.rows(); }
  Eigen::Index input_dim() const { return b.cols(); }
};

// Static feedback u = K x.
struct Gain {
  Matrix k;  // d_u x d_x

  Gain() = default;
  explicit Gain(Matrix k_in) : k(std::move(k_in)) { require_finite(k, "Gain.k"); }

  static Gain zero(Eigen::Index du, Eigen::Index dx) { return Gain(Matrix::Zero(du, dx)); }
};

// Quadratic objective (Q, R, Sigma_w), stored in normalized form: the
// constructor reduces arbitrary positive-definite inputs to the canonical
// problem with Sigma_w = I, R = I, Q >= I by
//   - a state similarity x~ = Sigma_w^{-1/2} x (whitens the noise),
//   - an input scaling u~ = R^{1/2} u (unit input cost),
//   - a cost rescale by 1/lambda_min of the transformed Q, re-absorbed into
//     the input coordinates so R stays I.
// Normalized costs relate to raw costs by J_raw = cost_scale() * J. The
// transformation happens once at ingestion; all library operations consume
// normalized systems and gains (see normalize_system / normalize_gain).
class CostSpec {
 public:
  CostSpec(const Matrix& q_raw, const Matrix& r_raw, const Matrix& sigma_w_raw) {
    require_square(q_raw, "CostSpec.q");
    require_square(r_raw, "CostSpec.r");
    require_square(sigma_w_raw, "CostSpec.sigma_w");
    require_finite(q_raw, "CostSpec.q");
    require_finite(r_raw, "CostSpec.r");
    require_finite(sigma_w_raw, "CostSpec.sigma_w");
    if (!is_symmetric(q_raw) || !is_symmetric(r_raw) || !is_symmetric(sigma_w_raw)) {
      throw DomainError("CostSpec: Q, R, Sigma_w must be symmetric");
    }
    const Eigen::Index dx = q_raw.rows();
    const Eigen::Index du = r_raw.rows();
    if (sigma_w_raw.rows() != dx) {
      throw DimensionError("CostSpec: Sigma_w must match Q dimension");
    }

    const Matrix idx = Matrix::Identity(dx, dx);
    const Matrix idu = Matrix::Identity(du, du);
    identity_ = q_raw.isApprox(idx, 0.0) && r_raw.isApprox(idu, 0.0) &&
                sigma_w_raw.isApprox(idx, 0.0);
    if (identity_) {
      q_ = idx;
      state_map_ = idx;
      state_map_inv_ = idx;
      input_map_ = idu;
      input_map_inv_ = idu;
      cost_scale_ = 1.0;
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es_sigma(sigma_w_raw);
      if (es_sigma.eigenvalues().minCoeff() <= 0.0) {
        throw DomainError("CostSpec: Sigma_w must be positive definite");
      }
      Eigen::SelfAdjointEigenSolver<Matrix> es_r(r_raw);
      if (es_r.eigenvalues().minCoeff() <= 0.0) {
        throw DomainError("CostSpec: R must be positive definite");
      }
      const Matrix t = es_sigma.operatorSqrt();               // Sigma_w^{1/2}
      const Matrix t_inv = es_sigma.operatorInverseSqrt();    // Sigma_w^{-1/2}
      const Matrix r_inv_sqrt = es_r.operatorInverseSqrt();   // R^{-1/2}
      const Matrix r_sqrt = es_r.operatorSqrt();

      Matrix q1 = t * q_raw * t;
      q1 = 0.5 * (q1 + q1.transpose());
      Eigen::SelfAdjointEigenSolver<Matrix> es_q(q1);
      const double s = es_q.eigenvalues().minCoeff();
      if (s <= 0.0) {
        throw DomainError("CostSpec: Q must be positive definite");
      }
      cost_scale_ = s;
      q_ = q1 / s;
      q_ = 0.5 * (q_ + q_.transpose());
      state_map_ = t;
      state_map_inv_ = t_inv;
      input_map_ = std::sqrt(s) * r_inv_sqrt;  // u = input_map * u_normalized
      input_map_inv_ = r_sqrt / std::sqrt(s);
    }
    r_ = idu;
    sigma_w_ = idx;
  }

  static CostSpec identity(Eigen::Index dx, Eigen::Index du) {
    return CostSpec(Matrix::Identity(dx, dx), Matrix::Identity(du, du), Matrix::Identity(dx, dx));
  }

  // Normalized data: q() >= I, r() = I, sigma_w() = I.
  const Matrix& q() const { return q_; }
  const Matrix& r() const { return r_; }
  const Matrix& sigma_w() const { return sigma_w_; }
  Eigen::Index state_dim() const { return q_.rows(); }
  Eigen::Index input_dim() const { return r_.rows(); }

  double cost_scale() const { return cost_scale_; }
  bool is_identity_transform() const { return identity_; }

  // Map a raw plant into normalized coordinates: A -> T^{-1} A T,
  // B -> T^{-1} B M_u with T = Sigma_w^{1/2}, M_u = sqrt(s) R^{-1/2}.
  LinearSystem normalize_system(const LinearSystem& sys) const {
    if (identity_) return sys;
    return LinearSystem(state_map_inv_ * sys.a * state_map_, state_map_inv_ * sys.b * input_map_);
  }

  // Gains transform as K_normalized = M_u^{-1} K T; the closed loop
  // A + B K is similar before and after, so stability is preserved.
  Gain normalize_gain(const Gain& k) const {
    if (identity_) return k;
    return Gain(input_map_inv_ * k.k * state_map_);
  }

  Gain denormalize_gain(const Gain& k) const {
    if (identity_) return k;
    return Gain(input_map_ * k.k * state_map_inv_);
  }

 private:
  Matrix q_, r_, sigma_w_;
  Matrix state_map_, state_map_inv_;
  Matrix input_map_, input_map_inv_;
  double cost_scale_ = 1.0;
  bool identity_ = true;
};

}  // namespace drlqr
