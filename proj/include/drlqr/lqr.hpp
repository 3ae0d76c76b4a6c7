#pragma once

#include <string>

#include "drlqr/control_core.hpp"
#include "drlqr/types.hpp"

// Single-system LQR quantities for a stabilizing gain K:
//   P_K     = dlyap(A + B K, Q + K^T R K)   (transpose-outside orientation)
//   Sigma_K = dlyap(A + B K, Sigma_w)       (adjoint orientation)
//   E_K     = 2 ((R + B^T P_K B) K + B^T P_K A)
//   J       = trace(P_K Sigma_w),  grad_K J = E_K Sigma_K.
// The factor of two on the B^T P_K A term makes the analytic gradient equal
// the true derivative of J; the finite-difference tests pin this down.

namespace drlqr {

struct LqrEval {
  double cost = 0.0;
  Matrix p_k;
  Matrix sigma_k;
  Matrix e_k;
  Matrix gradient;  // d_u x d_x, = e_k * sigma_k
};

namespace detail {

inline void require_stabilizing(const Gain& k, const LinearSystem& sys, const char* op) {
  const double rho = closed_loop_radius(k, sys);
  if (rho >= 1.0 - kStabilityMargin) {
    throw InstabilityError(std::string(op) + ": gain does not stabilize the system (rho = " +
                               std::to_string(rho) + "), cost is infinite",
                           rho);
  }
}

}  // namespace detail

inline double lqr_cost(const Gain& k, const LinearSystem& sys, const CostSpec& cost) {
  detail::require_stabilizing(k, sys, "lqr_cost");
  const Matrix a_cl = sys.a + sys.b * k.k;
  const Matrix q_k = cost.q() + k.k.transpose() * cost.r() * k.k;
  const Matrix p = dlyap(a_cl, q_k, LyapunovForm::TransposeOutside).value;
  return (p * cost.sigma_w()).trace();
}

inline LqrEval lqr_eval(const Gain& k, const LinearSystem& sys, const CostSpec& cost) {
  detail::require_stabilizing(k, sys, "lqr_eval");
  const Matrix a_cl = sys.a + sys.b * k.k;
  const Matrix q_k = cost.q() + k.k.transpose() * cost.r() * k.k;

  LqrEval eval;
  eval.p_k = dlyap(a_cl, q_k, LyapunovForm::TransposeOutside).value;
  eval.sigma_k = dlyap(a_cl, cost.sigma_w(), LyapunovForm::Adjoint).value;
  eval.cost = (eval.p_k * cost.sigma_w()).trace();
  const Matrix btp = sys.b.transpose() * eval.p_k;
  eval.e_k = 2.0 * ((cost.r() + btp * sys.b) * k.k + btp * sys.a);
  eval.gradient = eval.e_k * eval.sigma_k;
  return eval;
}

struct GradDominationGap {
  double lhs = 0.0;  // J(K) - J(K*)
  double rhs = 0.0;  // ||Sigma_{K*}|| * ||grad J(K)||_F^2
};

// Single-system gradient domination diagnostic:
//   J(K) - J(K*) <= ||Sigma_{K*}|| ||grad_K J(K)||_F^2.
// Used as a property-test oracle, not inside the optimizer.
inline GradDominationGap grad_domination_gap(const Gain& k, const LinearSystem& sys,
                                             const CostSpec& cost) {
  const LqrEval at_k = lqr_eval(k, sys, cost);
  const DareSolution opt = dare(sys, cost);
  const Matrix a_cl_opt = sys.a + sys.b * opt.k_opt.k;
  const Matrix sigma_opt = dlyap(a_cl_opt, cost.sigma_w(), LyapunovForm::Adjoint).value;

  GradDominationGap gap;
  gap.lhs = at_k.cost - (opt.p * cost.sigma_w()).trace();
  gap.rhs = operator_norm(sigma_opt) * at_k.gradient.squaredNorm();
  return gap;
}

}  // namespace drlqr
