#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "drlqr/lqr.hpp"
#include "drlqr/rng.hpp"
#include "testing_util.hpp"

using namespace drlqr;

namespace {

LinearSystem scalar_system(double a, double b) {
  return LinearSystem((Matrix(1, 1) << a).finished(), (Matrix(1, 1) << b).finished());
}

LinearSystem pendulum_m1_l1() {
  Matrix a(2, 2), b(2, 1);
  a << 1.0, 0.01, 0.1, 1.0;
  b << 0.0, 0.01;
  return LinearSystem(a, b);
}

// Random stabilizing gain near the optimum: K* plus a perturbation shrunk
// until the closed loop stays stable.
Gain perturbed_gain(const LinearSystem& sys, const CostSpec& cost, rng::Stream& s,
                    double scale = 0.5) {
  const Gain k_opt = dare(sys, cost).k_opt;
  Matrix delta = testutil::random_matrix(s, static_cast<int>(sys.input_dim()),
                                         static_cast<int>(sys.state_dim()), scale);
  Gain k(k_opt.k + delta);
  for (int tries = 0; tries < 60 && !is_stabilizing(k, sys); ++tries) {
    delta *= 0.5;
    k = Gain(k_opt.k + delta);
  }
  REQUIRE(is_stabilizing(k, sys));
  return k;
}

}  // namespace

TEST_CASE("lqr_cost scalar geometric series") {
  const auto sys = scalar_system(0.5, 1.0);
  CHECK(lqr_cost(Gain::zero(1, 1), sys, CostSpec::identity(1, 1)) ==
        Catch::Approx(4.0 / 3.0).margin(1e-12));
}

TEST_CASE("lqr_cost at the Riccati gain equals trace of the Riccati solution") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    const DareSolution sol = dare(inst.sys, inst.cost);
    CHECK(lqr_cost(sol.k_opt, inst.sys, inst.cost) ==
          Catch::Approx(sol.p.trace()).epsilon(1e-9));
  }
}

TEST_CASE("lqr_cost matches a Monte-Carlo rollout on the pendulum") {
  const auto sys = pendulum_m1_l1();
  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(sys, cost).k_opt;
  const double j = lqr_cost(k, sys, cost);

  // Time-average of x^T (Q + K^T R K) x over fixed-seed noisy trajectories of
  // 1e5 steps each; the closed loop is strongly autocorrelated, so an
  // ensemble of rollouts is needed to push the Monte-Carlo error below 1%.
  const Matrix a_cl = sys.a + sys.b * k.k;
  const Matrix q_k = cost.q() + k.k.transpose() * cost.r() * k.k;
  const int t_steps = 100000;
  const int n_rollouts = 20;
  double acc = 0.0;
  for (int rollout_id = 0; rollout_id < n_rollouts; ++rollout_id) {
    rng::Stream noise(20240601, rollout_id);
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    for (int t = 0; t < t_steps; ++t) {
      acc += x.dot(q_k * x);
      x = a_cl * x + Eigen::Vector2d(noise.next_normal(), noise.next_normal());
    }
  }
  const double rollout = acc / (static_cast<double>(t_steps) * n_rollouts);
  CHECK(std::abs(rollout - j) / j < 0.01);
}

TEST_CASE("lqr_cost throws a typed instability error") {
  const auto sys = pendulum_m1_l1();
  CHECK_THROWS_AS(lqr_cost(Gain::zero(1, 2), sys, CostSpec::identity(2, 1)), InstabilityError);
}

TEST_CASE("lqr_eval scalar quantities derived by hand") {
  const auto sys = scalar_system(0.5, 1.0);
  const LqrEval eval = lqr_eval(Gain::zero(1, 1), sys, CostSpec::identity(1, 1));
  CHECK(eval.p_k(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
  CHECK(eval.sigma_k(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
  // E_K = 2((R + b^2 P) K + b P a) = 2 * (4/3) * 0.5 = 4/3; grad = E Sigma.
  CHECK(eval.e_k(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
  CHECK(eval.gradient(0, 0) == Catch::Approx(16.0 / 9.0).margin(1e-10));
}

TEST_CASE("gradient vanishes at the Riccati optimum") {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    const DareSolution sol = dare(inst.sys, inst.cost);
    const LqrEval eval = lqr_eval(sol.k_opt, inst.sys, inst.cost);
    CHECK(eval.gradient.norm() <= 1e-8 * std::max(1.0, eval.cost));
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 30; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    rng::Stream s(seed, 99);
    const Gain k = perturbed_gain(inst.sys, inst.cost, s);
    const LqrEval eval = lqr_eval(k, inst.sys, inst.cost);
    const Matrix fd = testutil::finite_difference_gradient(
        [&](const Gain& g) { return lqr_cost(g, inst.sys, inst.cost); }, k);
    CHECK(testutil::relative_error(eval.gradient, fd) <= 1e-5);
    ++checked;
  }
}

TEST_CASE("cost bounds: ||K||^2 <= ||P_K|| <= J and ||Sigma_K|| <= J") {
  for (std::uint64_t seed = 40; seed < 90; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    rng::Stream s(seed, 5);
    const Gain k = perturbed_gain(inst.sys, inst.cost, s, 1.0);
    const LqrEval eval = lqr_eval(k, inst.sys, inst.cost);
    const double k_norm = operator_norm(k.k);
    const double p_norm = operator_norm(eval.p_k);
    const double tol = 1e-9 * std::max(1.0, eval.cost);
    CHECK(k_norm * k_norm <= p_norm + tol);
    CHECK(p_norm <= eval.cost + tol);
    CHECK(operator_norm(eval.sigma_k) <= eval.cost + tol);
    // With Q >= I and Sigma_w = I the cost is at least d_x.
    CHECK(eval.cost >= static_cast<double>(inst.sys.state_dim()) - 1e-9);
  }
}

TEST_CASE("gradient domination at the optimum is tight") {
  const auto sys = scalar_system(0.5, 1.0);
  const CostSpec cost = CostSpec::identity(1, 1);
  const Gain k_opt = dare(sys, cost).k_opt;
  const GradDominationGap gap = grad_domination_gap(k_opt, sys, cost);
  CHECK(std::abs(gap.lhs) <= 1e-10);
  CHECK(std::abs(gap.rhs) <= 1e-10);
}

TEST_CASE("gradient domination on the scalar example") {
  const auto sys = scalar_system(0.5, 1.0);
  const CostSpec cost = CostSpec::identity(1, 1);
  const GradDominationGap gap = grad_domination_gap(Gain::zero(1, 1), sys, cost);
  const double p_opt = (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0;
  CHECK(gap.lhs == Catch::Approx(4.0 / 3.0 - p_opt).margin(1e-9));
  CHECK(gap.lhs <= gap.rhs);
}

TEST_CASE("gradient domination holds on random instances") {
  for (std::uint64_t seed = 200; seed < 300; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    rng::Stream s(seed, 6);
    const Gain k = perturbed_gain(inst.sys, inst.cost, s, 1.0);
    const GradDominationGap gap = grad_domination_gap(k, inst.sys, inst.cost);
    CHECK(gap.lhs <= gap.rhs + 1e-9 * std::max(1.0, gap.rhs));
  }
}

TEST_CASE("CostSpec normalization reduces general costs to the canonical form") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    rng::Stream s(seed, 42);
    const int dx = 2 + static_cast<int>(s.next_word() % 2);
    const int du = 1 + static_cast<int>(s.next_word() % 2);
    Matrix gq = testutil::random_matrix(s, dx, dx);
    Matrix gr = testutil::random_matrix(s, du, du);
    Matrix gs = testutil::random_matrix(s, dx, dx);
    const Matrix q_raw = 0.2 * Matrix::Identity(dx, dx) + gq * gq.transpose();
    const Matrix r_raw = 0.5 * Matrix::Identity(du, du) + gr * gr.transpose();
    const Matrix sigma_raw = 0.3 * Matrix::Identity(dx, dx) + gs * gs.transpose();
    const CostSpec cost(q_raw, r_raw, sigma_raw);

    // Normalized invariants: Q >= I (lambda_min = 1), R = I, Sigma_w = I.
    Eigen::SelfAdjointEigenSolver<Matrix> es(cost.q());
    CHECK(es.eigenvalues().minCoeff() == Catch::Approx(1.0).margin(1e-10));
    CHECK(cost.r().isIdentity(1e-14));
    CHECK(cost.sigma_w().isIdentity(1e-14));

    // Raw-coordinates oracle: P = dlyap(A + B K, Q + K^T R K), J = tr(P Sigma).
    const Matrix a = testutil::random_a_with_radius(s, dx, 0.7);
    const Matrix b = testutil::random_matrix(s, dx, du);
    const LinearSystem sys_raw(a, b);
    const Gain k_raw = Gain::zero(du, dx);
    const Matrix p_raw = dlyap(a, q_raw).value;
    const double j_raw = (p_raw * sigma_raw).trace();

    const LinearSystem sys_n = cost.normalize_system(sys_raw);
    const Gain k_n = cost.normalize_gain(k_raw);
    CHECK(is_stabilizing(k_n, sys_n) == is_stabilizing(k_raw, sys_raw));
    const double j_n = lqr_cost(k_n, sys_n, cost);
    CHECK(cost.cost_scale() * j_n == Catch::Approx(j_raw).epsilon(1e-8));

    // Gain maps are inverse to each other.
    CHECK((cost.denormalize_gain(k_n).k - k_raw.k).norm() <= 1e-12);
  }
}

TEST_CASE("CostSpec rejects indefinite or asymmetric inputs") {
  Matrix q(2, 2);
  q << 1.0, 2.0, 2.0, 1.0;  // symmetric, indefinite
  CHECK_THROWS_AS(CostSpec(q, Matrix::Identity(1, 1), Matrix::Identity(2, 2)), DomainError);
  Matrix asym(2, 2);
  asym << 1.0, 0.3, 0.0, 1.0;
  CHECK_THROWS_AS(CostSpec(asym, Matrix::Identity(1, 1), Matrix::Identity(2, 2)), DomainError);
}
