#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "drlqr/domain.hpp"
#include "drlqr/serialize.hpp"
#include "testing_util.hpp"

using namespace drlqr;

namespace {

ParamDistribution paper_box() {
  return ParamDistribution(Vector::Constant(2, 0.75), Vector::Constant(2, 1.25));
}

ParamDistribution narrow_box() {  // tight enough that one nominal gain stabilizes all draws
  return ParamDistribution(Vector::Constant(2, 0.95), Vector::Constant(2, 1.05));
}

ParamDistribution point_mass(double m, double l) {
  Vector v(2);
  v << m, l;
  return ParamDistribution(v, v);
}

}  // namespace

TEST_CASE("counter rng reproduces the canonical splitmix64 sequence") {
  // Reference outputs of splitmix64 started at state 0.
  CHECK(rng::nth_word(0, 0) == 0xe220a8397b1dcdafULL);
  CHECK(rng::nth_word(0, 1) == 0x6e789e6aa1b965f4ULL);
  CHECK(rng::nth_word(0, 2) == 0x06c45d188009454fULL);
  // Counter access agrees with sequential streaming.
  rng::Stream s(0xe220a8397b1dcdafULL);
  for (std::uint64_t i = 0; i < 10; ++i) {
    CHECK(s.next_word() == rng::nth_word(0xe220a8397b1dcdafULL, i));
  }
  const double u = rng::uniform01(rng::nth_word(7, 3));
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
}

TEST_CASE("pendulum family matches the stated discretization") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  Vector theta(2);
  theta << 1.0, 1.0;
  const LinearSystem sys = fam.map(theta);
  Matrix a_expected(2, 2), b_expected(2, 1);
  a_expected << 1.0, 0.01, 0.1, 1.0;
  b_expected << 0.0, 0.01;
  CHECK((sys.a - a_expected).norm() == 0.0);
  CHECK((sys.b - b_expected).norm() == 0.0);
  // Open loop is unstable: eigenvalues 1 +- sqrt(g dt^2 / l).
  CHECK(spectral_radius(sys.a) == Catch::Approx(1.0 + std::sqrt(0.001)).margin(1e-12));

  // Zero step degenerates to A = I, B = 0.
  const LinearSystem frozen = pendulum_family(0.0, 10.0).map(theta);
  CHECK(frozen.a.isIdentity(0.0));
  CHECK(frozen.b.isZero(0.0));

  theta << -1.0, 1.0;
  CHECK_THROWS_AS(fam.map(theta), DomainError);
  CHECK_THROWS_AS(pendulum_family(0.01, -1.0), DomainError);
}

TEST_CASE("draw_samples is deterministic and respects the box") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set1 = draw_samples(fam, paper_box(), 500, 42);
  const auto set2 = draw_samples(fam, paper_box(), 500, 42);
  REQUIRE(set1.size() == 500);
  for (int i = 0; i < set1.size(); ++i) {
    CHECK(set1.params[i] == set2.params[i]);  // bit-identical
    CHECK(set1.systems[i].a == set2.systems[i].a);
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(set1.params[i](j) >= 0.75);
      CHECK(set1.params[i](j) <= 1.25);
    }
  }
  CHECK(set1.het > 0.0);
  CHECK(set1.tau_b >= 1.0);

  const auto different = draw_samples(fam, paper_box(), 500, 43);
  CHECK(different.params[0] != set1.params[0]);
}

TEST_CASE("point-mass distribution produces identical systems with zero heterogeneity") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, point_mass(1.0, 1.0), 10, 7);
  CHECK(set.het == 0.0);
  for (const auto& sys : set.systems) {
    CHECK(sys.a == set.systems[0].a);
    CHECK(sys.b == set.systems[0].b);
  }
}

TEST_CASE("sample_avg_cost over identical systems equals the single-system cost") {
  LinearSystem sys((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  const CostSpec cost = CostSpec::identity(1, 1);
  const auto set = make_sample_set({sys, sys, sys});
  const Gain k = Gain::zero(1, 1);
  CHECK(sample_avg_cost(k, set, cost) == Catch::Approx(lqr_cost(k, sys, cost)).margin(1e-14));
}

TEST_CASE("sample_avg_cost on two hand-solved scalar systems") {
  // a in {0.4, 0.5}, b = 1, K = 0: (1/(1-0.16) + 1/(1-0.25)) / 2.
  LinearSystem s1((Matrix(1, 1) << 0.4).finished(), (Matrix(1, 1) << 1.0).finished());
  LinearSystem s2((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  const auto set = make_sample_set({s1, s2});
  const double expected = 0.5 * (1.0 / 0.84 + 4.0 / 3.0);
  CHECK(sample_avg_cost(Gain::zero(1, 1), set, CostSpec::identity(1, 1)) ==
        Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("sample average dominates max over M") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, narrow_box(), 20, 3);
  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(set.systems[0], cost).k_opt;  // stabilizes nearby systems too
  const AvgEval eval = sample_avg_eval(k, set, cost);
  double max_cost = 0.0;
  for (double c : eval.per_system_cost) max_cost = std::max(max_cost, c);
  CHECK(eval.cost >= max_cost / set.size());
}

TEST_CASE("sample_avg_cost identifies the first non-stabilized system") {
  LinearSystem stable((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  LinearSystem unstable((Matrix(1, 1) << 1.5).finished(), (Matrix(1, 1) << 1.0).finished());
  const auto set = make_sample_set({stable, unstable, unstable});
  try {
    sample_avg_cost(Gain::zero(1, 1), set, CostSpec::identity(1, 1));
    FAIL("expected InstabilityError");
  } catch (const InstabilityError& e) {
    CHECK(e.system_index() == 1);
  }
}

TEST_CASE("sample_avg_gradient equals the mean of per-system gradients bitwise") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, narrow_box(), 7, 11);
  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(set.systems[3], cost).k_opt;

  Matrix sum = Matrix::Zero(1, 2);
  for (const auto& sys : set.systems) sum += lqr_eval(k, sys, cost).gradient;
  const Matrix manual = sum / static_cast<double>(set.size());
  CHECK(sample_avg_gradient(k, set, cost) == manual);
}

TEST_CASE("sample_avg_gradient matches finite differences of sample_avg_cost") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, narrow_box(), 5, 2);
  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(set.systems[0], cost).k_opt;
  const Matrix grad = sample_avg_gradient(k, set, cost);
  const Matrix fd = testutil::finite_difference_gradient(
      [&](const Gain& g) { return sample_avg_cost(g, set, cost); }, k);
  CHECK(testutil::relative_error(grad, fd) <= 1e-5);
}

TEST_CASE("J_SA is linear under concatenation of sample sets") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set_a = draw_samples(fam, narrow_box(), 6, 5);
  const auto set_b = draw_samples(fam, narrow_box(), 10, 6);
  std::vector<LinearSystem> all = set_a.systems;
  all.insert(all.end(), set_b.systems.begin(), set_b.systems.end());
  const auto set_ab = make_sample_set(all);

  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(set_a.systems[0], cost).k_opt;
  const double ja = sample_avg_cost(k, set_a, cost);
  const double jb = sample_avg_cost(k, set_b, cost);
  const double jab = sample_avg_cost(k, set_ab, cost);
  CHECK(jab == Catch::Approx((6.0 * ja + 10.0 * jb) / 16.0).margin(1e-12));
}

TEST_CASE("mc_dr_cost on a point mass reduces to the single-system cost") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const CostSpec cost = CostSpec::identity(2, 1);
  Vector theta(2);
  theta << 1.0, 1.0;
  const Gain k = dare(fam.map(theta), cost).k_opt;
  const McDrResult res = mc_dr_cost(k, fam, point_mass(1.0, 1.0), cost, 100, 9);
  const double j = lqr_cost(k, fam.map(theta), cost);
  CHECK(res.mean == Catch::Approx(j).margin(1e-12));
  CHECK(res.max_cost == Catch::Approx(j).margin(1e-12));
  CHECK(res.halfwidth == Catch::Approx(hoeffding_halfwidth(j, 100, 0.05)).margin(1e-12));
}

TEST_CASE("hoeffding halfwidth shrinks by sqrt(2) when n doubles") {
  const double h1 = hoeffding_halfwidth(3.7, 1000, 0.05);
  const double h2 = hoeffding_halfwidth(3.7, 2000, 0.05);
  CHECK(h1 / h2 == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("mc_dr_cost is bit-reproducible and thread-count independent") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const CostSpec cost = CostSpec::identity(2, 1);
  Vector theta(2);
  theta << 1.0, 1.0;
  const Gain k = dare(fam.map(theta), cost).k_opt;
  const McDrResult a = mc_dr_cost(k, fam, narrow_box(), cost, 2000, 17, 0.05, 1);
  const McDrResult b = mc_dr_cost(k, fam, narrow_box(), cost, 2000, 17, 0.05, 4);
  CHECK(a.mean == b.mean);  // bitwise
  CHECK(a.max_cost == b.max_cost);
}

TEST_CASE("mc_dr_cost reports the offending draw on instability") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const CostSpec cost = CostSpec::identity(2, 1);
  CHECK_THROWS_AS(mc_dr_cost(Gain::zero(1, 2), fam, paper_box(), cost, 50, 1),
                  InstabilityError);
}

TEST_CASE("mc_dr_cost reports the a-priori uniform cost bound when given a reference") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const CostSpec cost = CostSpec::identity(2, 1);
  Vector theta(2);
  theta << 1.0, 1.0;
  const Gain k = dare(fam.map(theta), cost).k_opt;
  const McDrResult res = mc_dr_cost(k, fam, point_mass(1.0, 1.0), cost, 50, 3, 0.05, 1, &theta);
  REQUIRE(res.apriori_cost_bound.has_value());
  const double j_ref = dare(fam.map(theta), cost).p.trace();
  CHECK(*res.apriori_cost_bound == Catch::Approx(48.0 * j_ref).epsilon(1e-12));
  CHECK(*res.apriori_halfwidth > res.halfwidth);  // a-priori bound is far looser
}

TEST_CASE("heterogeneity check: identical systems satisfy the bound trivially") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, point_mass(1.0, 1.0), 5, 2);
  const auto report = heterogeneity_check(set, CostSpec::identity(2, 1));
  CHECK(report.het == 0.0);
  CHECK(report.satisfied);
}

TEST_CASE("heterogeneity check: the paper box violates the assumption bound") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, paper_box(), 30, 4);
  const auto report = heterogeneity_check(set, CostSpec::identity(2, 1));
  CHECK_FALSE(report.satisfied);
  CHECK(report.bound < 1e-6);  // astronomically small for the pendulum
}

TEST_CASE("heterogeneity decreases with the box width") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  auto box = [](double half) {
    return ParamDistribution(Vector::Constant(2, 1.0 - half), Vector::Constant(2, 1.0 + half));
  };
  const double het_wide = draw_samples(fam, box(0.25), 40, 8).het;
  const double het_mid = draw_samples(fam, box(0.05), 40, 8).het;
  const double het_narrow = draw_samples(fam, box(0.001), 40, 8).het;
  CHECK(het_wide > het_mid);
  CHECK(het_mid > het_narrow);
  CHECK(het_narrow > 0.0);
}

TEST_CASE("boundedness check: slack = M is always satisfied") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, narrow_box(), 8, 12);
  const CostSpec cost = CostSpec::identity(2, 1);
  const Gain k = dare(set.systems[0], cost).k_opt;
  const double j = sample_avg_cost(k, set, cost);
  const auto report =
      boundedness_check({k}, set, cost, 1e9, static_cast<double>(set.size()), j / 8.0);
  CHECK(report.satisfied);
  CHECK(report.gains_checked == 1);
}

TEST_CASE("boundedness check: identical systems satisfy slack = 1") {
  LinearSystem sys((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  const auto set = make_sample_set({sys, sys, sys, sys});
  const CostSpec cost = CostSpec::identity(1, 1);
  const Gain k = Gain::zero(1, 1);
  const double j = sample_avg_cost(k, set, cost);
  const auto report = boundedness_check({k}, set, cost, 8.0, 1.0, j);
  CHECK(report.satisfied);
}

TEST_CASE("boundedness witness records the first violation") {
  // Two very different scalar systems: the optimal gain for one is costly on
  // the other, so slack = 1 must fail and name the offender.
  LinearSystem cheap((Matrix(1, 1) << 0.1).finished(), (Matrix(1, 1) << 1.0).finished());
  LinearSystem dear((Matrix(1, 1) << 0.9).finished(), (Matrix(1, 1) << 1.0).finished());
  const auto set = make_sample_set({cheap, dear});
  const CostSpec cost = CostSpec::identity(1, 1);
  const Gain k = Gain::zero(1, 1);
  const double j = sample_avg_cost(k, set, cost);
  const auto report = boundedness_check({k}, set, cost, 8.0, 1.0, j);
  CHECK_FALSE(report.satisfied);
  REQUIRE(report.witness.has_value());
  CHECK(report.witness->gain_index == 0);
  CHECK(report.witness->system_index == 1);
  CHECK(report.witness->ratio > 1.0);
}

TEST_CASE("sample set replay round-trips bit-exactly through JSON") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const auto set = draw_samples(fam, paper_box(), 12, 99);
  const Json j = sample_set_to_json(set);
  const SampleSet back = sample_set_from_json(Json::parse(j.dump()));
  REQUIRE(back.size() == set.size());
  CHECK(back.seed == set.seed);
  CHECK(back.het == set.het);
  CHECK(back.tau_b == set.tau_b);
  for (int i = 0; i < set.size(); ++i) {
    CHECK(back.systems[i].a == set.systems[i].a);
    CHECK(back.systems[i].b == set.systems[i].b);
    CHECK(back.params[i] == set.params[i]);
  }
}

TEST_CASE("standard deviation of J_SA scales like 1/sqrt(M)") {
  const SystemFamily fam = pendulum_family(0.01, 10.0);
  const CostSpec cost = CostSpec::identity(2, 1);
  Vector theta(2);
  theta << 1.0, 1.0;
  const Gain k = dare(fam.map(theta), cost).k_opt;

  auto std_across_seeds = [&](int m, std::uint64_t base) {
    const int n_seeds = 200;
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      const auto set = draw_samples(fam, paper_box(), m, rng::substream(base, s));
      const double j = sample_avg_cost(k, set, cost);
      sum += j;
      sum_sq += j * j;
    }
    const double mean = sum / n_seeds;
    return std::sqrt(sum_sq / n_seeds - mean * mean);
  };

  const double ratio = std_across_seeds(100, 1000) / std_across_seeds(400, 2000);
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.5);
}
