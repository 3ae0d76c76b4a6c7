#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "drlqr/control_core.hpp"
#include "testing_util.hpp"

using namespace drlqr;
using testutil::dlyap_vectorized_oracle;
using testutil::spectral_radius_charpoly_oracle;

TEST_CASE("spectral_radius on known matrices") {
  CHECK(spectral_radius(Matrix::Identity(3, 3)) == Catch::Approx(1.0).margin(1e-12));

  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = -0.8;
  CHECK(spectral_radius(d) == Catch::Approx(0.8).margin(1e-12));

  // 0.9 x (rotation by 30 degrees): complex pair of modulus 0.9.
  const double c = std::cos(M_PI / 6.0), s = std::sin(M_PI / 6.0);
  Matrix rot(2, 2);
  rot << c, -s, s, c;
  CHECK(spectral_radius(0.9 * rot) == Catch::Approx(0.9).margin(1e-12));
}

TEST_CASE("spectral_radius rejects non-square input") {
  CHECK_THROWS_AS(spectral_radius(Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("spectral_radius matches characteristic-polynomial roots") {
  for (int n : {2, 3}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      rng::Stream s(seed, n);
      const Matrix m = testutil::random_matrix(s, n, n, 2.0);
      CHECK(spectral_radius(m) ==
            Catch::Approx(spectral_radius_charpoly_oracle(m)).margin(1e-8));
    }
  }
}

TEST_CASE("dlyap scalar cases") {
  Matrix a(1, 1), q(1, 1);
  a << 0.0;
  q << 1.0;
  CHECK(dlyap(a, q).value(0, 0) == Catch::Approx(1.0).margin(1e-12));

  a << 0.5;
  // Geometric series: P = 1 / (1 - 0.25).
  CHECK(dlyap(a, q).value(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
}

TEST_CASE("dlyap matches the vectorized oracle on random stable systems") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    rng::Stream s(seed, 7);
    const int n = 1 + static_cast<int>(s.next_word() % 4);
    const Matrix a = testutil::random_a_with_radius(s, n, 0.3 + 0.6 * s.next_uniform01());
    Matrix g = testutil::random_matrix(s, n, n);
    const Matrix q = Matrix::Identity(n, n) + g * g.transpose();

    const SolveReport report = dlyap(a, q);
    const Matrix expected = dlyap_vectorized_oracle(a, q);
    CHECK((report.value - expected).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(report.residual_norm <= 1e-10 * std::max(1.0, q.norm()));
    CHECK((report.value - report.value.transpose()).norm() <= 1e-12);
  }
}

TEST_CASE("dlyap adjoint orientation solves P = A P A^T + Q") {
  rng::Stream s(3, 1);
  const Matrix a = testutil::random_a_with_radius(s, 3, 0.8);
  const Matrix q = Matrix::Identity(3, 3);
  const Matrix p = dlyap(a, q, LyapunovForm::Adjoint).value;
  CHECK((a * p * a.transpose() - p + q).norm() <= 1e-10);
  // Equivalent to the transpose-outside form on A^T.
  const Matrix p2 = dlyap(a.transpose(), q, LyapunovForm::TransposeOutside).value;
  CHECK((p - p2).norm() <= 1e-12);
}

TEST_CASE("dlyap uses the doubling path above dimension 8") {
  rng::Stream s(11, 2);
  const int n = 10;
  const Matrix a = testutil::random_a_with_radius(s, n, 0.85);
  const Matrix q = Matrix::Identity(n, n);
  const SolveReport report = dlyap(a, q);
  CHECK(report.iterations_used > 1);
  const Matrix expected = dlyap_vectorized_oracle(a, q);
  CHECK((report.value - expected).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("dlyap rejects unstable A with a typed error") {
  Matrix a(1, 1), q(1, 1);
  a << 1.0;
  q << 1.0;
  CHECK_THROWS_AS(dlyap(a, q), InstabilityError);
  a << 1.2;
  try {
    dlyap(a, q);
    FAIL("expected InstabilityError");
  } catch (const InstabilityError& e) {
    CHECK(e.spectral_radius() == Catch::Approx(1.2).margin(1e-12));
    CHECK(e.category() == "instability");
  }
}

TEST_CASE("dlyap validates shapes and symmetry") {
  Matrix a = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(dlyap(a, Matrix::Zero(3, 3)), DimensionError);
  Matrix q(2, 2);
  q << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(dlyap(a, q), DomainError);
}

TEST_CASE("dare solves the scalar case derived by hand") {
  // a = 0.5, b = 1, q = r = 1 reduces to P^2 - 0.25 P - 1 = 0.
  LinearSystem sys((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  const CostSpec cost = CostSpec::identity(1, 1);
  const DareSolution sol = dare(sys, cost);

  const double p_expected = (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0;
  const double k_expected = -0.5 * p_expected / (1.0 + p_expected);
  CHECK(sol.p(0, 0) == Catch::Approx(p_expected).margin(1e-9));
  CHECK(sol.k_opt.k(0, 0) == Catch::Approx(k_expected).margin(1e-9));
  CHECK(sol.residual_norm <= 1e-9);
  CHECK(is_stabilizing(sol.k_opt, sys));
}

TEST_CASE("dare with no control authority reduces to dlyap") {
  LinearSystem sys((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 0.0).finished());
  const DareSolution sol = dare(sys, CostSpec::identity(1, 1));
  CHECK(sol.p(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-9));
  CHECK(sol.k_opt.k(0, 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("dare stabilizes the linearized pendulum") {
  Matrix a(2, 2), b(2, 1);
  a << 1.0, 0.01, 0.1, 1.0;
  b << 0.0, 0.01;
  LinearSystem sys(a, b);
  REQUIRE(spectral_radius(a) > 1.0);  // open loop unstable
  const DareSolution sol = dare(sys, CostSpec::identity(2, 1));
  CHECK(spectral_radius(a + b * sol.k_opt.k) < 1.0);
  CHECK(sol.residual_norm <= 1e-9 * std::max(1.0, sol.p.norm()));
}

TEST_CASE("dare residuals stay small on random stable instances") {
  for (std::uint64_t seed = 100; seed < 150; ++seed) {
    const auto inst = testutil::random_stable_instance(seed);
    const DareSolution sol = dare(inst.sys, inst.cost);
    CHECK(sol.residual_norm <= 1e-9 * std::max(1.0, sol.p.norm()));
    CHECK(is_stabilizing(sol.k_opt, inst.sys));
  }
}

TEST_CASE("is_stabilizing predicate") {
  LinearSystem stable((Matrix(1, 1) << 0.5).finished(), (Matrix(1, 1) << 1.0).finished());
  CHECK(is_stabilizing(Gain::zero(1, 1), stable));

  Matrix a(2, 2), b(2, 1);
  a << 1.0, 0.01, 0.1, 1.0;
  b << 0.0, 0.01;
  LinearSystem pendulum(a, b);
  CHECK_FALSE(is_stabilizing(Gain::zero(1, 2), pendulum));
  // Open-loop radius is exactly 1 + sqrt(g dt^2 / l).
  CHECK(spectral_radius(a) == Catch::Approx(1.0 + std::sqrt(0.001)).margin(1e-12));

  CHECK_THROWS_AS(is_stabilizing(Gain::zero(2, 2), pendulum), DimensionError);
}
