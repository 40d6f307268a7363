#include <catch2/catch_amalgamated.hpp>

#include "dgpfm/quadrature.hpp"

using namespace dgpfm;
using Catch::Approx;

namespace {

double integrate(const Rule1D& r, const std::function<double(double)>& f) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.nodes.size(); ++i) s += r.weights(i) * f(r.nodes(i));
  return s;
}

}  // namespace

TEST_CASE("gauss-legendre closed forms for tiny rules", "[quadrature]") {
  Rule1D r1 = gauss_legendre(1, -1.0, 1.0);
  REQUIRE(r1.nodes.size() == 1);
  CHECK(r1.nodes(0) == Approx(0.0).margin(1e-15));
  CHECK(r1.weights(0) == Approx(2.0).epsilon(1e-14));

  Rule1D r2 = gauss_legendre(2, -1.0, 1.0);
  const double root = 1.0 / std::sqrt(3.0);
  CHECK(r2.nodes(0) == Approx(-root).epsilon(1e-14));
  CHECK(r2.nodes(1) == Approx(root).epsilon(1e-14));
  CHECK(r2.weights(0) == Approx(1.0).epsilon(1e-14));
  CHECK(r2.weights(1) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("gauss-legendre integrates high-degree monomials exactly", "[quadrature]") {
  // n = 5 handles degree 8 (2n-1 = 9).
  Rule1D r = gauss_legendre(5, -1.0, 1.0);
  CHECK(std::abs(integrate(r, [](double x) { return std::pow(x, 8); }) - 2.0 / 9.0) < 1e-14);

  // Exactness for every degree up to 2n-1, n <= 12.
  for (int n = 1; n <= 12; ++n) {
    Rule1D rn = gauss_legendre(n, -1.0, 1.0);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      const double exact = (deg % 2 == 1) ? 0.0 : 2.0 / (deg + 1);
      const double got = integrate(rn, [&](double x) { return std::pow(x, deg); });
      CHECK(std::abs(got - exact) < 1e-12);
    }
  }
}

TEST_CASE("rule invariants: weight sums, ordering, bounds, positivity", "[quadrature]") {
  for (int n : {1, 2, 3, 8, 12, 33}) {
    Rule1D g = gauss_legendre(n, 0.25, 1.75);
    CHECK(g.weights.sum() == Approx(1.5).epsilon(1e-12));
    CHECK(g.weights.minCoeff() > 0.0);
    for (Eigen::Index i = 0; i + 1 < g.nodes.size(); ++i) CHECK(g.nodes(i) < g.nodes(i + 1));
    CHECK(g.nodes.minCoeff() >= 0.25);
    CHECK(g.nodes.maxCoeff() <= 1.75);
  }
  for (int n : {2, 3, 9, 64}) {
    Rule1D t = trapezoidal(n, 0.0, 2.0);
    CHECK(t.weights.sum() == Approx(2.0).epsilon(1e-12));
    CHECK(t.weights.minCoeff() >= 0.0);
  }
}

TEST_CASE("trapezoid rule closed forms", "[quadrature]") {
  Rule1D r2 = trapezoidal(2, 0.0, 1.0);
  CHECK(integrate(r2, [](double) { return 1.0; }) == Approx(1.0).epsilon(1e-14));

  Rule1D r3 = trapezoidal(3, 0.0, 2.0);
  CHECK(r3.weights(0) == Approx(0.5).epsilon(1e-14));
  CHECK(r3.weights(1) == Approx(1.0).epsilon(1e-14));
  CHECK(r3.weights(2) == Approx(0.5).epsilon(1e-14));
  CHECK(integrate(r3, [](double x) { return x; }) == Approx(2.0).epsilon(1e-14));
}

TEST_CASE("trapezoid error shrinks at second order on sin", "[quadrature]") {
  // Error about x4 per node doubling; observed log2 slope at least 1.9.
  const double exact = 2.0;  // integral of sin over [0, pi]
  double prev = 0.0;
  std::vector<double> errs;
  for (int n : {17, 33, 65}) {
    Rule1D r = trapezoidal(n, 0.0, kPi);
    errs.push_back(std::abs(integrate(r, [](double x) { return std::sin(x); }) - exact));
  }
  for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
    const double order = std::log2(errs[i] / errs[i + 1]);
    CHECK(order >= 1.9);
    CHECK(order <= 2.3);
  }
  (void)prev;
}

TEST_CASE("constructor argument validation", "[quadrature]") {
  CHECK_THROWS_AS(gauss_legendre(0, 0.0, 1.0), unsupported_grid);
  CHECK_THROWS_AS(gauss_legendre(4, 1.0, 1.0), unsupported_grid);
  CHECK_THROWS_AS(gauss_legendre(4, 2.0, 1.0), unsupported_grid);
  CHECK_THROWS_AS(trapezoidal(1, 0.0, 1.0), unsupported_grid);
  CHECK_THROWS_AS(tensor_grid(std::vector<Rule1D>{}), unsupported_grid);
}

TEST_CASE("tensor grids take weight products in row-major order", "[quadrature]") {
  SECTION("one dimension reproduces the rule") {
    Rule1D r = gauss_legendre(7, 0.0, 1.0);
    ProjectionGrid g = tensor_grid({r});
    REQUIRE(g.count() == 7);
    CHECK((g.nodes.col(0) - r.nodes).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.weights - r.weights).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("two 2-point trapezoid rules give four nodes of weight 1/4") {
    Rule1D r = trapezoidal(2, 0.0, 1.0);
    ProjectionGrid g = tensor_grid({r, r});
    REQUIRE(g.count() == 4);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(g.weights(i) == Approx(0.25).epsilon(1e-14));
    // Row-major: the last dimension varies fastest.
    CHECK(g.nodes(0, 0) == 0.0);
    CHECK(g.nodes(0, 1) == 0.0);
    CHECK(g.nodes(1, 0) == 0.0);
    CHECK(g.nodes(1, 1) == 1.0);
    CHECK(g.nodes(2, 0) == 1.0);
    CHECK(g.nodes(2, 1) == 0.0);
  }

  SECTION("node counts multiply") {
    ProjectionGrid g = tensor_grid({gauss_legendre(3, 0, 1), gauss_legendre(4, 0, 1)});
    CHECK(g.count() == 12);
    CHECK(g.dim() == 2);
  }

  SECTION("weight at a multi-index is the product of per-dimension weights") {
    Rule1D a = gauss_legendre(3, 0.0, 1.0), b = trapezoidal(4, 0.0, 1.0);
    ProjectionGrid g = tensor_grid({a, b});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(g.weights(i * 4 + j) == Approx(a.weights(i) * b.weights(j)).epsilon(1e-14));
  }

  SECTION("equispaced flag") {
    CHECK(tensor_grid({trapezoidal(5, 0, 1), trapezoidal(3, 0, 1)}).equispaced);
    CHECK_FALSE(tensor_grid({gauss_legendre(5, 0, 1)}).equispaced);
  }
}

TEST_CASE("separable integrands factor over tensor grids", "[quadrature]") {
  Rule1D rx = gauss_legendre(9, 0.0, 1.0), ry = gauss_legendre(11, 0.0, 1.0);
  ProjectionGrid g = tensor_grid({rx, ry});
  auto f = [](double x) { return std::exp(x); };
  auto h = [](double y) { return std::cos(y); };
  double joint = 0.0;
  for (Eigen::Index i = 0; i < g.count(); ++i)
    joint += g.weights(i) * f(g.nodes(i, 0)) * h(g.nodes(i, 1));
  const double product = integrate(rx, f) * integrate(ry, h);
  CHECK(std::abs(joint - product) < 1e-12);
}

TEST_CASE("gauss-legendre converges spectrally on smooth functions", "[quadrature]") {
  const double exact = std::exp(1.0) - 1.0;
  double err8 = std::abs(integrate(gauss_legendre(8, 0, 1),
                                   [](double x) { return std::exp(x); }) - exact);
  CHECK(err8 < 1e-14);
}
