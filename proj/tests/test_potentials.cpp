/// @file test_potentials.cpp
/// @brief Double-well potentials and the Yosida regularization machinery.

#include <catch2/catch_amalgamated.hpp>

#include <chb/potentials.hpp>

#include <cmath>
#include <vector>

#include "oracle.hpp"

using namespace chb;
using Catch::Approx;

namespace {

std::vector<double> sample_grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (double s = lo; s <= hi + 0.5 * step; s += step) g.push_back(s);
  return g;
}

RegularizedPotential unit_well(double delta) {
  return RegularizedPotential::make(SmoothPotential::polynomial(1.0, 1.0), delta);
}

}  // namespace

// ============================================================================
// smooth potential family
// ============================================================================

TEST_CASE("polynomial well: values, derivatives, and minimal shift", "[potentials]") {
  const auto p = SmoothPotential::polynomial(2.0, 1.5);
  REQUIRE(p.convexity_shift == Approx(2.0 * 1.5 * 1.5));
  REQUIRE(p.value(1.5) == 0.0);
  REQUIRE(p.value(0.0) == Approx(0.25 * 2.0 * std::pow(1.5, 4)));
  REQUIRE(p.first_derivative(0.0) == 0.0);
  for (double s : sample_grid(-4.0, 4.0, 0.05)) {
    REQUIRE(p.value(s) >= 0.0);
    // analytic derivatives against central differences of the value
    REQUIRE(p.first_derivative(s) ==
            Approx(oracle::fd_derivative(p.value, s)).margin(2e-6));
    REQUIRE(p.second_derivative(s) ==
            Approx(oracle::fd_derivative(p.first_derivative, s)).margin(2e-6));
    // the shifted well is convex
    REQUIRE(p.second_derivative(s) + p.convexity_shift >= 0.0);
  }
}

TEST_CASE("polynomial well: growth bounds with a constant derived from the parameters",
          "[potentials]") {
  const double alpha = 1.3, beta = 1.1, R = 4.0;
  const auto p = SmoothPotential::polynomial(alpha, beta);
  // on [-R, R]: |F'| <= alpha R (R^2 + beta^2), |F''| <= alpha (3R^2 + beta^2); and
  // 1 + F >= 1, so this constant witnesses |F'|, |F''| <= C (1 + F)
  const double C = std::max(alpha * R * (R * R + beta * beta),
                            alpha * (3.0 * R * R + beta * beta));
  for (double s : sample_grid(-R, R, 0.01)) {
    REQUIRE(std::abs(p.first_derivative(s)) <= C * (1.0 + p.value(s)));
    REQUIRE(std::abs(p.second_derivative(s)) <= C * (1.0 + p.value(s)));
  }
}

TEST_CASE("polynomial well rejects invalid parameters", "[potentials]") {
  REQUIRE_THROWS_AS(SmoothPotential::polynomial(0.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(SmoothPotential::polynomial(1.0, -1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(SmoothPotential::polynomial(1.0, 1.0, 0.5), std::invalid_argument);
  REQUIRE_NOTHROW(SmoothPotential::polynomial(1.0, 1.0, 2.0));
  REQUIRE_THROWS_AS(
      RegularizedPotential::make(SmoothPotential::polynomial(1.0, 1.0), 1.5),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      RegularizedPotential::make(SmoothPotential::polynomial(1.0, 1.0), 0.0),
      std::invalid_argument);
}

// ============================================================================
// resolvent
// ============================================================================

TEST_CASE("resolvent: fixed point at zero and the analytic cubic root", "[potentials]") {
  for (double d : {0.5, 0.1, 0.01}) {
    REQUIRE(resolvent(0.0, unit_well(d)) == Approx(0.0).margin(1e-12));
  }
  // alpha = beta = 1 makes the shifted derivative x^3; with delta ~1 and s = 2
  // the equation x + x^3 = 2 has the exact root x = 1.
  auto pot = unit_well(0.999999999);
  pot.delta = 1.0 - 1e-15;  // delta must stay inside (0,1); this is as close as it gets
  REQUIRE(resolvent(2.0, pot) == Approx(1.0).margin(1e-9));
}

TEST_CASE("resolvent matches the bisection oracle on a grid", "[potentials]") {
  for (double d : {0.5, 0.1, 0.01}) {
    const auto pot = unit_well(d);
    for (double s = -3.0; s <= 3.0; s += 0.125) {
      const double mine = resolvent(s, pot);
      const double ref = oracle::bisect_increasing_root(
          s, d, [](double x) { return x * x * x; });
      REQUIRE(mine == Approx(ref).margin(1e-12));
      // residual really is below tolerance
      REQUIRE(std::abs(mine + d * pot.shifted_derivative(mine) - s) <= 1e-12);
    }
  }
}

TEST_CASE("resolvent is nonexpansive", "[potentials]") {
  for (double d : {0.5, 0.01}) {
    const auto pot = unit_well(d);
    for (double s = -3.0; s <= 3.0; s += 0.37)
      for (double t = -3.0; t <= 3.0; t += 0.41) {
        const double js = resolvent(s, pot), jt = resolvent(t, pot);
        REQUIRE(std::abs(js - jt) <= std::abs(s - t) + 1e-11);
      }
  }
}

TEST_CASE("resolvent reports a non-monotone potential", "[potentials]") {
  SmoothPotential bad;
  bad.value = [](double s) { return std::cos(s); };
  bad.first_derivative = [](double s) { return -std::sin(s); };
  bad.second_derivative = [](double s) { return -std::cos(s); };
  bad.convexity_shift = 0.0;  // wrong on purpose: F'' dips to -1
  RegularizedPotential pot;
  pot.base = bad;
  pot.delta = 0.9;
  // the map x + 0.9*(-sin x) is still increasing, so craft a truly decreasing one
  bad.first_derivative = [](double s) { return -3.0 * s; };
  pot.base = bad;
  REQUIRE_THROWS_AS(resolvent(1.0, pot), std::runtime_error);
}

// ============================================================================
// Yosida derivative and value
// ============================================================================

TEST_CASE("yosida_derivative: zero at zero, analytic case, and delta ladder",
          "[potentials]") {
  for (double d : {0.5, 0.1, 0.01})
    REQUIRE(yosida_derivative(0.0, unit_well(d)) == Approx(0.0).margin(1e-10));

  // with x + x^3 = 2 solved by x = 1: A = (2-1)/1 = 1, F'_d(2) = 1 - 1*2 = -1
  auto pot = unit_well(0.5);
  pot.delta = 1.0 - 1e-15;
  REQUIRE(yosida_derivative(2.0, pot) == Approx(-1.0).margin(1e-9));
  REQUIRE(std::abs(-1.0) <= std::abs(pot.base.first_derivative(2.0)));  // = 6

  // |F'_d(2)| increases monotonically toward |F'(2)| = 6 as delta shrinks
  double prev = -1.0;
  for (double d : {1.0 - 1e-15, 0.1, 0.01, 0.001}) {
    auto q = unit_well(0.5);
    q.delta = d;
    const double v = std::abs(yosida_derivative(2.0, q));
    REQUIRE(v >= prev - 1e-10);
    REQUIRE(v <= 6.0 + 1e-8);
    prev = v;
  }
  REQUIRE(prev == Approx(6.0).epsilon(0.02));
}

TEST_CASE("monotone approximation of the derivative on the whole grid", "[potentials]") {
  // The ladder is monotone in the senses that actually hold pointwise:
  //  (a) |A_d(s)| is nondecreasing as d decreases and bounded by |Ft'(s)|
  //      (classical property of the shifted, convex picture);
  //  (b) the signed value A_d(s) - c s approaches F'(s) one-sidedly: from
  //      below for s >= 0 and from above for s <= 0, so the error
  //      |F'_d(s) - F'(s)| is nonincreasing along the ladder.
  // Note |F'_d(s)| itself is NOT monotone in d wherever F'_d changes sign
  // along the ladder (e.g. s slightly outside the well), so that stronger
  // phrasing is not assertable.
  const auto grid = sample_grid(-4.0, 4.0, 0.01);
  const auto base = SmoothPotential::polynomial(1.0, 1.0);
  std::vector<double> prev_shift(grid.size(), -1.0);
  std::vector<double> prev_err(grid.size(), 1e300);
  for (double d : {0.5, 0.1, 0.01}) {
    const auto pot = RegularizedPotential::make(base, d);
    for (size_t i = 0; i < grid.size(); ++i) {
      const double s = grid[i];
      const double fpd = yosida_derivative(s, pot);
      const double a = fpd + base.convexity_shift * s;  // A_d(s)
      const double av = std::abs(a);
      REQUIRE(av >= prev_shift[i] - 1e-9);
      REQUIRE(av <= std::abs(pot.shifted_derivative(s)) + 1e-9);
      prev_shift[i] = av;

      const double err = std::abs(fpd - base.first_derivative(s));
      REQUIRE(err <= prev_err[i] + 1e-9);
      prev_err[i] = err;
      // one-sided approach
      if (s >= 0.0)
        REQUIRE(fpd <= base.first_derivative(s) + 1e-9);
      else
        REQUIRE(fpd >= base.first_derivative(s) - 1e-9);
    }
  }
}

TEST_CASE("yosida_value: exact at zero, sandwich, convergence, growth", "[potentials]") {
  const auto base = SmoothPotential::polynomial(1.0, 1.0);
  const auto grid = sample_grid(-4.0, 4.0, 0.01);

  std::vector<double> prev_err(grid.size(), 1e300);
  for (double d : {0.5, 0.1, 0.01}) {
    const auto pot = RegularizedPotential::make(base, d);
    REQUIRE(yosida_value(0.0, pot) == Approx(base.value(0.0)).margin(1e-10));
    for (size_t i = 0; i < grid.size(); ++i) {
      const double s = grid[i];
      const double j = resolvent(s, pot);
      const double a = (s - j) / d;
      const double shifted = 0.5 * d * a * a + pot.shifted_value(j);
      // P1 identity: F_d(s) + (c/2) s^2 equals the shifted Moreau value
      REQUIRE(yosida_value(s, pot) + 0.5 * base.convexity_shift * s * s ==
              Approx(shifted).margin(1e-9));
      // P3 sandwich for the shifted (convex) potential
      REQUIRE(pot.shifted_value(j) <= shifted + 1e-10);
      REQUIRE(shifted <= pot.shifted_value(s) + 1e-10);
      // P2 pointwise convergence: error to F decreases as delta decreases
      const double err = std::abs(yosida_value(s, pot) - base.value(s));
      REQUIRE(err <= prev_err[i] + 1e-9);
      prev_err[i] = err;
    }
  }

  // quadratic growth at fixed delta: |F_d(s)| <= c_d (1 + s^2) with the
  // Lipschitz constant of F'_d controlling c_d
  const auto pot = RegularizedPotential::make(base, 0.1);
  const double lip = yosida_second_derivative_bound(pot);
  for (double s : {-50.0, -10.0, 10.0, 50.0}) {
    REQUIRE(std::abs(yosida_value(s, pot)) <=
            (std::abs(base.value(0.0)) + lip) * (1.0 + s * s));
  }

  // convergence at the named point: delta -> 0 recovers F(1.5) = 0.390625
  auto fine = RegularizedPotential::make(base, 1e-6 + 1e-18);
  fine.delta = 1e-6;
  REQUIRE(yosida_value(1.5, fine) == Approx(0.390625).margin(1e-3));
}

TEST_CASE("yosida derivative is the gradient of the yosida value", "[potentials]") {
  for (double d : {0.5, 0.1, 0.01}) {
    const auto pot = unit_well(d);
    for (double s = -4.0; s <= 4.0; s += 0.05) {
      const double fd = oracle::fd_derivative(
          [&](double x) { return yosida_value(x, pot); }, s);
      REQUIRE(yosida_derivative(s, pot) == Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("yosida derivative Lipschitz constant stays within 1/delta + shift",
          "[potentials]") {
  for (double d : {0.5, 0.1, 0.01}) {
    const auto pot = unit_well(d);
    const double bound = yosida_second_derivative_bound(pot);
    REQUIRE(bound == Approx(1.0 / d + 1.0));
    double worst = 0.0;
    double sprev = -4.0, vprev = yosida_derivative(-4.0, pot);
    for (double s = -3.99; s <= 4.0; s += 0.01) {
      const double v = yosida_derivative(s, pot);
      worst = std::max(worst, std::abs(v - vprev) / (s - sprev));
      sprev = s;
      vprev = v;
    }
    REQUIRE(worst <= bound * (1.0 + 1e-6));
    // central-difference second derivative never exceeds the bound either
    for (double s = -4.0; s <= 4.0; s += 0.05) {
      const double fpp = oracle::fd_derivative(
          [&](double x) { return yosida_derivative(x, pot); }, s);
      REQUIRE(std::abs(fpp) <= bound * (1.0 + 1e-5) + 1e-5);
    }
  }
}

TEST_CASE("second derivative bound formula", "[potentials]") {
  auto pot = unit_well(0.5);
  REQUIRE(yosida_second_derivative_bound(pot) == Approx(3.0));
  pot.delta = 0.01;
  REQUIRE(yosida_second_derivative_bound(pot) == Approx(101.0));
}

// ============================================================================
// nemytskii
// ============================================================================

TEST_CASE("nemytskii applies pointwise and preserves shape", "[potentials]") {
  VectorXd g(5);
  g << -2.0, -0.5, 0.0, 0.5, 2.0;
  const VectorXd same = nemytskii(g, [](double s) { return s; });
  REQUIRE((same - g).cwiseAbs().maxCoeff() == 0.0);
  const VectorXd c = nemytskii(g, [](double) { return 3.25; });
  REQUIRE((c.array() == 3.25).all());
  REQUIRE(c.size() == g.size());

  const auto pot = unit_well(0.1);
  const VectorXd fp = nemytskii(g, [&](double s) { return yosida_derivative(s, pot); });
  for (int i = 0; i < g.size(); ++i) {
    const double j = oracle::bisect_increasing_root(g[i], 0.1,
                                                    [](double x) { return x * x * x; });
    REQUIRE(fp[i] == Approx((g[i] - j) / 0.1 - g[i]).margin(1e-10));
  }
}
