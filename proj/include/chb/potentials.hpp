#pragma once
// Double-well potentials and their Yosida regularization.
//
// A SmoothPotential carries F, F', F'' together with a convexity shift c >= 0
// such that F'' >= -c, so the shifted potential Ft(s) = F(s) + (c/2) s^2 is
// convex. The regularized derivative is built from the resolvent of the
// shifted subdifferential:
//
//   J_d(s)  solves  x + d * Ft'(x) = s          (unique: the map is strictly
//                                                increasing with slope >= 1)
//   A_d(s)  = (s - J_d(s)) / d                  (Yosida approximation of Ft')
//   F'_d(s) = A_d(s) - c s
//   F_d(s)  = (d/2) A_d(s)^2 + Ft(J_d(s)) - (c/2) s^2
//
// F'_d is globally Lipschitz with constant 1/d + c, F_d has quadratic growth,
// and F_d -> F pointwise as d -> 0. These properties make the stochastic
// drift globally Lipschitz, which is what the solver needs.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace chb {

using Eigen::VectorXd;

struct SmoothPotential {
  std::function<double(double)> value;              // s -> F(s) >= 0
  std::function<double(double)> first_derivative;   // s -> F'(s), F'(0) = 0
  std::function<double(double)> second_derivative;  // s -> F''(s) >= -convexity_shift
  double convexity_shift = 0.0;                     // c >= 0
  double growth_exponent = 4.0;                     // diagnostics only

  // Classic quartic double well F(s) = (alpha/4) (s^2 - beta^2)^2.
  // F''(s) = alpha (3 s^2 - beta^2) >= -alpha beta^2, so the minimal valid
  // convexity shift is alpha beta^2; pass shift_override >= that to widen it.
  static SmoothPotential polynomial(double alpha, double beta,
                                    double shift_override = -1.0) {
    if (alpha <= 0.0 || beta <= 0.0)
      throw std::invalid_argument("polynomial potential: alpha and beta must be > 0");
    const double minimal = alpha * beta * beta;
    double shift = shift_override < 0.0 ? minimal : shift_override;
    if (shift < minimal)
      throw std::invalid_argument(
          "polynomial potential: convexity shift below alpha*beta^2 leaves the "
          "shifted well nonconvex");
    SmoothPotential p;
    p.value = [alpha, beta](double s) {
      const double q = s * s - beta * beta;
      return 0.25 * alpha * q * q;
    };
    p.first_derivative = [alpha, beta](double s) {
      return alpha * s * (s * s - beta * beta);
    };
    p.second_derivative = [alpha, beta](double s) {
      return alpha * (3.0 * s * s - beta * beta);
    };
    p.convexity_shift = shift;
    p.growth_exponent = 4.0;
    return p;
  }
};

struct RegularizedPotential {
  SmoothPotential base;
  double delta = 0.1;                // in (0, 1)
  double resolvent_tolerance = 1e-12;

  double shifted_derivative(double x) const {
    return base.first_derivative(x) + base.convexity_shift * x;
  }
  double shifted_value(double x) const {
    return base.value(x) + 0.5 * base.convexity_shift * x * x;
  }

  static RegularizedPotential make(SmoothPotential base, double delta,
                                   double tolerance = 1e-12) {
    if (!(delta > 0.0 && delta < 1.0))
      throw std::invalid_argument("regularized potential: delta must lie in (0, 1)");
    if (!(tolerance > 0.0))
      throw std::invalid_argument("regularized potential: tolerance must be > 0");
    RegularizedPotential p;
    p.base = std::move(base);
    p.delta = delta;
    p.resolvent_tolerance = tolerance;
    return p;
  }
};

// Solve x + delta * Ft'(x) = s. The residual r(x) = x + delta Ft'(x) - s is
// strictly increasing with slope >= 1, so a sign-changing bracket always
// exists within |x - s| <= |r(s)|; we expand by doubling and then run
// safeguarded Newton (bisection fallback keeps the iterate inside the
// bracket). Convergence criterion: |r(x)| <= resolvent_tolerance.
inline double resolvent(double s, const RegularizedPotential& pot) {
  const double d = pot.delta;
  auto residual = [&](double x) { return x + d * pot.shifted_derivative(x) - s; };

  const double r0 = residual(s);
  if (r0 == 0.0) return s;
  double lo, hi;
  if (r0 > 0.0) {
    hi = s;
    double step = std::max(1.0, std::abs(s));
    lo = s - step;
    int doublings = 0;
    while (residual(lo) > 0.0) {
      step *= 2.0;
      lo = s - step;
      if (++doublings > 200)
        throw std::runtime_error(
            "resolvent: bracket expansion failed; shifted derivative is not "
            "monotone (potential misconfigured)");
    }
  } else {
    lo = s;
    double step = std::max(1.0, std::abs(s));
    hi = s + step;
    int doublings = 0;
    while (residual(hi) < 0.0) {
      step *= 2.0;
      hi = s + step;
      if (++doublings > 200)
        throw std::runtime_error(
            "resolvent: bracket expansion failed; shifted derivative is not "
            "monotone (potential misconfigured)");
    }
  }

  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double rx = residual(x);
    if (std::abs(rx) <= pot.resolvent_tolerance) return x;
    if (rx > 0.0)
      hi = x;
    else
      lo = x;
    const double slope =
        1.0 + d * (pot.base.second_derivative(x) + pot.base.convexity_shift);
    double next = slope > 0.0 ? x - rx / slope : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  throw std::runtime_error("resolvent: Newton/bisection did not converge");
}

// F'_d(s) = (s - J_d(s)) / d - c s
inline double yosida_derivative(double s, const RegularizedPotential& pot) {
  const double j = resolvent(s, pot);
  return (s - j) / pot.delta - pot.base.convexity_shift * s;
}

// F_d(s) = (d/2) A_d(s)^2 + Ft(J_d(s)) - (c/2) s^2
inline double yosida_value(double s, const RegularizedPotential& pot) {
  const double j = resolvent(s, pot);
  const double a = (s - j) / pot.delta;
  return 0.5 * pot.delta * a * a + pot.shifted_value(j) -
         0.5 * pot.base.convexity_shift * s * s;
}

// Global bound |F''_d| <= 1/delta + c (the resolvent has slope in (0, 1]).
inline double yosida_second_derivative_bound(const RegularizedPotential& pot) {
  return 1.0 / pot.delta + pot.base.convexity_shift;
}

// Pointwise F''_d(s): differentiate F'_d = (s - J)/d - c s with
// J'(s) = 1 / (1 + d (F''(J) + c)), which lies in (0, 1].
inline double yosida_second_derivative(double s, const RegularizedPotential& pot) {
  const double j = resolvent(s, pot);
  const double jp = 1.0 / (1.0 + pot.delta * (pot.base.second_derivative(j) +
                                              pot.base.convexity_shift));
  return (1.0 - jp) / pot.delta - pot.base.convexity_shift;
}

// Pointwise application of a scalar function on a collocation grid.
template <class Fn>
VectorXd nemytskii(const VectorXd& grid, Fn&& fn) {
  VectorXd out(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) out[i] = fn(grid[i]);
  return out;
}

}  // namespace chb
