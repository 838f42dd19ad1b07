#pragma once
// Truncated cylindrical Wiener increments and Nemytskii diffusion operators.
//
// Both the bulk field and the surface field are driven by K_W scalar Brownian
// motions. The k-th diffusion shape is sigma_k(s) = w_k * g(s) with a shared
// scalar profile g (tanh, sin, or constant) and weights w_k = amplitude * c0 *
// k^(-rho); rho > 1/2 makes sum w_k^2 finite with a closed-form tail bound.
//
// By default the bulk and boundary draw streams are independent. With
// shared_modes = true the k-th draw is reused for both fields, which couples
// the two noises mode-by-mode; energy-identity bookkeeping then acquires a
// bulk-surface cross term (see diagnostics).
//
// All draws are counter-based: (master_seed, path, step, mode, stream)
// determines each normal variate, so paths can be simulated in parallel and
// reproduced bitwise.

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "chb/geometry.hpp"
#include "chb/rng.hpp"

namespace chb {

enum class NoiseProfile { tanh_profile, sin_profile, constant_profile };

namespace detail {
inline constexpr int kStreamBulkNoise = 1;
inline constexpr int kStreamBoundaryNoise = 2;
}  // namespace detail

struct NoiseModel {
  int n_w_modes = 16;               // truncation K_W of each driving series
  double weight_decay = 1.0;        // rho; needs rho > 1/2 for summability
  double base_weight = 1.0;         // c0
  double bulk_amplitude = 0.0;      // scales sigma_k; 0 disables the bulk noise
  double boundary_amplitude = 0.0;  // scales sigma~_k
  NoiseProfile profile = NoiseProfile::tanh_profile;
  bool shared_modes = false;        // reuse bulk draws for the boundary field

  void validate() const {
    if (n_w_modes < 1)
      throw std::invalid_argument("noise: n_w_modes must be >= 1");
    if (!(weight_decay > 0.5))
      throw std::invalid_argument(
          "noise: weight_decay must exceed 1/2 (sum of squared weights diverges)");
    if (!(base_weight >= 0.0) || !(bulk_amplitude >= 0.0) ||
        !(boundary_amplitude >= 0.0))
      throw std::invalid_argument("noise: weights and amplitudes must be >= 0");
  }

  // ---- profile -------------------------------------------------------------
  double profile_value(double s) const {
    switch (profile) {
      case NoiseProfile::tanh_profile: return std::tanh(s);
      case NoiseProfile::sin_profile: return std::sin(s);
      case NoiseProfile::constant_profile: return 1.0;
    }
    return 0.0;
  }
  double profile_slope(double s) const {
    switch (profile) {
      case NoiseProfile::tanh_profile: {
        const double t = std::tanh(s);
        return 1.0 - t * t;
      }
      case NoiseProfile::sin_profile: return std::cos(s);
      case NoiseProfile::constant_profile: return 0.0;
    }
    return 0.0;
  }
  double profile_sup() const { return 1.0; }
  double profile_lipschitz() const {
    return profile == NoiseProfile::constant_profile ? 0.0 : 1.0;
  }

  // ---- weights -------------------------------------------------------------
  // k is 1-based, matching the series index
  double bulk_weight(int k) const {
    return bulk_amplitude * base_weight * std::pow(double(k), -weight_decay);
  }
  double boundary_weight(int k) const {
    return boundary_amplitude * base_weight * std::pow(double(k), -weight_decay);
  }
  double bulk_weight_sq_sum() const {
    double s = 0.0;
    for (int k = 1; k <= n_w_modes; ++k) s += bulk_weight(k) * bulk_weight(k);
    return s;
  }
  double boundary_weight_sq_sum() const {
    double s = 0.0;
    for (int k = 1; k <= n_w_modes; ++k)
      s += boundary_weight(k) * boundary_weight(k);
    return s;
  }
  // sum_k w_k * w~_k, the scale of any bulk-surface mode-paired coupling
  double cross_weight_sum() const {
    double s = 0.0;
    for (int k = 1; k <= n_w_modes; ++k) s += bulk_weight(k) * boundary_weight(k);
    return s;
  }
  // closed-form bound on the truncated tail sum_{k > K_W} w_k^2 via the
  // integral comparison sum k^(-2 rho) <= K^(1-2 rho)/(2 rho - 1)
  double bulk_tail_sq_bound() const {
    const double a = bulk_amplitude * base_weight;
    return a * a * std::pow(double(n_w_modes), 1.0 - 2.0 * weight_decay) /
           (2.0 * weight_decay - 1.0);
  }
  double boundary_tail_sq_bound() const {
    const double a = boundary_amplitude * base_weight;
    return a * a * std::pow(double(n_w_modes), 1.0 - 2.0 * weight_decay) /
           (2.0 * weight_decay - 1.0);
  }

  // ---- closed-form operator bounds ----------------------------------------
  // sup-norm version: sum_k ||sigma_k(phi)||_{L-inf}^2 <= g_sup^2 sum w_k^2
  double uniform_bound(Family which) const {
    const double s = which == Family::boundary ? boundary_weight_sq_sum()
                                               : bulk_weight_sq_sum();
    return profile_sup() * profile_sup() * s;
  }
  // Lipschitz version: ||F(phi)-F(psi)||^2_{HS(L2)} <= C2 |phi-psi|_{L2}^2
  double lipschitz_bound(Family which) const {
    const double s = which == Family::boundary ? boundary_weight_sq_sum()
                                               : bulk_weight_sq_sum();
    return profile_lipschitz() * profile_lipschitz() * s;
  }
  // H1 growth: sum_k ||sigma_k(phi)||_{H1}^2 <= C1 (1 + |grad phi|_{L2}^2),
  // with measure = |O| (or |Gamma|) absorbing the zeroth-order part
  double gradient_growth_bound(Family which, double measure) const {
    const double s = which == Family::boundary ? boundary_weight_sq_sum()
                                               : bulk_weight_sq_sum();
    const double zeroth = profile_sup() * profile_sup() * measure;
    const double first = profile_lipschitz() * profile_lipschitz();
    return s * std::max(zeroth, first);
  }
};

struct WienerIncrement {
  double dt = 0.0;
  VectorXd bulk_draws;      // K_W normal(0, dt) variates
  VectorXd boundary_draws;  // K_W normal(0, dt) variates (or the bulk draws
                            // again under shared_modes)
  std::uint64_t path_seed = 0;
  std::uint64_t step_index = 0;
};

inline WienerIncrement sample_increment(const NoiseModel& model,
                                        std::uint64_t master_seed,
                                        std::uint64_t path_index,
                                        std::uint64_t step_index, double dt) {
  if (!(dt >= 0.0))
    throw std::invalid_argument("sample_increment: dt must be >= 0");
  const double root = std::sqrt(dt);
  WienerIncrement inc;
  inc.dt = dt;
  inc.path_seed = path_index;
  inc.step_index = step_index;
  inc.bulk_draws.resize(model.n_w_modes);
  inc.boundary_draws.resize(model.n_w_modes);
  for (int k = 0; k < model.n_w_modes; ++k) {
    inc.bulk_draws[k] = root * keyed_normal(master_seed, path_index, step_index,
                                            k, detail::kStreamBulkNoise);
    inc.boundary_draws[k] =
        model.shared_modes
            ? inc.bulk_draws[k]
            : root * keyed_normal(master_seed, path_index, step_index, k,
                                  detail::kStreamBoundaryNoise);
  }
  return inc;
}

// Euler increment of the stochastic integral on the grid:
//   sum_k sigma_k(phi(x)) dW^k = g(phi(x)) * sum_k w_k dW^k.
// The profile factors out because every mode shares it; the k-sum collapses
// to one scalar per call.
inline VectorXd diffusion_apply(const VectorXd& state_grid, const NoiseModel& model,
                                const WienerIncrement& increment, Family which) {
  const VectorXd& draws = which == Family::boundary ? increment.boundary_draws
                                                    : increment.bulk_draws;
  if (draws.size() != model.n_w_modes)
    throw std::invalid_argument(
        "diffusion_apply: increment truncation does not match the model");
  double scale = 0.0;
  for (int k = 1; k <= model.n_w_modes; ++k) {
    const double w = which == Family::boundary ? model.boundary_weight(k)
                                               : model.bulk_weight(k);
    scale += w * draws[k - 1];
  }
  VectorXd out(state_grid.size());
  for (Eigen::Index i = 0; i < state_grid.size(); ++i)
    out[i] = model.profile_value(state_grid[i]) * scale;
  return out;
}

struct HilbertSchmidtNorms {
  double l2 = 0.0;  // sum_k ||sigma_k(phi)||_{L2}^2
  double h1 = 0.0;  // sum_k ||sigma_k(phi)||_{H1}^2
};

// Quadrature evaluation of the Hilbert-Schmidt norms of the (unprojected)
// Nemytskii operator at the state given by grid values and gradient grids.
// For bulk fields gradient_grids = {d/dx, d/dy}; for boundary fields
// gradient_grids = {tangential derivative}; pass {} to skip the H1 part.
inline HilbertSchmidtNorms hilbert_schmidt_norms(
    const VectorXd& state_grid, const std::vector<VectorXd>& gradient_grids,
    const NoiseModel& model, const SpectralBasis& basis, Family which) {
  const bool bnd = which == Family::boundary;
  const double wsum = bnd ? model.boundary_weight_sq_sum() : model.bulk_weight_sq_sum();

  double val_sq = 0.0, grad_sq = 0.0;
  for (Eigen::Index i = 0; i < state_grid.size(); ++i) {
    const double w = bnd ? basis.wb : basis.w[i];
    const double g = model.profile_value(state_grid[i]);
    val_sq += w * g * g;
    if (!gradient_grids.empty()) {
      const double slope = model.profile_slope(state_grid[i]);
      double gg = 0.0;
      for (const VectorXd& d : gradient_grids) gg += d[i] * d[i];
      grad_sq += w * slope * slope * gg;
    }
  }
  HilbertSchmidtNorms out;
  out.l2 = wsum * val_sq;
  out.h1 = wsum * (val_sq + grad_sq);
  return out;
}

}  // namespace chb
