#pragma once
// Finite-dimensional core of the coupled bulk-surface phase-field flow:
// chemical potentials, the quasi-static Brinkman velocity solve, and the
// drift of the coefficient ODE/SDE system.
//
// States are coefficient vectors in the orthonormal spectral bases:
//   a  bulk phase field phi          b  surface phase field phi_G
//   c  bulk chemical potential mu    d  surface chemical potential theta
//   e  divergence-free velocity u
// (c, d, e) are always derived from (a, b); they are never integrated.
//
// The weak system, with T the (exact) trace operator from bulk to boundary
// coefficients and K > 0 the Robin coupling constant:
//   c = eps*Lam*a + (1/eps) P[F'_d(phi)]        + (eps/K) T^t (T a - b)
//   d = eps_G*Lam_G*b + (1/eps_G) P_G[G'_d(phi_G)] + (eps/K) (b - T a)
//   A(phi, phi_G) e = f(phi, mu, phi_G, theta)     (SPD Brinkman solve)
//   da_i = int phi u . grad v_i  - int M_O(phi) grad mu . grad v_i
//   db_i = int_G phi_G u . grad_G L_i - int_G M_G(phi_G) grad_G theta . grad_G L_i

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "chb/geometry.hpp"
#include "chb/potentials.hpp"

namespace chb {

// ---------------------------------------------------------------------------
// coefficient functions with certified bounds
// ---------------------------------------------------------------------------

struct CoefficientFn {
  std::function<double(double)> fn;
  double lower = 0.0;  // certified bounds on the sampled range [-4, 4]
  double upper = 0.0;
  bool is_constant = false;
  std::string spec;  // round-trippable description, e.g. "constant:1"

  double operator()(double s) const { return fn(s); }

  static CoefficientFn constant(double v) {
    CoefficientFn c;
    c.fn = [v](double) { return v; };
    c.lower = v;
    c.upper = v;
    c.is_constant = true;
    char buf[64];
    std::snprintf(buf, sizeof buf, "constant:%.17g", v);
    c.spec = buf;
    return c;
  }
  // smooth ramp base + delta * (1 + tanh s)/2, range (base, base + delta)
  static CoefficientFn tanh_ramp(double base, double delta) {
    CoefficientFn c;
    c.fn = [base, delta](double s) {
      return base + delta * 0.5 * (1.0 + std::tanh(s));
    };
    c.lower = std::min(base, base + delta);
    c.upper = std::max(base, base + delta);
    c.is_constant = false;
    char buf[96];
    std::snprintf(buf, sizeof buf, "tanh:%.17g,%.17g", base, delta);
    c.spec = buf;
    return c;
  }
};

struct PhysicalParams {
  double eps = 0.1;        // bulk interface thickness
  double eps_gamma = 0.1;  // surface interface thickness
  double robin_K = 1.0;    // Robin coupling constant, K > 0
  CoefficientFn nu = CoefficientFn::constant(1.0);             // viscosity
  CoefficientFn lambda = CoefficientFn::constant(1.0);         // permeability drag
  CoefficientFn gamma = CoefficientFn::constant(1.0);          // boundary slip friction
  CoefficientFn mobility_bulk = CoefficientFn::constant(1.0);  // M_O
  CoefficientFn mobility_bnd = CoefficientFn::constant(1.0);   // M_G

  // All constraint violations (empty = valid). Certified bounds are re-checked
  // by sampling each coefficient function on [-4, 4].
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto num = [](double x) {
      char b[48];
      std::snprintf(b, sizeof b, "%.17g", x);
      return std::string(b);
    };
    if (!(eps > 0.0)) v.push_back("eps must be > 0 (got " + num(eps) + ")");
    if (!(eps_gamma > 0.0))
      v.push_back("eps_gamma must be > 0 (got " + num(eps_gamma) + ")");
    if (!(robin_K > 0.0))
      v.push_back("robin_K must be > 0 (paper treats only K>0)");
    struct Entry {
      const char* name;
      const CoefficientFn* c;
      bool strict_lower;
    };
    const Entry entries[] = {{"nu", &nu, true},
                             {"lambda", &lambda, false},
                             {"gamma", &gamma, true},
                             {"mobility_bulk", &mobility_bulk, true},
                             {"mobility_bnd", &mobility_bnd, true}};
    for (const auto& en : entries) {
      if (!en.c->fn) {
        v.push_back(std::string(en.name) + " has no function set");
        continue;
      }
      if (en.strict_lower && !(en.c->lower > 0.0))
        v.push_back(std::string(en.name) + " lower bound must be > 0 (got " +
                    num(en.c->lower) + ")");
      if (!en.strict_lower && !(en.c->lower >= 0.0))
        v.push_back(std::string(en.name) + " lower bound must be >= 0 (got " +
                    num(en.c->lower) + ")");
      if (!(en.c->upper >= en.c->lower))
        v.push_back(std::string(en.name) + " upper bound below lower bound");
      for (int i = 0; i <= 800; ++i) {
        const double s = -4.0 + i * 0.01;
        const double val = en.c->fn(s);
        if (!(val >= en.c->lower - 1e-12) || !(val <= en.c->upper + 1e-12)) {
          v.push_back(std::string(en.name) + " leaves its certified bounds at s=" +
                      num(s) + " (value " + num(val) + ")");
          break;
        }
      }
    }
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string all = "invalid parameters:";
    for (const auto& s : v) all += "\n  - " + s;
    throw std::invalid_argument(all);
  }
};

struct GalerkinState {
  VectorXd a;  // bulk phase coefficients
  VectorXd b;  // surface phase coefficients
  VectorXd c;  // bulk chemical potential coefficients (derived)
  VectorXd d;  // surface chemical potential coefficients (derived)
  VectorXd e;  // velocity coefficients (derived)
  double time = 0.0;

  static GalerkinState zero(const SpectralBasis& basis) {
    GalerkinState s;
    s.a = VectorXd::Zero(basis.n_bulk);
    s.b = VectorXd::Zero(basis.n_bnd);
    s.c = VectorXd::Zero(basis.n_bulk);
    s.d = VectorXd::Zero(basis.n_bnd);
    s.e = VectorXd::Zero(basis.n_vel);
    return s;
  }
};

// ---------------------------------------------------------------------------
// chemical potentials
// ---------------------------------------------------------------------------

inline std::pair<VectorXd, VectorXd> chemical_potentials(
    const VectorXd& a, const VectorXd& b, const PhysicalParams& params,
    const RegularizedPotential& pot_f, const RegularizedPotential& pot_g,
    const SpectralBasis& basis) {
  const VectorXd phi = to_grid(a, basis, Family::bulk);
  const VectorXd phig = to_grid(b, basis, Family::boundary);
  const VectorXd p = from_grid(
      nemytskii(phi, [&](double s) { return yosida_derivative(s, pot_f); }),
      basis, Family::bulk);
  const VectorXd q = from_grid(
      nemytskii(phig, [&](double s) { return yosida_derivative(s, pot_g); }),
      basis, Family::boundary);
  const VectorXd jump = basis.trace_op * a - b;  // boundary coefficients of tr(phi) - phi_G
  VectorXd c = params.eps * basis.bulk_eig.cwiseProduct(a) + (1.0 / params.eps) * p +
               (params.eps / params.robin_K) * (basis.trace_op.transpose() * jump);
  VectorXd d = params.eps_gamma * basis.bnd_eig.cwiseProduct(b) +
               (1.0 / params.eps_gamma) * q -
               (params.eps / params.robin_K) * jump;
  return {std::move(c), std::move(d)};
}

// ---------------------------------------------------------------------------
// Brinkman velocity solve
// ---------------------------------------------------------------------------

inline MatrixXd brinkman_assemble(const VectorXd& a, const VectorXd& b,
                                  const PhysicalParams& params,
                                  const SpectralBasis& basis) {
  const VectorXd phi = to_grid(a, basis, Family::bulk);
  const VectorXd phig = to_grid(b, basis, Family::boundary);
  VectorXd wnu(basis.grid_size()), wlam(basis.grid_size());
  for (int g = 0; g < basis.grid_size(); ++g) {
    wnu[g] = basis.w[g] * 4.0 * params.nu(phi[g]);  // 2 nu * (2 D11 D11' + 2 D12 D12')
    wlam[g] = basis.w[g] * params.lambda(phi[g]);
  }
  VectorXd wgam(basis.bnd_grid_size());
  for (int g = 0; g < basis.bnd_grid_size(); ++g)
    wgam[g] = basis.wb * params.gamma(phig[g]);

  const MatrixXd d12 = 0.5 * (basis.vel_g12 + basis.vel_g21);
  MatrixXd A = basis.vel_g11.transpose() * wnu.asDiagonal() * basis.vel_g11 +
               d12.transpose() * wnu.asDiagonal() * d12 +
               basis.vel_ux.transpose() * wlam.asDiagonal() * basis.vel_ux +
               basis.vel_uy.transpose() * wlam.asDiagonal() * basis.vel_uy +
               basis.vel_bval.transpose() * wgam.asDiagonal() * basis.vel_bval;
  A = 0.5 * (A + A.transpose()).eval();  // exact symmetry
  return A;
}

namespace detail {
inline VectorXd brinkman_rhs(const VectorXd& a, const VectorXd& b,
                             const VectorXd& c, const VectorXd& d,
                             const SpectralBasis& basis) {
  const VectorXd phi = to_grid(a, basis, Family::bulk);
  const VectorXd mux = basis.bulk_dx * c, muy = basis.bulk_dy * c;
  const VectorXd phig = to_grid(b, basis, Family::boundary);
  const VectorXd thx = basis.bnd_dx * d;
  const VectorXd fx = basis.w.cwiseProduct(phi.cwiseProduct(mux));
  const VectorXd fy = basis.w.cwiseProduct(phi.cwiseProduct(muy));
  const VectorXd fb = basis.wb * phig.cwiseProduct(thx);
  return -(basis.vel_ux.transpose() * fx) - (basis.vel_uy.transpose() * fy) -
         (basis.vel_bval.transpose() * fb);
}
}  // namespace detail

// Factored solver; with constant coefficients the matrix is state-independent
// and the factorization is reused across steps.
struct BrinkmanSolver {
  const PhysicalParams* params = nullptr;
  const SpectralBasis* basis = nullptr;
  bool constant_coeffs = false;
  Eigen::LLT<MatrixXd> llt;
  MatrixXd matrix;

  static BrinkmanSolver make(const PhysicalParams& params, const SpectralBasis& basis) {
    BrinkmanSolver s;
    s.params = &params;
    s.basis = &basis;
    s.constant_coeffs = params.nu.is_constant && params.lambda.is_constant &&
                        params.gamma.is_constant;
    if (s.constant_coeffs) {
      s.matrix = brinkman_assemble(VectorXd::Zero(basis.n_bulk),
                                   VectorXd::Zero(basis.n_bnd), params, basis);
      s.factor(s.matrix);
    }
    return s;
  }

  void factor(const MatrixXd& A) {
    llt.compute(A);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error(
          "brinkman solve: matrix is not positive definite (quadrature "
          "underresolution or invalid coefficient bounds)");
  }

  VectorXd solve(const VectorXd& a, const VectorXd& b, const VectorXd& c,
                 const VectorXd& d) {
    if (!constant_coeffs) {
      matrix = brinkman_assemble(a, b, *params, *basis);
      factor(matrix);
    }
    const VectorXd f = detail::brinkman_rhs(a, b, c, d, *basis);
    VectorXd e = llt.solve(f);
    const double resid = (matrix * e - f).norm();
    if (!(resid <= 1e-10 * std::max(1.0, f.norm())))
      throw std::runtime_error("brinkman solve: residual above tolerance");
    return e;
  }
};

inline VectorXd brinkman_solve(const VectorXd& a, const VectorXd& b,
                               const VectorXd& c, const VectorXd& d,
                               const PhysicalParams& params,
                               const SpectralBasis& basis) {
  BrinkmanSolver s;
  s.params = &params;
  s.basis = &basis;
  s.constant_coeffs = false;
  return s.solve(a, b, c, d);
}

// ---------------------------------------------------------------------------
// drift of the coefficient system
// ---------------------------------------------------------------------------

struct DriftResult {
  VectorXd da;  // bulk phase drift
  VectorXd db;  // surface phase drift
  VectorXd c, d, e;  // the derived fields used to form the drift
};

// Quadrature part of the drift, taking the derived fields (c, d, e) of the
// state as given; the state must be internally consistent.
inline std::pair<VectorXd, VectorXd> drift_from_derived(
    const GalerkinState& s, const PhysicalParams& params,
    const SpectralBasis& basis) {
  const VectorXd phi = to_grid(s.a, basis, Family::bulk);
  const VectorXd mux = basis.bulk_dx * s.c, muy = basis.bulk_dy * s.c;
  const VectorXd ux = basis.vel_ux * s.e, uy = basis.vel_uy * s.e;
  VectorXd gx(basis.grid_size()), gy(basis.grid_size());
  for (int g = 0; g < basis.grid_size(); ++g) {
    const double mo = params.mobility_bulk(phi[g]);
    gx[g] = basis.w[g] * (phi[g] * ux[g] - mo * mux[g]);
    gy[g] = basis.w[g] * (phi[g] * uy[g] - mo * muy[g]);
  }
  VectorXd da = basis.bulk_dx.transpose() * gx + basis.bulk_dy.transpose() * gy;

  const VectorXd phig = to_grid(s.b, basis, Family::boundary);
  const VectorXd thx = basis.bnd_dx * s.d;
  const VectorXd ug = basis.vel_bval * s.e;
  VectorXd gb(basis.bnd_grid_size());
  for (int g = 0; g < basis.bnd_grid_size(); ++g) {
    const double mg = params.mobility_bnd(phig[g]);
    gb[g] = basis.wb * (phig[g] * ug[g] - mg * thx[g]);
  }
  VectorXd db = basis.bnd_dx.transpose() * gb;
  return {std::move(da), std::move(db)};
}

inline DriftResult drift(const VectorXd& a, const VectorXd& b,
                         const PhysicalParams& params,
                         const RegularizedPotential& pot_f,
                         const RegularizedPotential& pot_g,
                         const SpectralBasis& basis,
                         BrinkmanSolver* cached_solver = nullptr) {
  DriftResult r;
  std::tie(r.c, r.d) = chemical_potentials(a, b, params, pot_f, pot_g, basis);
  if (cached_solver)
    r.e = cached_solver->solve(a, b, r.c, r.d);
  else
    r.e = brinkman_solve(a, b, r.c, r.d, params, basis);

  GalerkinState s;
  s.a = a;
  s.b = b;
  s.c = r.c;
  s.d = r.d;
  s.e = r.e;
  std::tie(r.da, r.db) = drift_from_derived(s, params, basis);
  return r;
}

// ---------------------------------------------------------------------------
// mean chemical potential control
// ---------------------------------------------------------------------------

// Smallest sampled constant C with |F'_d(s)| <= C (1 + F_d(s)); scans an
// expanding symmetric range until the ratio has decayed at the edges, then
// adds the between-samples margin implied by the ratio's derivative bound.
inline double potential_ratio_certificate(const RegularizedPotential& pot) {
  const double lip = yosida_second_derivative_bound(pot);
  double S = 8.0;
  double best = 0.0, h = 0.0;
  for (int round = 0; round < 14; ++round) {
    const int n = 4096;
    h = 2.0 * S / n;
    best = 0.0;
    double edge = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double s = -S + i * h;
      const double j = resolvent(s, pot);
      const double A = (s - j) / pot.delta;
      const double fp = A - pot.base.convexity_shift * s;
      const double fv = 0.5 * pot.delta * A * A + pot.shifted_value(j) -
                        0.5 * pot.base.convexity_shift * s * s;
      const double ratio = std::abs(fp) / (1.0 + fv);
      best = std::max(best, ratio);
      if (i == 0 || i == n) edge = std::max(edge, ratio);
    }
    if (edge <= 0.25 * best) break;
    S *= 2.0;
  }
  return best + 0.5 * h * (lip + (best + 1.0) * (best + 1.0));
}

struct MeanPotentialReport {
  double mu_mean = 0.0;
  double theta_mean = 0.0;
  double mu_bound = 0.0;
  double theta_bound = 0.0;
};

// Spatial means of mu and theta plus their certified bounds
//   |mean mu|    <= (1/|O|) [ (C_F/eps)(|O| + ||F_d(phi)||_L1)
//                             + (eps/K) |G|^(1/2) |phi_G - phi|_L2(G) ]
// (theta analogous with G and |G|). ratio_f / ratio_g are the certificates
// from potential_ratio_certificate. Throws if a mean escapes its bound.
inline MeanPotentialReport mean_chemical_potential_bound(
    const GalerkinState& state, const RegularizedPotential& pot_f,
    const RegularizedPotential& pot_g, const PhysicalParams& params,
    const SpectralBasis& basis, double ratio_f, double ratio_g) {
  MeanPotentialReport rep;
  const VectorXd mu = to_grid(state.c, basis, Family::bulk);
  const VectorXd th = to_grid(state.d, basis, Family::boundary);
  const VectorXd phi = to_grid(state.a, basis, Family::bulk);
  const VectorXd phig = to_grid(state.b, basis, Family::boundary);
  const VectorXd jumpg =
      basis.bnd_val * (basis.trace_op * state.a - state.b);  // tr(phi) - phi_G

  rep.mu_mean = basis.w.dot(mu) / basis.area;
  rep.theta_mean = basis.wb * th.sum() / basis.bnd_length;

  double f_l1 = 0.0;
  for (int g = 0; g < basis.grid_size(); ++g)
    f_l1 += basis.w[g] * std::abs(yosida_value(phi[g], pot_f));
  double g_l1 = 0.0;
  for (int g = 0; g < basis.bnd_grid_size(); ++g)
    g_l1 += basis.wb * std::abs(yosida_value(phig[g], pot_g));
  const double robin_l2 = std::sqrt(basis.wb * jumpg.squaredNorm());

  const double coupling =
      (params.eps / params.robin_K) * std::sqrt(basis.bnd_length) * robin_l2;
  rep.mu_bound =
      ((ratio_f / params.eps) * (basis.area + f_l1) + coupling) / basis.area;
  rep.theta_bound = ((ratio_g / params.eps_gamma) * (basis.bnd_length + g_l1) +
                     coupling) /
                    basis.bnd_length;

  if (!(std::abs(rep.mu_mean) <= rep.mu_bound) ||
      !(std::abs(rep.theta_mean) <= rep.theta_bound))
    throw std::runtime_error(
        "mean chemical potential escaped its certified bound (quadrature or "
        "regularization inconsistency)");
  return rep;
}

}  // namespace chb
