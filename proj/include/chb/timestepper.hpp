#pragma once
// Time integration of the coupled bulk/surface phase-field system in
// coefficient space: explicit Euler-Maruyama and a semi-implicit (IMEX)
// variant that treats the stiff fourth-order linear part with a frozen
// constant-coefficient stabilizer.  Every path is reproducible from
// (master_seed, path_index) alone.

#include <chb/diagnostics.hpp>

#include <Eigen/LU>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace chb {

enum class SchemeKind { explicit_em, semi_implicit };

struct SchemeConfig {
  double dt = 1e-3;
  int n_steps = 100;
  SchemeKind scheme = SchemeKind::semi_implicit;
  // Blow-up guard threshold; 0 means "auto": 10 * (initial guard norm + 1).
  double kappa_guard = 0.0;
  // The stabilizer freezes mobilities at their certified upper bounds; the
  // nonlinear drift always evaluates mobilities at the step start.  Only the
  // frozen variant is implemented.
  bool imex_mobility_freeze = true;
  // Store a full state snapshot every this many steps (plus the final state).
  int snapshot_every = 1;

  double resolved_kappa(double initial_guard) const {
    return kappa_guard > 0.0 ? kappa_guard : 10.0 * (initial_guard + 1.0);
  }

  std::vector<std::string> violations(double initial_guard) const {
    std::vector<std::string> out;
    if (!(dt > 0.0) || !std::isfinite(dt))
      out.push_back("scheme.dt must be a finite positive number");
    if (n_steps < 1) out.push_back("scheme.n_steps must be >= 1");
    if (snapshot_every < 1) out.push_back("scheme.snapshot_every must be >= 1");
    if (!imex_mobility_freeze)
      out.push_back(
          "scheme.imex_mobility_freeze = false is not supported: the "
          "stabilized scheme always freezes mobilities at the step start");
    if (kappa_guard != 0.0 && !(kappa_guard > initial_guard))
      out.push_back(
          "scheme.kappa_guard must exceed the guard norm of the initial "
          "state (or be 0 for automatic selection)");
    return out;
  }

  void validate(double initial_guard) const {
    const auto v = violations(initial_guard);
    if (!v.empty()) {
      std::string msg = "invalid scheme configuration:";
      for (const auto& s : v) msg += "\n  - " + s;
      throw std::invalid_argument(msg);
    }
  }
};

// Everything a step needs, bundled so signatures stay short.  All pointers
// are non-owning and must outlive the stepper calls.
struct SimDeps {
  const PhysicalParams* params = nullptr;
  const RegularizedPotential* pot_f = nullptr;
  const RegularizedPotential* pot_g = nullptr;
  const NoiseModel* noise = nullptr;
  const SpectralBasis* basis = nullptr;
  BrinkmanSolver* solver = nullptr;  // optional cached factorization
};

// Builds a state whose derived fields (c, d, e) are consistent with (a, b).
inline GalerkinState make_state(const VectorXd& a, const VectorXd& b,
                                const SimDeps& deps, double time = 0.0) {
  GalerkinState s;
  s.a = a;
  s.b = b;
  s.time = time;
  std::tie(s.c, s.d) = chemical_potentials(a, b, *deps.params, *deps.pot_f,
                                           *deps.pot_g, *deps.basis);
  if (deps.solver)
    s.e = deps.solver->solve(a, b, s.c, s.d);
  else
    s.e = brinkman_solve(a, b, s.c, s.d, *deps.params, *deps.basis);
  return s;
}

// Projects the state-dependent diffusion applied to a Wiener increment onto
// the bulk and boundary coefficient spaces.
inline std::pair<VectorXd, VectorXd> noise_coefficient_increments(
    const GalerkinState& s, const WienerIncrement& inc, const NoiseModel& noise,
    const SpectralBasis& basis) {
  VectorXd na = VectorXd::Zero(s.a.size());
  VectorXd nb = VectorXd::Zero(s.b.size());
  if (noise.bulk_amplitude != 0.0) {
    const VectorXd phi = to_grid(s.a, basis, Family::bulk);
    na = from_grid(diffusion_apply(phi, noise, inc, Family::bulk), basis,
                   Family::bulk);
  }
  if (noise.boundary_amplitude != 0.0) {
    const VectorXd phig = to_grid(s.b, basis, Family::boundary);
    nb = from_grid(diffusion_apply(phig, noise, inc, Family::boundary), basis,
                   Family::boundary);
  }
  return {std::move(na), std::move(nb)};
}

namespace detail {

inline void throw_if_not_finite(const GalerkinState& s, double dt) {
  const bool ok = s.a.allFinite() && s.b.allFinite() && s.c.allFinite() &&
                  s.d.allFinite() && s.e.allFinite();
  if (!ok)
    throw std::runtime_error(
        "time step produced non-finite values at t = " +
        std::to_string(s.time) + " with dt = " + std::to_string(dt) +
        "; the explicit scheme is unstable at this resolution (reduce dt or "
        "use the semi-implicit scheme)");
}

}  // namespace detail

// One explicit Euler-Maruyama step with precomputed noise coefficient
// increments.  The incoming state must have derived fields consistent with
// (a, b); the returned state does as well.
inline GalerkinState step_explicit(const GalerkinState& s,
                                   const WienerIncrement& inc,
                                   const SimDeps& deps, const VectorXd& na,
                                   const VectorXd& nb) {
  const auto [da, db] = drift_from_derived(s, *deps.params, *deps.basis);
  const VectorXd a_new = s.a + inc.dt * da + na;
  const VectorXd b_new = s.b + inc.dt * db + nb;
  if (!a_new.allFinite() || !b_new.allFinite()) {
    GalerkinState bad = s;
    bad.a = a_new;
    bad.b = b_new;
    bad.time = s.time + inc.dt;
    detail::throw_if_not_finite(bad, inc.dt);
  }
  GalerkinState out = make_state(a_new, b_new, deps, s.time + inc.dt);
  detail::throw_if_not_finite(out, inc.dt);
  return out;
}

inline GalerkinState step_explicit(const GalerkinState& s,
                                   const WienerIncrement& inc,
                                   const SimDeps& deps) {
  const auto [na, nb] =
      noise_coefficient_increments(s, inc, *deps.noise, *deps.basis);
  return step_explicit(s, inc, deps, na, nb);
}

// Constant-coefficient stabilizer for the semi-implicit scheme.  The linear
// operator damps the dominant fourth-order bulk/boundary terms and the Robin
// coupling with mobilities frozen at their certified upper bounds:
//   L_a = -M_up * Lam * (eps * Lam * a + (eps/K) * T^t (T a - b))
//   L_b = -N_up * Lam_G * (eps_G * Lam_G * b + (eps/K) * (b - T a))
// The operator is block diagonal over x-families (each family couples the
// bulk column modes to the two boundary modes of the same x-shape), so the
// implicit solve factors one dense (n_y_modes + 2) block per family once.
class ImexOperator {
 public:
  static ImexOperator build(const PhysicalParams& params,
                            const SpectralBasis& basis, double dt) {
    ImexOperator op;
    op.dt_ = dt;
    op.nym_ = static_cast<int>(basis.bulk_eig.size()) /
              basis.geom.x_family_size();
    op.nxf_ = basis.geom.x_family_size();
    const double m_up = params.mobility_bulk.upper;
    const double n_up = params.mobility_bnd.upper;
    const double eps = params.eps, epsg = params.eps_gamma;
    const double kf = params.eps / params.robin_K;
    const int nb = op.nym_ + 2;
    op.s_blocks_.reserve(op.nxf_);
    op.lu_.reserve(op.nxf_);
    for (int fx = 0; fx < op.nxf_; ++fx) {
      MatrixXd trace_block(2, op.nym_);  // rows: circle 0, circle 1
      VectorXd lam(op.nym_);
      for (int m = 0; m < op.nym_; ++m) {
        const int i = fx * op.nym_ + m;
        lam[m] = basis.bulk_eig[i];
        trace_block(0, m) = basis.trace_op(fx, i);
        trace_block(1, m) = basis.trace_op(op.nxf_ + fx, i);
      }
      const Eigen::Vector2d lam_g(basis.bnd_eig[fx],
                                  basis.bnd_eig[op.nxf_ + fx]);
      // Negative of the damping operator restricted to this family:
      // S = -L, so the implicit system is (I + dt S) x_new = rhs.
      MatrixXd s = MatrixXd::Zero(nb, nb);
      // Bulk rows.
      MatrixXd a_part = eps * MatrixXd(lam.asDiagonal()) +
                        kf * trace_block.transpose() * trace_block;
      s.topLeftCorner(op.nym_, op.nym_) =
          m_up * lam.asDiagonal() * a_part;
      s.topRightCorner(op.nym_, 2) =
          m_up * lam.asDiagonal() * (-kf * trace_block.transpose());
      // Boundary rows.
      s.bottomLeftCorner(2, op.nym_) =
          n_up * lam_g.asDiagonal() * (-kf * trace_block);
      s.bottomRightCorner(2, 2) =
          n_up * lam_g.asDiagonal() *
          (epsg * MatrixXd(lam_g.asDiagonal()) + kf * MatrixXd::Identity(2, 2));
      op.s_blocks_.push_back(s);
      op.lu_.emplace_back(MatrixXd::Identity(nb, nb) + dt * s);
    }
    return op;
  }

  double dt() const { return dt_; }

  // Applies the damping part S = -L to coefficient vectors.
  std::pair<VectorXd, VectorXd> apply_s(const VectorXd& a,
                                        const VectorXd& b) const {
    VectorXd sa(a.size()), sb(b.size());
    VectorXd z(nym_ + 2), sz(nym_ + 2);
    for (int fx = 0; fx < nxf_; ++fx) {
      gather(a, b, fx, z);
      sz = s_blocks_[fx] * z;
      scatter(sz, fx, sa, sb);
    }
    return {std::move(sa), std::move(sb)};
  }

  // Solves (I + dt S) x = y family by family.
  std::pair<VectorXd, VectorXd> solve(const VectorXd& ya,
                                      const VectorXd& yb) const {
    VectorXd xa(ya.size()), xb(yb.size());
    VectorXd z(nym_ + 2);
    for (int fx = 0; fx < nxf_; ++fx) {
      gather(ya, yb, fx, z);
      const VectorXd x = lu_[fx].solve(z);
      scatter(x, fx, xa, xb);
    }
    return {std::move(xa), std::move(xb)};
  }

 private:
  void gather(const VectorXd& a, const VectorXd& b, int fx, VectorXd& z) const {
    for (int m = 0; m < nym_; ++m) z[m] = a[fx * nym_ + m];
    z[nym_] = b[fx];
    z[nym_ + 1] = b[nxf_ + fx];
  }
  void scatter(const VectorXd& z, int fx, VectorXd& a, VectorXd& b) const {
    for (int m = 0; m < nym_; ++m) a[fx * nym_ + m] = z[m];
    b[fx] = z[nym_];
    b[nxf_ + fx] = z[nym_ + 1];
  }

  double dt_ = 0.0;
  int nym_ = 0, nxf_ = 0;
  std::vector<MatrixXd> s_blocks_;
  std::vector<Eigen::PartialPivLU<MatrixXd>> lu_;
};

// One semi-implicit step by defect correction against the stabilizer:
//   (I + dt S) x_new = x + dt * (drift(x) + S x) + noise(x)
// which agrees with the explicit step to O(dt^2) but damps the stiff linear
// part unconditionally.  `op` must have been built with dt == inc.dt.
inline GalerkinState step_semi_implicit(const GalerkinState& s,
                                        const WienerIncrement& inc,
                                        const SimDeps& deps,
                                        const ImexOperator& op,
                                        const VectorXd& na,
                                        const VectorXd& nb) {
  if (op.dt() != inc.dt)
    throw std::invalid_argument(
        "semi-implicit step: operator was factored for a different dt");
  const auto [da, db] = drift_from_derived(s, *deps.params, *deps.basis);
  const auto [sa, sb] = op.apply_s(s.a, s.b);
  const VectorXd ya = s.a + inc.dt * (da + sa) + na;
  const VectorXd yb = s.b + inc.dt * (db + sb) + nb;
  auto [a_new, b_new] = op.solve(ya, yb);
  if (!a_new.allFinite() || !b_new.allFinite()) {
    GalerkinState bad = s;
    bad.a = a_new;
    bad.b = b_new;
    bad.time = s.time + inc.dt;
    detail::throw_if_not_finite(bad, inc.dt);
  }
  GalerkinState out = make_state(a_new, b_new, deps, s.time + inc.dt);
  detail::throw_if_not_finite(out, inc.dt);
  return out;
}

inline GalerkinState step_semi_implicit(const GalerkinState& s,
                                        const WienerIncrement& inc,
                                        const SimDeps& deps,
                                        const ImexOperator& op) {
  const auto [na, nb] =
      noise_coefficient_increments(s, inc, *deps.noise, *deps.basis);
  return step_semi_implicit(s, inc, deps, op, na, nb);
}

struct PathResult {
  std::vector<double> times;             // one entry per stored ledger row
  std::vector<GalerkinState> snapshots;  // decimated states (always incl. final)
  std::vector<LedgerRow> rows;           // per-step diagnostics ledger
  std::optional<int> stopped_at;         // step index where the guard fired
  std::uint64_t master_seed = 0;
  std::uint64_t path_index = 0;
  double kappa_used = 0.0;

  const GalerkinState& final_state() const { return snapshots.back(); }
};

// Integrates one path from (a0, b0).  The ledger gets one row per time level
// including t = 0; stochastic pairing columns on row k describe the step from
// t_k to t_{k+1}.  If the guard norm reaches kappa the path stops there and
// `stopped_at` records the step index (series end at the trigger level).
inline PathResult simulate_path(const VectorXd& a0, const VectorXd& b0,
                                const SchemeConfig& cfg, const SimDeps& deps,
                                std::uint64_t master_seed,
                                std::uint64_t path_index) {
  PathResult out;
  out.master_seed = master_seed;
  out.path_index = path_index;

  GalerkinState state = make_state(a0, b0, deps, 0.0);
  LedgerRow row = diagnostics_row(state, *deps.pot_f, *deps.pot_g, *deps.params,
                                  *deps.noise, *deps.basis);
  cfg.validate(row.guard);
  out.kappa_used = cfg.resolved_kappa(row.guard);

  std::optional<ImexOperator> op;
  if (cfg.scheme == SchemeKind::semi_implicit)
    op = ImexOperator::build(*deps.params, *deps.basis, cfg.dt);

  out.times.push_back(0.0);
  out.rows.push_back(row);
  out.snapshots.push_back(state);

  for (int k = 0; k < cfg.n_steps; ++k) {
    const WienerIncrement inc =
        sample_increment(*deps.noise, master_seed, path_index,
                         static_cast<std::uint64_t>(k), cfg.dt);
    // Record the stochastic pairings of the step leaving this row's state.
    const auto [na, nb] =
        noise_coefficient_increments(state, inc, *deps.noise, *deps.basis);
    out.rows.back().inc_mu_noise = state.c.dot(na);
    out.rows.back().inc_theta_noise = state.d.dot(nb);
    out.rows.back().inc_phi_noise = state.a.dot(na);

    GalerkinState next =
        cfg.scheme == SchemeKind::explicit_em
            ? step_explicit(state, inc, deps, na, nb)
            : step_semi_implicit(state, inc, deps, *op, na, nb);
    row = diagnostics_row(next, *deps.pot_f, *deps.pot_g, *deps.params,
                          *deps.noise, *deps.basis);

    state = std::move(next);
    out.times.push_back(state.time);
    out.rows.push_back(row);
    const bool last = (k + 1 == cfg.n_steps);
    const bool fired = row.guard >= out.kappa_used;
    if (fired) out.stopped_at = k + 1;
    if (last || fired || ((k + 1) % cfg.snapshot_every == 0))
      out.snapshots.push_back(state);
    if (fired) break;
  }
  ito_identity_residual(out.rows, cfg.dt, deps.noise->shared_modes);
  return out;
}

}  // namespace chb
