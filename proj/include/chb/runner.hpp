#pragma once
// Experiment orchestration: builds simulations from a validated run
// configuration, executes path ensembles with a deterministic path-indexed
// reduction, evaluates the certificate checks for every experiment suite,
// and serializes all output artifacts (series, reports, plot data,
// manifest, summary).
//
// Determinism contract: identical config + master seed produce byte-
// identical output files regardless of the worker-thread count. To keep
// that promise, every file is written from the orchestrating thread after
// all workers have joined, aggregation order is fixed by path index, and
// no timing information is ever written to a file (wall time lives only in
// the in-memory summary for console display).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "chb/config.hpp"
#include "chb/diagnostics.hpp"

namespace chb {

// ---------------------------------------------------------------------------
// run options / summary types
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string output_dir_override;  // empty: use the config's directory
  int threads = 1;                  // worker threads for path ensembles
};

struct RunCheck {
  std::string name;
  bool pass = false;
  double margin = 0.0;  // >= 0 iff the check passed, by how much
  std::string detail;
};

struct RunSummary {
  std::string config_hash;
  std::string experiment;
  std::vector<RunCheck> checks;
  std::vector<std::string> files;  // every file written, in write order
  double wall_seconds = 0.0;       // console display only; never serialized
  bool numerical_abort = false;
  std::string abort_message;

  bool all_pass() const {
    if (numerical_abort) return false;
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// simulation bundle
// ---------------------------------------------------------------------------

// Owns everything a path simulation needs. Keep the object alive (and at a
// stable address) while SimDeps handed out by deps() are in use.
struct Simulation {
  SpectralBasis basis;
  PhysicalParams params;
  RegularizedPotential pot_f;
  RegularizedPotential pot_g;
  NoiseModel noise;
  SchemeConfig scheme;
  VectorXd a0;
  VectorXd b0;

  SimDeps deps() const {
    SimDeps d;
    d.params = &params;
    d.pot_f = &pot_f;
    d.pot_g = &pot_g;
    d.noise = &noise;
    d.basis = &basis;
    d.solver = nullptr;  // each worker attaches its own factored solver
    return d;
  }
};

// Variant knobs for ladder suites. The initial state is always generated on
// the *base* geometry and embedded into the (possibly refined) basis so all
// ladder levels start from the same continuum datum.
struct SimVariant {
  int geom_scale = 1;          // multiplies the mode counts per direction
  int dt_divisor = 1;          // dt /= k, n_steps *= k (same final time)
  double delta_override = -1;  // > 0: replace the regularization parameter
  bool zero_noise = false;     // force both noise amplitudes to zero
};

namespace detail {

// Coefficients of a coarse expansion re-indexed into a finer basis of the
// same family layout. Modes nest (same ordering prefix per x-family and per
// transverse index), so this is exact, not an approximation.
inline VectorXd embed_bulk(const VectorXd& coarse, const SpectralBasis& cb,
                           const SpectralBasis& fb) {
  const int cnxf = cb.geom.x_family_size(), cny = cb.geom.n_y_modes;
  const int fnxf = fb.geom.x_family_size(), fny = fb.geom.n_y_modes;
  VectorXd out = VectorXd::Zero(fb.n_bulk);
  for (int fx = 0; fx < cnxf; ++fx)
    for (int m = 0; m < cny; ++m)
      out[fx * fny + m] = coarse[fx * cny + m];
  (void)fnxf;
  return out;
}

inline VectorXd embed_boundary(const VectorXd& coarse, const SpectralBasis& cb,
                               const SpectralBasis& fb) {
  const int cnxf = cb.geom.x_family_size();
  const int fnxf = fb.geom.x_family_size();
  VectorXd out = VectorXd::Zero(fb.n_bnd);
  for (int c = 0; c < 2; ++c)
    for (int fx = 0; fx < cnxf; ++fx)
      out[c * fnxf + fx] = coarse[c * cnxf + fx];
  return out;
}

// || . ||^2_{L2} of the difference between a fine-basis endpoint and a
// coarse-basis endpoint, exact via orthonormality (fine-only modes count in
// full).
inline double endpoint_diff_sq(const VectorXd& fine_a, const VectorXd& fine_b,
                               const VectorXd& coarse_a,
                               const VectorXd& coarse_b,
                               const SpectralBasis& cb,
                               const SpectralBasis& fb) {
  const VectorXd ea = embed_bulk(coarse_a, cb, fb);
  const VectorXd eb = embed_boundary(coarse_b, cb, fb);
  return (fine_a - ea).squaredNorm() + (fine_b - eb).squaredNorm();
}

inline double h1_norm_sq(const VectorXd& a, const VectorXd& b,
                         const SpectralBasis& basis) {
  return a.squaredNorm() + a.dot(basis.bulk_eig.cwiseProduct(a)) +
         b.squaredNorm() + b.dot(basis.bnd_eig.cwiseProduct(b));
}

// Least-squares slope of log(y) against log(x); pairs with a nonpositive
// entry are skipped. Returns false when fewer than two usable pairs remain.
inline bool loglog_fit(const std::vector<double>& xs,
                       const std::vector<double>& ys, double& slope,
                       double& intercept) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i)
    if (xs[i] > 0.0 && ys[i] > 0.0 && std::isfinite(ys[i])) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    }
  if (lx.size() < 2) return false;
  const double n = double(lx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) return false;
  slope = (n * sxy - sx * sy) / den;
  intercept = (sy - slope * sx) / n;
  return true;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean
};

inline MeanSe mean_and_se(const std::vector<double>& v) {
  MeanSe r;
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - r.mean) * (x - r.mean);
  var /= std::max<double>(1.0, double(v.size()) - 1.0);
  r.se = std::sqrt(var / double(v.size()));
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// building simulations
// ---------------------------------------------------------------------------

inline Simulation build_simulation(const RunConfig& cfg,
                                   const SimVariant& var = {}) {
  Simulation sim;

  ChannelGeometry g = cfg.geometry;
  if (var.geom_scale > 1) {
    g.n_x_modes *= var.geom_scale;
    g.n_y_modes *= var.geom_scale;
    if (g.n_quad_x > 0) g.n_quad_x *= var.geom_scale;
    if (g.n_quad_y > 0) g.n_quad_y *= var.geom_scale;
  }
  sim.basis = build_basis(g);

  sim.params = cfg.params;

  const double d_eff = var.delta_override > 0.0 ? var.delta_override : cfg.delta;
  sim.pot_f = RegularizedPotential::make(
      SmoothPotential::polynomial(cfg.alpha, cfg.beta, cfg.shift_override),
      d_eff);
  sim.pot_g = RegularizedPotential::make(
      SmoothPotential::polynomial(cfg.alpha_gamma, cfg.beta_gamma,
                                  cfg.shift_override_gamma),
      d_eff);

  sim.noise = cfg.noise;
  if (var.zero_noise) {
    sim.noise.bulk_amplitude = 0.0;
    sim.noise.boundary_amplitude = 0.0;
  }

  sim.scheme = cfg.scheme;
  if (var.dt_divisor > 1) {
    sim.scheme.dt /= double(var.dt_divisor);
    sim.scheme.n_steps *= var.dt_divisor;
  }
  // Full-resolution state snapshots are never serialized; keep only what
  // final_state() needs and let the ledger rows carry the observables.
  sim.scheme.snapshot_every = std::max(1, sim.scheme.n_steps);

  if (var.geom_scale > 1) {
    const SpectralBasis base = build_basis(cfg.geometry);
    const auto [a0, b0] = cfg.initial_coefficients(base);
    sim.a0 = detail::embed_bulk(a0, base, sim.basis);
    sim.b0 = detail::embed_boundary(b0, base, sim.basis);
  } else {
    const auto [a0, b0] = cfg.initial_coefficients(sim.basis);
    sim.a0 = a0;
    sim.b0 = b0;
  }
  return sim;
}

// Guard norm of the initial state, for validating a manual kappa_guard
// before any path starts.
inline double initial_guard_norm(const Simulation& sim) {
  const VectorXd jump = sim.basis.trace_op * sim.a0 - sim.b0;
  const double g =
      sim.a0.squaredNorm() +
      sim.a0.dot(sim.basis.bulk_eig.cwiseProduct(sim.a0)) + jump.squaredNorm() +
      sim.b0.squaredNorm() + sim.b0.dot(sim.basis.bnd_eig.cwiseProduct(sim.b0));
  return std::sqrt(g);
}

// ---------------------------------------------------------------------------
// deterministic ensemble execution
// ---------------------------------------------------------------------------

struct EnsembleResult {
  std::vector<PathResult> paths;  // indexed by path, independent of workers
  bool aborted = false;
  int abort_path = -1;
  std::string abort_message;
  int n_guard_stops = 0;
};

// Runs all requested paths. Work is claimed by an atomic counter, results
// land in path-indexed slots, and no worker stops early: if several paths
// fail, the recorded abort is the one with the lowest index, independent of
// scheduling. Each worker owns its Brinkman solver because solving with
// state-dependent coefficients mutates the factorization.
inline EnsembleResult run_ensemble(const Simulation& sim, int n_paths,
                                   std::uint64_t master_seed, int threads) {
  EnsembleResult out;
  out.paths.resize(std::size_t(n_paths));
  std::vector<std::string> errors(static_cast<std::size_t>(n_paths));

  std::atomic<int> next{0};
  auto work = [&]() {
    SimDeps d = sim.deps();
    std::optional<BrinkmanSolver> solver;
    std::string solver_error;
    try {
      solver.emplace(BrinkmanSolver::make(sim.params, sim.basis));
      d.solver = &*solver;
    } catch (const std::exception& e) {
      solver_error = e.what();
    }
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_paths) break;
      if (!solver_error.empty()) {
        errors[std::size_t(i)] = solver_error;
        continue;
      }
      try {
        out.paths[std::size_t(i)] =
            simulate_path(sim.a0, sim.b0, sim.scheme, d, master_seed, i);
      } catch (const std::exception& e) {
        errors[std::size_t(i)] = e.what();
      }
    }
  };

  const int n_workers = std::clamp(std::min(threads, n_paths), 1, 64);
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(n_workers));
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (int i = 0; i < n_paths; ++i) {
    if (!errors[std::size_t(i)].empty()) {
      out.aborted = true;
      out.abort_path = i;
      out.abort_message = errors[std::size_t(i)];
      break;
    }
  }
  if (!out.aborted)
    for (const auto& p : out.paths)
      if (p.stopped_at) ++out.n_guard_stops;
  return out;
}

// ---------------------------------------------------------------------------
// stopped-path padding
// ---------------------------------------------------------------------------

namespace detail {

// Extends a guard-stopped series to full length with the stopped process:
// state descriptors (energies, norms, masses) hold their last value, every
// rate, source, correction, and pairing increment is zero from the stop on.
inline LedgerRow frozen_row(const LedgerRow& last, double t) {
  LedgerRow r = last;
  r.t = t;
  r.diss_visc = r.diss_drag = r.diss_slip = 0.0;
  r.diss_mob_bulk = r.diss_mob_bnd = 0.0;
  r.grad_u_sq = r.grad_mu_sq = r.grad_theta_sq = 0.0;
  r.grad_phi_sq = r.grad_phig_sq = 0.0;
  r.corr_grad_hs = r.corr_bnd_grad_hs = 0.0;
  r.corr_fpp = r.corr_gpp = r.corr_fpp_abs = r.corr_gpp_abs = 0.0;
  r.corr_robin_hs = r.corr_cross_noise = r.corr_phi_hs = 0.0;
  r.hs_bulk_l2 = r.hs_bulk_h1 = r.hs_bnd_l2 = r.hs_bnd_h1 = 0.0;
  r.inc_mu_noise = r.inc_theta_noise = r.inc_phi_noise = 0.0;
  r.cross_mobility = 0.0;
  r.residual = 0.0;
  return r;
}

inline std::vector<std::vector<LedgerRow>> padded_rows(
    const EnsembleResult& ens, const SchemeConfig& scheme) {
  const std::size_t target = std::size_t(scheme.n_steps) + 1;
  std::vector<std::vector<LedgerRow>> out;
  out.reserve(ens.paths.size());
  for (const auto& p : ens.paths) {
    std::vector<LedgerRow> rows = p.rows;
    while (rows.size() < target) {
      const double t = scheme.dt * double(rows.size());
      rows.push_back(frozen_row(rows.back(), t));
    }
    out.push_back(std::move(rows));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// output directory + serialization helpers
// ---------------------------------------------------------------------------

namespace detail {

struct OutputDir {
  std::filesystem::path root;
  std::vector<std::string> files;  // names in write order

  explicit OutputDir(const std::string& dir) : root(dir) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec)
      throw std::invalid_argument("cannot create output directory '" + dir +
                                  "': " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    const std::filesystem::path p = root / name;
    std::ofstream f(p, std::ios::binary);
    if (!f)
      throw std::runtime_error("cannot open '" + p.string() +
                               "' for writing");
    files.push_back(name);
    return f;
  }
};

inline void write_series_file(std::ofstream& f,
                              const std::vector<LedgerRow>& rows, int stride) {
  const auto names = ledger_column_names();
  f << "#";
  for (const auto& n : names) f << ' ' << n;
  f << '\n';
  const std::size_t last = rows.empty() ? 0 : rows.size() - 1;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (stride > 1 && k % std::size_t(stride) != 0 && k != last) continue;
    const auto vals = ledger_values(rows[k]);
    for (std::size_t c = 0; c < vals.size(); ++c)
      f << (c ? " " : "") << fmt17(vals[c]);
    f << '\n';
  }
}

// Cumulative energy-identity columns, accumulated exactly as the residual
// series is, so E_tot - rhs reproduces the recorded residual bit for bit.
inline void write_energy_stack(std::ofstream& f,
                               const std::vector<LedgerRow>& rows, double dt,
                               bool include_cross_term) {
  f << "# t E_tot E cum_diss cum_corr cum_noise rhs residual\n";
  if (rows.empty()) return;
  const double e0 = rows.front().E_tot;
  double diss_acc = 0.0, corr_acc = 0.0, noise_acc = 0.0;
  auto line = [&](const LedgerRow& r) {
    const double rhs = (e0 + corr_acc + noise_acc) - diss_acc;
    f << fmt17(r.t) << ' ' << fmt17(r.E_tot) << ' ' << fmt17(r.E) << ' '
      << fmt17(diss_acc) << ' ' << fmt17(corr_acc) << ' ' << fmt17(noise_acc)
      << ' ' << fmt17(rhs) << ' ' << fmt17((r.E_tot + diss_acc) -
                                           (e0 + corr_acc + noise_acc))
      << '\n';
  };
  line(rows.front());
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const LedgerRow& p = rows[k - 1];
    diss_acc += dt * (p.diss_visc + p.diss_drag + p.diss_slip +
                      p.diss_mob_bulk + p.diss_mob_bnd);
    double corr = p.corr_grad_hs + p.corr_bnd_grad_hs + p.corr_fpp +
                  p.corr_gpp + p.corr_robin_hs + p.corr_phi_hs;
    if (include_cross_term) corr += p.corr_cross_noise;
    corr_acc += dt * (corr + p.cross_mobility);
    noise_acc += p.inc_mu_noise + p.inc_theta_noise + p.inc_phi_noise;
    line(rows[k]);
  }
}

inline void write_ladder_plot(std::ofstream& f, const std::string& axis,
                              const std::vector<double>& xs,
                              const std::vector<double>& ys) {
  f << "# ladder " << axis << ": columns x value fitted\n";
  double slope = 0.0, intercept = 0.0;
  const bool have_fit = loglog_fit(xs, ys, slope, intercept);
  if (have_fit) f << "# slope = " << fmt17(slope) << '\n';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double fit =
        have_fit ? std::exp(intercept + slope * std::log(xs[i])) : 0.0;
    f << fmt17(xs[i]) << ' ' << fmt17(ys[i]) << ' ' << fmt17(fit) << '\n';
  }
}

inline void write_plot_manifest(OutputDir& od,
                                const std::vector<std::string>& figures) {
  auto f = od.open("plot_manifest.txt");
  f << "# plot data files (gnuplot-ready, one per figure)\n";
  for (const auto& name : figures) f << name << '\n';
}

inline void add_check(RunSummary& sum, const std::string& name, bool pass,
                      double margin, const std::string& detail) {
  sum.checks.push_back(RunCheck{name, pass, margin, detail});
}

inline std::string g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::string(buf);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// shared per-suite checks
// ---------------------------------------------------------------------------

namespace detail {

// Smallest per-row dissipation over a path set (each must be >= 0 up to
// roundoff), using only genuinely simulated rows.
inline double min_dissipation(const std::vector<PathResult>& paths) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : paths)
    for (const auto& r : p.rows) {
      m = std::min({m, r.diss_visc, r.diss_drag, r.diss_slip, r.diss_mob_bulk,
                    r.diss_mob_bnd});
    }
  return std::isfinite(m) ? m : 0.0;
}

inline bool all_rows_finite(const std::vector<PathResult>& paths) {
  for (const auto& p : paths)
    for (const auto& r : p.rows)
      for (double v : ledger_values(r))
        if (!std::isfinite(v)) return false;
  return true;
}

// Curvature-correction bound margins across a path set; returns the minimum
// margin (>= -tol required).
inline double min_correction_margin(const std::vector<PathResult>& paths,
                                    const Simulation& sim) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : paths)
    for (const auto& r : p.rows) {
      const auto cb =
          ito_correction_bound_margins(r, sim.pot_f, sim.pot_g, sim.params);
      m = std::min({m, cb.bulk, cb.boundary});
    }
  return std::isfinite(m) ? m : 0.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// experiment suites
// ---------------------------------------------------------------------------

namespace detail {

inline void suite_single_path(const RunConfig& cfg, const Simulation& sim,
                              const EnsembleResult& ens, RunSummary& sum,
                              OutputDir& od) {
  const auto& path = ens.paths.front();
  const auto& rows = path.rows;
  const bool noise_on =
      sim.noise.bulk_amplitude > 0.0 || sim.noise.boundary_amplitude > 0.0;

  {
    std::string note = "finished " + std::to_string(rows.size() - 1) + " steps";
    if (path.stopped_at)
      note = "guard stop at step " + std::to_string(*path.stopped_at) +
             " (series truncated there)";
    add_check(sum, "run_completed", true, 0.0, note);
  }

  const double min_d = min_dissipation(ens.paths);
  add_check(sum, "dissipations_nonnegative", min_d >= -1e-15, min_d + 1e-15,
            "min per-row dissipation " + g6(min_d));

  double min_e = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) min_e = std::min(min_e, r.E);
  add_check(sum, "energy_nonnegative", min_e >= -1e-12, min_e + 1e-12,
            "min free energy " + g6(min_e));

  const double min_cm = min_correction_margin(ens.paths, sim);
  add_check(sum, "correction_bounds_hold", min_cm >= -1e-12, min_cm + 1e-12,
            "min curvature-bound margin " + g6(min_cm));

  {
    bool holds = true;
    double min_margin = std::numeric_limits<double>::infinity();
    std::string err;
    const double rf = potential_ratio_certificate(sim.pot_f);
    const double rg = potential_ratio_certificate(sim.pot_g);
    try {
      for (const auto& r : rows) {
        const auto rep =
            chemical_potential_control(r, sim.params, sim.basis, rf, rg);
        holds = holds && rep.holds;
        min_margin = std::min(min_margin, rep.rhs - rep.lhs);
      }
    } catch (const std::exception& e) {
      holds = false;
      min_margin = -1.0;
      err = std::string(": ") + e.what();
    }
    if (!std::isfinite(min_margin)) min_margin = 0.0;
    add_check(sum, "chemical_potential_control", holds, min_margin,
              "min rhs-lhs margin " + g6(min_margin) + err);
  }

  {
    double max_res = 0.0;
    for (const auto& r : rows) max_res = std::max(max_res, std::abs(r.residual));
    add_check(sum, "residual_finite", std::isfinite(max_res), max_res,
              "max |energy-identity residual| " + g6(max_res));
  }

  if (!noise_on) {
    double drift = 0.0;
    for (const auto& r : rows)
      drift = std::max(drift, std::abs(r.mass_bulk - rows.front().mass_bulk) +
                                  std::abs(r.mass_bnd - rows.front().mass_bnd));
    add_check(sum, "mass_conserved", drift <= 1e-12, 1e-12 - drift,
              "max mass drift " + g6(drift));

    const double tol = 1e-8 * sim.scheme.dt;
    double worst = 0.0;
    for (std::size_t k = 1; k < rows.size(); ++k)
      worst = std::max(worst, rows[k].E - rows[k - 1].E);
    add_check(sum, "energy_nonincreasing", worst <= tol, tol - worst,
              "max per-step free-energy increase " + g6(worst));
  }

  if (cfg.write_series) {
    auto f = od.open("series_path0000.txt");
    write_series_file(f, rows, cfg.series_stride);
  }
  if (cfg.write_plots) {
    {
      auto f = od.open("plot_energy_stack.txt");
      write_energy_stack(f, rows, sim.scheme.dt, sim.noise.shared_modes);
    }
    write_plot_manifest(od, {"plot_energy_stack.txt"});
  }
}

inline void suite_monte_carlo(const RunConfig& cfg, const Simulation& sim,
                              const EnsembleResult& ens, RunSummary& sum,
                              OutputDir& od) {
  const int n = int(ens.paths.size());
  add_check(sum, "run_completed", true, 0.0,
            std::to_string(n) + " paths, " +
                std::to_string(ens.n_guard_stops) + " guard stops");

  const bool bulk_on = sim.noise.bulk_amplitude > 0.0;
  const bool bnd_on = sim.noise.boundary_amplitude > 0.0;
  auto mass_of = [&](const LedgerRow& r) {
    return bulk_on ? r.mass_bulk : r.mass_bnd;
  };

  if (bulk_on || bnd_on) {
    std::vector<double> dm(static_cast<std::size_t>(n)), xs(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) {
      const auto& rows = ens.paths[std::size_t(p)].rows;
      const double d = mass_of(rows.back()) - mass_of(rows.front());
      double qv = 0.0;
      for (std::size_t k = 1; k < rows.size(); ++k) {
        const double step = mass_of(rows[k]) - mass_of(rows[k - 1]);
        qv += step * step;
      }
      dm[std::size_t(p)] = d;
      xs[std::size_t(p)] = d * d - qv;
    }
    const auto m1 = mean_and_se(dm);
    const bool p1 = std::abs(m1.mean) <= 3.0 * m1.se || (m1.se == 0.0 && m1.mean == 0.0);
    add_check(sum, "mass_martingale", p1, 3.0 * m1.se - std::abs(m1.mean),
              "mean " + g6(m1.mean) + ", se " + g6(m1.se));

    const auto m2 = mean_and_se(xs);
    const bool p2 = std::abs(m2.mean) <= 3.0 * m2.se || (m2.se == 0.0 && m2.mean == 0.0);
    add_check(sum, "ito_isometry", p2, 3.0 * m2.se - std::abs(m2.mean),
              "mean (dM)^2 - QV = " + g6(m2.mean) + ", se " + g6(m2.se));
  } else {
    add_check(sum, "mass_martingale", true, 0.0, "skipped (noise disabled)");
    add_check(sum, "ito_isometry", true, 0.0, "skipped (noise disabled)");
  }

  const auto padded = padded_rows(ens, sim.scheme);

  if (n >= 64) {
    const double T = sim.scheme.dt * double(sim.scheme.n_steps);
    const double c2 = assemble_moment_constant(sim.noise, sim.pot_f, sim.pot_g,
                                               sim.params, sim.basis, T, 2);
    const double v0 = h1_norm_sq(sim.a0, sim.b0, sim.basis);
    const auto rep = moment_certificate(padded, 2, sim.scheme.dt, v0, c2);
    add_check(sum, "moment_certificate_r2",
              rep.all_finite && rep.all_within_bound,
              rep.all_finite && rep.all_within_bound ? 1.0 : -1.0,
              "bound " + g6(c2 * (1.0 + v0)) + ", largest mean " +
                  g6(rep.statistics.empty() ? 0.0 : rep.statistics[0].mean));
    if (cfg.write_reports) {
      auto f = od.open("moments_r2.txt");
      f << "# second-moment certificate\n";
      f << "init_v_norm_sq = " << fmt17(rep.init_v_norm_sq) << '\n';
      f << "assembled_constant = " << fmt17(rep.assembled_constant) << '\n';
      f << "# name mean stderr bound finite within\n";
      for (const auto& st : rep.statistics) {
        std::string nm = st.name;
        for (auto& ch : nm)
          if (ch == ' ') ch = '_';
        f << nm << ' ' << fmt17(st.mean) << ' ' << fmt17(st.stderr_) << ' '
          << fmt17(st.bound) << ' ' << int(st.finite) << ' '
          << int(st.within_bound) << '\n';
      }
    }
  } else {
    add_check(sum, "moment_certificate_r2", true, 0.0,
              "skipped (needs >= 64 paths, have " + std::to_string(n) + ")");
  }

  const double min_cm = min_correction_margin(ens.paths, sim);
  add_check(sum, "correction_bounds_hold", min_cm >= -1e-12, min_cm + 1e-12,
            "min curvature-bound margin " + g6(min_cm));

  {
    double acc = 0.0;
    for (const auto& p : ens.paths) acc += p.rows.back().residual *
                                            p.rows.back().residual;
    const double rms = std::sqrt(acc / double(n));
    add_check(sum, "residual_rms_finite", std::isfinite(rms), rms,
              "rms final residual " + g6(rms));
  }

  if (cfg.write_reports) {
    auto f = od.open("ensemble.txt");
    f << "# t mean_E mean_E_tot mean_mass_bulk mean_mass_bnd rms_residual\n";
    const std::size_t len = padded.front().size();
    for (std::size_t k = 0; k < len; ++k) {
      double e = 0, et = 0, mb = 0, mg = 0, rr = 0;
      for (const auto& rows : padded) {
        e += rows[k].E;
        et += rows[k].E_tot;
        mb += rows[k].mass_bulk;
        mg += rows[k].mass_bnd;
        rr += rows[k].residual * rows[k].residual;
      }
      const double inv = 1.0 / double(n);
      f << fmt17(sim.scheme.dt * double(k)) << ' ' << fmt17(e * inv) << ' '
        << fmt17(et * inv) << ' ' << fmt17(mb * inv) << ' ' << fmt17(mg * inv)
        << ' ' << fmt17(std::sqrt(rr * inv)) << '\n';
    }
  }
  if (cfg.write_series) {
    const int keep = std::min(4, n);
    for (int p = 0; p < keep; ++p) {
      char name[40];
      std::snprintf(name, sizeof name, "series_path%04d.txt", p);
      auto f = od.open(name);
      write_series_file(f, ens.paths[std::size_t(p)].rows, cfg.series_stride);
    }
  }
  if (cfg.write_plots) {
    {
      auto f = od.open("plot_energy_stack.txt");
      write_energy_stack(f, ens.paths.front().rows, sim.scheme.dt,
                         sim.noise.shared_modes);
    }
    write_plot_manifest(od, {"plot_energy_stack.txt"});
  }
}

inline void suite_ladder_dt(const RunConfig& cfg, RunSummary& sum,
                            OutputDir& od, int threads, bool& aborted,
                            std::string& abort_msg) {
  const bool noise_on = cfg.noise.bulk_amplitude > 0.0 ||
                        cfg.noise.boundary_amplitude > 0.0;
  std::vector<double> dts, values;
  int stops = 0;
  for (int level = 0; level < cfg.ladder_levels; ++level) {
    SimVariant var;
    var.dt_divisor = 1 << level;
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = "ladder:dt level " + std::to_string(level) + ", path " +
                  std::to_string(ens.abort_path) + ": " + ens.abort_message;
      return;
    }
    stops += ens.n_guard_stops;
    double acc = 0.0;
    for (const auto& p : ens.paths)
      acc += p.rows.back().residual * p.rows.back().residual;
    dts.push_back(sim.scheme.dt);
    values.push_back(std::sqrt(acc / double(cfg.n_paths)));
  }

  add_check(sum, "levels_completed", true, 0.0,
            std::to_string(cfg.ladder_levels) + " levels, " +
                std::to_string(stops) + " guard stops");

  const bool all_tiny =
      *std::max_element(values.begin(), values.end()) <= 1e-12;
  bool decreasing = true;
  for (std::size_t i = 1; i < values.size(); ++i)
    decreasing = decreasing && values[i] <= values[i - 1];
  add_check(sum, "residual_decreasing", decreasing || all_tiny,
            decreasing || all_tiny ? 1.0 : -1.0,
            all_tiny ? "all residuals below 1e-12"
                     : "coarsest " + g6(values.front()) + ", finest " +
                           g6(values.back()));

  const double want = noise_on ? 0.4 : 0.9;
  double slope = 0.0, intercept = 0.0;
  const bool have = loglog_fit(dts, values, slope, intercept);
  if (all_tiny) {
    add_check(sum, "residual_slope", true, 1.0, "degenerate (residuals ~ 0)");
  } else {
    add_check(sum, "residual_slope", have && slope >= want,
              have ? slope - want : -1.0,
              "fitted slope " + g6(have ? slope : 0.0) + " vs required " +
                  g6(want));
  }

  if (cfg.write_reports) {
    auto f = od.open("ladder_dt.txt");
    f << "# dt rms_final_residual\n";
    for (std::size_t i = 0; i < dts.size(); ++i)
      f << fmt17(dts[i]) << ' ' << fmt17(values[i]) << '\n';
  }
  if (cfg.write_plots) {
    {
      auto f = od.open("plot_ladder_dt.txt");
      write_ladder_plot(f, "dt", dts, values);
    }
    write_plot_manifest(od, {"plot_ladder_dt.txt"});
  }
}

struct LevelEndpoints {
  SpectralBasis basis;  // kept for cross-level embedding
  std::vector<VectorXd> a, b;
  double sup_e = 0.0;
};

inline void suite_ladder_n(const RunConfig& cfg, RunSummary& sum,
                           OutputDir& od, int threads, bool& aborted,
                           std::string& abort_msg) {
  std::vector<LevelEndpoints> levels;
  std::vector<int> nx;
  int stops = 0;
  for (int level = 0; level < cfg.ladder_levels; ++level) {
    SimVariant var;
    var.geom_scale = 1 << level;
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = "ladder:n level " + std::to_string(level) + ", path " +
                  std::to_string(ens.abort_path) + ": " + ens.abort_message;
      return;
    }
    stops += ens.n_guard_stops;
    LevelEndpoints lv;
    lv.basis = sim.basis;
    for (const auto& p : ens.paths) {
      lv.a.push_back(p.final_state().a);
      lv.b.push_back(p.final_state().b);
      for (const auto& r : p.rows) lv.sup_e = std::max(lv.sup_e, r.E_tot);
    }
    nx.push_back(sim.basis.geom.n_x_modes);
    levels.push_back(std::move(lv));
  }

  add_check(sum, "levels_completed", true, 0.0,
            std::to_string(cfg.ladder_levels) + " levels, " +
                std::to_string(stops) + " guard stops");

  std::vector<double> diffs(levels.size(), 0.0);
  for (std::size_t l = 1; l < levels.size(); ++l) {
    double acc = 0.0;
    for (std::size_t p = 0; p < levels[l].a.size(); ++p)
      acc += endpoint_diff_sq(levels[l].a[p], levels[l].b[p],
                              levels[l - 1].a[p], levels[l - 1].b[p],
                              levels[l - 1].basis, levels[l].basis);
    diffs[l] = std::sqrt(acc / double(levels[l].a.size()));
  }

  bool finite = true;
  double sup_e = 0.0;
  for (const auto& lv : levels) {
    finite = finite && std::isfinite(lv.sup_e);
    sup_e = std::max(sup_e, lv.sup_e);
  }
  for (double d : diffs) finite = finite && std::isfinite(d);
  add_check(sum, "endpoint_cauchy_finite", finite, finite ? 1.0 : -1.0,
            "consecutive rms endpoint gaps: " +
                [&] {
                  std::string s;
                  for (std::size_t l = 1; l < diffs.size(); ++l)
                    s += (l > 1 ? ", " : "") + g6(diffs[l]);
                  return s.empty() ? std::string("none") : s;
                }());
  add_check(sum, "energy_sup_finite", std::isfinite(sup_e), sup_e,
            "sup total energy over all levels " + g6(sup_e));

  if (cfg.write_reports) {
    auto f = od.open("ladder_n.txt");
    f << "# n_x sup_E_tot rms_endpoint_gap_to_prev\n";
    for (std::size_t l = 0; l < levels.size(); ++l)
      f << nx[l] << ' ' << fmt17(levels[l].sup_e) << ' ' << fmt17(diffs[l])
        << '\n';
  }
  if (cfg.write_plots) {
    std::vector<double> xs(nx.begin(), nx.end()), ys = diffs;
    xs.erase(xs.begin());
    ys.erase(ys.begin());
    {
      auto f = od.open("plot_ladder_n.txt");
      write_ladder_plot(f, "n", xs, ys);
    }
    write_plot_manifest(od, {"plot_ladder_n.txt"});
  }
}

inline void suite_ladder_delta(const RunConfig& cfg, RunSummary& sum,
                               OutputDir& od, int threads, bool& aborted,
                               std::string& abort_msg) {
  std::vector<std::vector<VectorXd>> as, bs;
  std::vector<double> deltas, sup_es;
  int stops = 0;
  for (int level = 0; level < cfg.ladder_levels; ++level) {
    SimVariant var;
    var.delta_override = cfg.delta / double(1 << level);
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = "ladder:delta level " + std::to_string(level) + ", path " +
                  std::to_string(ens.abort_path) + ": " + ens.abort_message;
      return;
    }
    stops += ens.n_guard_stops;
    std::vector<VectorXd> la, lb;
    double se = 0.0;
    for (const auto& p : ens.paths) {
      la.push_back(p.final_state().a);
      lb.push_back(p.final_state().b);
      for (const auto& r : p.rows) se = std::max(se, r.E_tot);
    }
    as.push_back(std::move(la));
    bs.push_back(std::move(lb));
    deltas.push_back(var.delta_override);
    sup_es.push_back(se);
  }

  add_check(sum, "levels_completed", true, 0.0,
            std::to_string(cfg.ladder_levels) + " levels, " +
                std::to_string(stops) + " guard stops");

  std::vector<double> diffs(deltas.size(), 0.0);
  for (std::size_t l = 1; l < deltas.size(); ++l) {
    double acc = 0.0;
    for (std::size_t p = 0; p < as[l].size(); ++p)
      acc += (as[l][p] - as[l - 1][p]).squaredNorm() +
             (bs[l][p] - bs[l - 1][p]).squaredNorm();
    diffs[l] = std::sqrt(acc / double(as[l].size()));
  }

  bool finite = true;
  double sup_e = 0.0;
  for (double s : sup_es) {
    finite = finite && std::isfinite(s);
    sup_e = std::max(sup_e, s);
  }
  for (double d : diffs) finite = finite && std::isfinite(d);
  add_check(sum, "endpoint_cauchy_finite", finite, finite ? 1.0 : -1.0,
            [&] {
              std::string s = "consecutive rms endpoint gaps: ";
              bool any = false;
              for (std::size_t l = 1; l < diffs.size(); ++l) {
                s += (any ? ", " : "") + g6(diffs[l]);
                any = true;
              }
              return any ? s : s + "none";
            }());
  add_check(sum, "energy_sup_finite", std::isfinite(sup_e), sup_e,
            "sup total energy over all levels " + g6(sup_e));

  if (cfg.write_reports) {
    auto f = od.open("ladder_delta.txt");
    f << "# delta sup_E_tot rms_endpoint_gap_to_prev\n";
    for (std::size_t l = 0; l < deltas.size(); ++l)
      f << fmt17(deltas[l]) << ' ' << fmt17(sup_es[l]) << ' ' << fmt17(diffs[l])
        << '\n';
  }
  if (cfg.write_plots) {
    std::vector<double> xs = deltas, ys = diffs;
    xs.erase(xs.begin());
    ys.erase(ys.begin());
    {
      auto f = od.open("plot_ladder_delta.txt");
      write_ladder_plot(f, "delta", xs, ys);
    }
    write_plot_manifest(od, {"plot_ladder_delta.txt"});
  }
}

// ---------------------------------------------------------------------------
// certificate suites
// ---------------------------------------------------------------------------

inline void suite_certify_yosida(const RunConfig& cfg, RunSummary& sum,
                                 OutputDir& od) {
  struct DeltaReport {
    double delta = 0.0;
    double p1 = 0.0;  // max |J + delta F~'(J) - s|
    double p2 = 0.0;  // max growth of |F_delta - F| vs the previous delta
    double p3 = 0.0;  // max sandwich violation
    double p4 = 0.0;  // empirical Lipschitz constant of F'_delta
    double p4_bound = 0.0;
    double p5 = 0.0;  // max shrink of the shifted |F'_delta + c s| ladder
    double p6 = 0.0;  // max of |J(0)|, |F'_delta(0)|, |F_delta(0) - F(0)|
  };

  const double lo = -4.0, hi = 4.0, h = 0.01;
  const int n = int(std::lround((hi - lo) / h)) + 1;

  struct PotCase {
    const char* label;
    double alpha, beta, shift;
  };
  const PotCase cases[] = {
      {"F", cfg.alpha, cfg.beta, cfg.shift_override},
      {"G", cfg.alpha_gamma, cfg.beta_gamma, cfg.shift_override_gamma}};

  double worst_p1 = 0.0, worst_p2 = 0.0, worst_p3 = 0.0, worst_p4 = -1.0;
  double worst_p5 = 0.0, worst_p6 = 0.0, value_scale = 0.0;

  std::vector<std::pair<std::string, DeltaReport>> table;

  for (const auto& pc : cases) {
    const auto base = SmoothPotential::polynomial(pc.alpha, pc.beta, pc.shift);
    std::vector<double> prev_dev, prev_absfp;
    for (double del : {0.5, 0.1, 0.01}) {
      const auto pot = RegularizedPotential::make(base, del);
      DeltaReport rep;
      rep.delta = del;
      std::vector<double> dev(n), absfp(n), fp(n);
      for (int i = 0; i < n; ++i) {
        const double s = lo + h * i;
        const double J = resolvent(s, pot);
        rep.p1 = std::max(rep.p1,
                          std::abs(J + del * pot.shifted_derivative(J) - s));
        const double fd = yosida_value(s, pot);
        const double f = base.value(s);
        dev[i] = std::abs(fd - f);
        fp[i] = yosida_derivative(s, pot);
        // the monotone-ladder property holds for the shifted (convexified)
        // derivative; the raw regularized derivative can change sign along
        // the ladder, so it is the shifted form that is certified
        absfp[i] = std::abs(fp[i] + base.convexity_shift * s);
        // sandwich on the convexified envelope: shifted value at the
        // resolvent point <= shifted regularized value <= shifted value
        const double shift = 0.5 * base.convexity_shift;
        const double tf = base.value(s) + shift * s * s;
        const double tfd = fd + shift * s * s;
        const double tfj = base.value(J) + shift * J * J;
        value_scale = std::max(value_scale, std::abs(tf));
        rep.p3 = std::max({rep.p3, tfj - tfd, tfd - tf});
      }
      for (int i = 0; i + 1 < n; ++i)
        rep.p4 = std::max(rep.p4, std::abs(fp[i + 1] - fp[i]) / h);
      rep.p4_bound = yosida_second_derivative_bound(pot);
      {
        const double J0 = resolvent(0.0, pot);
        const double fp0 = yosida_derivative(0.0, pot);
        const double v0 = yosida_value(0.0, pot) - base.value(0.0);
        rep.p6 = std::max({std::abs(J0), std::abs(fp0), std::abs(v0)});
      }
      if (!prev_dev.empty()) {
        for (int i = 0; i < n; ++i) {
          // deviation from F shrinks, the shifted derivative magnitude grows
          rep.p2 = std::max(rep.p2, dev[i] - prev_dev[i]);
          rep.p5 = std::max(rep.p5, prev_absfp[i] - absfp[i]);
        }
      }
      prev_dev = dev;
      prev_absfp = absfp;

      worst_p1 = std::max(worst_p1, rep.p1);
      worst_p2 = std::max(worst_p2, rep.p2);
      worst_p3 = std::max(worst_p3, rep.p3);
      worst_p4 = std::max(worst_p4, rep.p4 - (rep.p4_bound + 1e-9));
      worst_p5 = std::max(worst_p5, rep.p5);
      worst_p6 = std::max(worst_p6, rep.p6);
      table.emplace_back(pc.label, rep);
    }
  }

  add_check(sum, "yosida_p1_identity", worst_p1 <= 1e-9, 1e-9 - worst_p1,
            "max resolvent identity defect " + g6(worst_p1));
  add_check(sum, "yosida_p2_monotone", worst_p2 <= 1e-9, 1e-9 - worst_p2,
            "max growth of |F_delta - F| along the delta ladder " +
                g6(worst_p2));
  const double tol3 = 1e-10 + 1e-13 * value_scale;
  add_check(sum, "yosida_p3_sandwich", worst_p3 <= tol3, tol3 - worst_p3,
            "max sandwich violation " + g6(worst_p3));
  add_check(sum, "yosida_p4_lipschitz", worst_p4 <= 0.0, -worst_p4,
            "max (empirical Lipschitz - certified bound - 1e-9) " +
                g6(worst_p4));
  add_check(sum, "yosida_p5_derivative_monotone", worst_p5 <= 1e-9,
            1e-9 - worst_p5,
            "max shrink of the shifted-derivative ladder " + g6(worst_p5));
  add_check(sum, "yosida_p6_zero_fixed", worst_p6 <= 1e-15, 1e-15 - worst_p6,
            "max deviation at s = 0: " + g6(worst_p6));

  {
    // closed-form cross-check: unit quartic well, delta = 1, s = 2 gives
    // resolvent 1 (root of x + x^3 = 2) and regularized derivative -1
    auto pot = RegularizedPotential::make(SmoothPotential::polynomial(1.0, 1.0),
                                          0.5);
    pot.delta = 1.0 - 1e-15;  // the stored parameter stays inside (0, 1)
    const double J = resolvent(2.0, pot);
    const double fp = yosida_derivative(2.0, pot);
    const double err = std::max(std::abs(J - 1.0), std::abs(fp + 1.0));
    add_check(sum, "yosida_analytic_case", err <= 1e-12, 1e-12 - err,
              "resolvent " + g6(J) + ", derivative " + g6(fp));
  }

  if (cfg.write_reports) {
    auto f = od.open("yosida_report.txt");
    f << "# regularized-potential suite: max deviations per potential and "
         "delta\n";
    f << "# p2/p5 compare against the previous (larger) delta; first level "
         "is 0\n";
    f << "# potential delta p1_identity p2_value_monotone p3_sandwich "
         "p4_lipschitz p4_bound p5_derivative_monotone p6_zero\n";
    for (const auto& [label, rep] : table)
      f << label << ' ' << fmt17(rep.delta) << ' ' << fmt17(rep.p1) << ' '
        << fmt17(rep.p2) << ' ' << fmt17(rep.p3) << ' ' << fmt17(rep.p4) << ' '
        << fmt17(rep.p4_bound) << ' ' << fmt17(rep.p5) << ' ' << fmt17(rep.p6)
        << '\n';
  }
  if (cfg.write_plots) write_plot_manifest(od, {});
}

inline void suite_certify_korn(const RunConfig& cfg, const Simulation& sim,
                               RunSummary& sum, OutputDir& od) {
  const int n_samples = 50;
  const auto cert =
      korn_poincare_certificate(sim.basis, n_samples, cfg.master_seed);
  const auto rerun =
      korn_poincare_certificate(sim.basis, n_samples, cfg.master_seed);

  add_check(sum, "korn_ratio_finite",
            std::isfinite(cert.korn_ratio_max) && cert.korn_ratio_max > 0.0,
            cert.korn_ratio_max,
            "max |grad u|^2 / |Du|^2 ratio " + g6(cert.korn_ratio_max) +
                " over " + std::to_string(cert.n_samples - cert.skipped) +
                " samples");
  add_check(sum, "poincare_ratio_finite",
            std::isfinite(cert.poincare_ratio_max) &&
                cert.poincare_ratio_max > 0.0,
            cert.poincare_ratio_max,
            "max bulk-surface ratio " + g6(cert.poincare_ratio_max));
  {
    const bool same = cert.korn_ratio_max == rerun.korn_ratio_max &&
                      cert.poincare_ratio_max == rerun.poincare_ratio_max &&
                      cert.skipped == rerun.skipped;
    add_check(sum, "certificate_reproducible", same, same ? 1.0 : -1.0,
              same ? "identical on rerun with the same seed"
                   : "rerun diverged");
  }

  {
    double min_eig = std::numeric_limits<double>::infinity();
    double max_asym = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      VectorXd a(sim.basis.n_bulk), b(sim.basis.n_bnd);
      for (int i = 0; i < a.size(); ++i)
        a[i] = 0.5 * keyed_normal(cfg.master_seed, std::uint64_t(s), 0,
                                  std::uint64_t(i), 21);
      for (int j = 0; j < b.size(); ++j)
        b[j] = 0.5 * keyed_normal(cfg.master_seed, std::uint64_t(s), 1,
                                  std::uint64_t(j), 22);
      const MatrixXd A = brinkman_assemble(a, b, sim.params, sim.basis);
      max_asym = std::max(max_asym, (A - A.transpose()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(A,
                                                 Eigen::EigenvaluesOnly);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    }
    add_check(sum, "brinkman_spd", min_eig > 0.0, min_eig,
              "smallest eigenvalue over " + std::to_string(n_samples) +
                  " random states " + g6(min_eig));
    add_check(sum, "brinkman_symmetric", max_asym <= 1e-13, 1e-13 - max_asym,
              "max |A - A^T| entry " + g6(max_asym));
  }

  if (cfg.write_reports) {
    auto f = od.open("korn_report.txt");
    f << "# coercivity certificates\n";
    f << "n_samples = " << cert.n_samples << '\n';
    f << "skipped = " << cert.skipped << '\n';
    f << "korn_ratio_max = " << fmt17(cert.korn_ratio_max) << '\n';
    f << "poincare_ratio_max = " << fmt17(cert.poincare_ratio_max) << '\n';
  }
  if (cfg.write_plots) write_plot_manifest(od, {});
}

inline void suite_certify_energy(const RunConfig& cfg, RunSummary& sum,
                                 OutputDir& od, int threads, bool& aborted,
                                 std::string& abort_msg) {
  struct Level {
    double dt = 0.0;
    double worst_rise = 0.0;
    double mass_drift = 0.0;
    double defect_c = 0.0;
    std::vector<LedgerRow> rows;
  };
  std::vector<Level> levels;
  for (int divisor : {1, 2}) {
    SimVariant var;
    var.zero_noise = true;
    var.dt_divisor = divisor;
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, 1, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = "certify:energy dt/" + std::to_string(divisor) + ": " +
                  ens.abort_message;
      return;
    }
    Level lv;
    lv.dt = sim.scheme.dt;
    const auto& rows = ens.paths.front().rows;
    for (std::size_t k = 1; k < rows.size(); ++k) {
      lv.worst_rise = std::max(lv.worst_rise, rows[k].E - rows[k - 1].E);
      const LedgerRow& p = rows[k - 1];
      const double diss = p.diss_visc + p.diss_drag + p.diss_slip +
                          p.diss_mob_bulk + p.diss_mob_bnd;
      const double defect = rows[k].E - rows[k - 1].E + lv.dt * diss;
      lv.defect_c = std::max(lv.defect_c, std::abs(defect) / (lv.dt * lv.dt));
    }
    for (const auto& r : rows)
      lv.mass_drift = std::max(
          lv.mass_drift, std::abs(r.mass_bulk - rows.front().mass_bulk) +
                             std::abs(r.mass_bnd - rows.front().mass_bnd));
    lv.rows = rows;
    levels.push_back(std::move(lv));
  }

  {
    double worst = 0.0, tol = 0.0;
    for (const auto& lv : levels) {
      tol = std::max(tol, 1e-8 * lv.dt);
      worst = std::max(worst, lv.worst_rise);
    }
    add_check(sum, "energy_nonincreasing", worst <= tol, tol - worst,
              "max per-step energy increase " + g6(worst) + " (tolerance " +
                  g6(tol) + ")");
  }
  {
    double drift = 0.0;
    for (const auto& lv : levels) drift = std::max(drift, lv.mass_drift);
    add_check(sum, "mass_conserved", drift <= 1e-12, 1e-12 - drift,
              "max mass drift " + g6(drift));
  }
  {
    const double c1 = levels[0].defect_c, c2 = levels[1].defect_c;
    const bool finite = std::isfinite(c1) && std::isfinite(c2);
    add_check(sum, "defect_constant_finite", finite, finite ? 1.0 : -1.0,
              "per-step balance defect / dt^2: " + g6(c1) + " at dt, " +
                  g6(c2) + " at dt/2");
    const double floor = 1e-10;
    const double ratio = (std::max(c1, c2) + floor) / (std::min(c1, c2) + floor);
    add_check(sum, "defect_constant_stable", ratio < 4.0, 4.0 - ratio,
              "ratio across dt halving " + g6(ratio));
  }

  if (cfg.write_reports) {
    auto f = od.open("energy_report.txt");
    f << "# deterministic energy-dissipation certificate (noise forced "
         "off)\n";
    f << "# dt max_step_increase mass_drift defect_constant\n";
    for (const auto& lv : levels)
      f << fmt17(lv.dt) << ' ' << fmt17(lv.worst_rise) << ' '
        << fmt17(lv.mass_drift) << ' ' << fmt17(lv.defect_c) << '\n';
  }
  if (cfg.write_series) {
    auto f = od.open("series_path0000.txt");
    write_series_file(f, levels[0].rows, cfg.series_stride);
  }
  if (cfg.write_plots) {
    {
      auto f = od.open("plot_energy_stack.txt");
      write_energy_stack(f, levels[0].rows, levels[0].dt, false);
    }
    write_plot_manifest(od, {"plot_energy_stack.txt"});
  }
}

inline void suite_certify_moments(const RunConfig& cfg, RunSummary& sum,
                                  OutputDir& od, int threads, bool& aborted,
                                  std::string& abort_msg) {
  struct LevelRep {
    int n_x = 0;
    MomentReport r2, r4;
  };
  std::vector<LevelRep> levels;
  for (int level = 0; level < cfg.ladder_levels; ++level) {
    SimVariant var;
    var.geom_scale = 1 << level;
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = "certify:moments level " + std::to_string(level) +
                  ", path " + std::to_string(ens.abort_path) + ": " +
                  ens.abort_message;
      return;
    }
    const auto padded = padded_rows(ens, sim.scheme);
    const double T = sim.scheme.dt * double(sim.scheme.n_steps);
    const double v0 = h1_norm_sq(sim.a0, sim.b0, sim.basis);
    LevelRep lv;
    lv.n_x = sim.basis.geom.n_x_modes;
    for (int r : {2, 4}) {
      const double c = assemble_moment_constant(sim.noise, sim.pot_f,
                                                sim.pot_g, sim.params,
                                                sim.basis, T, r);
      auto rep = moment_certificate(padded, r, sim.scheme.dt, v0, c);
      (r == 2 ? lv.r2 : lv.r4) = std::move(rep);
    }
    levels.push_back(std::move(lv));
  }

  bool finite = true, within = true;
  for (const auto& lv : levels) {
    finite = finite && lv.r2.all_finite && lv.r4.all_finite;
    within = within && lv.r2.all_within_bound && lv.r4.all_within_bound;
  }
  add_check(sum, "moments_all_finite", finite, finite ? 1.0 : -1.0,
            "all five statistics, both orders, every level");
  add_check(sum, "moments_within_bound", within, within ? 1.0 : -1.0,
            "every statistic below its assembled structural bound");

  auto stability = [&](int order) {
    const auto& a = order == 2 ? levels[levels.size() - 2].r2
                               : levels[levels.size() - 2].r4;
    const auto& b =
        order == 2 ? levels.back().r2 : levels.back().r4;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.statistics.size(); ++i) {
      const double ma = a.statistics[i].mean, mb = b.statistics[i].mean;
      const double denom = std::max({std::abs(ma), std::abs(mb), 1e-12});
      worst = std::max(worst, std::abs(mb - ma) / denom);
    }
    return worst;
  };
  const double s2 = stability(2), s4 = stability(4);
  add_check(sum, "moments_stable_r2", s2 < 0.20, 0.20 - s2,
            "max relative gap between finest levels " + g6(s2));
  add_check(sum, "moments_stable_r4", s4 < 0.20, 0.20 - s4,
            "max relative gap between finest levels " + g6(s4));

  if (cfg.write_reports) {
    auto f = od.open("moments_report.txt");
    f << "# moment statistics per refinement level\n";
    f << "# n_x r name mean stderr bound\n";
    for (const auto& lv : levels)
      for (const auto* rep : {&lv.r2, &lv.r4})
        for (const auto& st : rep->statistics) {
          std::string nm = st.name;
          for (auto& ch : nm)
            if (ch == ' ') ch = '_';
          f << lv.n_x << ' ' << rep->r_order << ' ' << nm << ' '
            << fmt17(st.mean) << ' ' << fmt17(st.stderr_) << ' '
            << fmt17(st.bound) << '\n';
        }
  }
  if (cfg.write_plots) {
    {
      auto f = od.open("plot_moments.txt");
      f << "# moment estimates with standard errors, per level\n";
      f << "# n_x r stat_index mean stderr bound\n";
      for (const auto& lv : levels)
        for (const auto* rep : {&lv.r2, &lv.r4})
          for (std::size_t i = 0; i < rep->statistics.size(); ++i) {
            const auto& st = rep->statistics[i];
            f << lv.n_x << ' ' << rep->r_order << ' ' << i << ' '
              << fmt17(st.mean) << ' ' << fmt17(st.stderr_) << ' '
              << fmt17(st.bound) << '\n';
          }
    }
    write_plot_manifest(od, {"plot_moments.txt"});
  }
}

inline void suite_certify_ineq329(const RunConfig& cfg, RunSummary& sum,
                                  OutputDir& od, int threads, bool& aborted,
                                  std::string& abort_msg) {
  struct RunRep {
    std::string label;
    EnergyInequalityReport rep;
    double min_diss = 0.0;
  };
  std::vector<RunRep> reps;
  const SimVariant base{}, half{1, 2, -1.0, false}, fine{2, 1, -1.0, false};
  const std::pair<const char*, SimVariant> runs[] = {
      {"base", base}, {"dt_half", half}, {"n_double", fine}};
  for (const auto& [label, var] : runs) {
    const Simulation sim = build_simulation(cfg, var);
    const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
    if (ens.aborted) {
      aborted = true;
      abort_msg = std::string("certify:ineq329 ") + label + ", path " +
                  std::to_string(ens.abort_path) + ": " + ens.abort_message;
      return;
    }
    const auto padded = padded_rows(ens, sim.scheme);
    RunRep rr;
    rr.label = label;
    rr.rep = energy_inequality_fit(padded, sim.scheme.dt);
    rr.min_diss = min_dissipation(ens.paths);
    reps.push_back(std::move(rr));
  }

  {
    bool finite = true;
    for (const auto& rr : reps) finite = finite && rr.rep.finite;
    std::string d;
    for (const auto& rr : reps)
      d += (d.empty() ? "" : ", ") + rr.label + " " + g6(rr.rep.fitted_constant);
    add_check(sum, "constants_finite", finite, finite ? 1.0 : -1.0, d);
  }
  {
    double cmin = std::numeric_limits<double>::infinity(), cmax = 0.0;
    for (const auto& rr : reps) {
      cmin = std::min(cmin, rr.rep.fitted_constant);
      cmax = std::max(cmax, rr.rep.fitted_constant);
    }
    const double ratio = cmax / std::max(cmin, 1e-300);
    add_check(sum, "constants_stable", ratio < 2.0, 2.0 - ratio,
              "max/min fitted constant across refinements " + g6(ratio));
  }
  {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& rr : reps) m = std::min(m, rr.min_diss);
    add_check(sum, "dissipations_nonnegative", m >= -1e-15, m + 1e-15,
              "min per-row dissipation over all runs " + g6(m));
  }

  if (cfg.write_reports) {
    auto f = od.open("ineq329_report.txt");
    f << "# fitted energy-inequality constants per refinement\n";
    f << "# run lhs rhs_bracket fitted_constant min_dissipation\n";
    for (const auto& rr : reps)
      f << rr.label << ' ' << fmt17(rr.rep.lhs) << ' '
        << fmt17(rr.rep.rhs_bracket) << ' ' << fmt17(rr.rep.fitted_constant)
        << ' ' << fmt17(rr.min_diss) << '\n';
  }
  if (cfg.write_plots) write_plot_manifest(od, {});
}

inline void write_summary_file(OutputDir& od, const RunSummary& sum) {
  auto f = od.open("summary.txt");
  f << "# run summary\n";
  f << "config_hash = " << sum.config_hash << '\n';
  f << "experiment = " << sum.experiment << '\n';
  std::string result = sum.numerical_abort
                           ? "numerical-abort"
                           : (sum.all_pass() ? "pass" : "fail");
  f << "result = " << result << '\n';
  if (sum.numerical_abort) f << "abort = " << sum.abort_message << '\n';
  f << "checks:\n";
  for (const auto& c : sum.checks)
    f << "  " << (c.pass ? "pass" : "FAIL") << ' ' << c.name
      << " margin= " << fmt17(c.margin) << " :: " << c.detail << '\n';
  f << "files:\n";
  for (const auto& name : od.files) f << "  " << name << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// top-level run
// ---------------------------------------------------------------------------

inline RunSummary run(const RunConfig& cfg, const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();

  cfg.validate();
  const int threads = std::max(1, opt.threads);
  const std::string out_dir = opt.output_dir_override.empty()
                                  ? cfg.output_directory
                                  : opt.output_dir_override;

  RunSummary sum;
  sum.experiment = experiment_name(cfg.experiment);
  sum.config_hash = config_hash(cfg);

  detail::OutputDir od(out_dir);
  {
    auto f = od.open("config.txt");
    f << serialize_config(cfg);
  }

  bool aborted = false;
  std::string abort_msg;

  switch (cfg.experiment) {
    case ExperimentKind::single_path: {
      const Simulation sim = build_simulation(cfg);
      cfg.scheme.validate(initial_guard_norm(sim));
      const auto ens = run_ensemble(sim, 1, cfg.master_seed, threads);
      if (ens.aborted) {
        aborted = true;
        abort_msg = "path 0: " + ens.abort_message;
      } else {
        detail::suite_single_path(cfg, sim, ens, sum, od);
      }
      break;
    }
    case ExperimentKind::monte_carlo: {
      const Simulation sim = build_simulation(cfg);
      cfg.scheme.validate(initial_guard_norm(sim));
      const auto ens = run_ensemble(sim, cfg.n_paths, cfg.master_seed, threads);
      if (ens.aborted) {
        aborted = true;
        abort_msg = "path " + std::to_string(ens.abort_path) + ": " +
                    ens.abort_message;
      } else {
        detail::suite_monte_carlo(cfg, sim, ens, sum, od);
      }
      break;
    }
    case ExperimentKind::ladder_dt:
      detail::suite_ladder_dt(cfg, sum, od, threads, aborted, abort_msg);
      break;
    case ExperimentKind::ladder_n:
      detail::suite_ladder_n(cfg, sum, od, threads, aborted, abort_msg);
      break;
    case ExperimentKind::ladder_delta:
      detail::suite_ladder_delta(cfg, sum, od, threads, aborted, abort_msg);
      break;
    case ExperimentKind::certify_yosida:
      detail::suite_certify_yosida(cfg, sum, od);
      break;
    case ExperimentKind::certify_korn: {
      const Simulation sim = build_simulation(cfg);
      detail::suite_certify_korn(cfg, sim, sum, od);
      break;
    }
    case ExperimentKind::certify_energy:
      detail::suite_certify_energy(cfg, sum, od, threads, aborted, abort_msg);
      break;
    case ExperimentKind::certify_moments:
      detail::suite_certify_moments(cfg, sum, od, threads, aborted, abort_msg);
      break;
    case ExperimentKind::certify_ineq329:
      detail::suite_certify_ineq329(cfg, sum, od, threads, aborted, abort_msg);
      break;
  }

  if (aborted) {
    sum.numerical_abort = true;
    sum.abort_message = abort_msg;
  }

  detail::write_summary_file(od, sum);
  sum.files = od.files;

  sum.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return sum;
}

}  // namespace chb
