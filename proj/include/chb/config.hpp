#pragma once
// Run configuration: an INI-style structured-text format with total
// validation (every violation reported, field-precise), canonical
// serialization that round-trips bit-exactly, and builders that produce the
// simulation objects.  Nothing downstream ever sees an out-of-contract
// value: parse_config only hands out configs whose violation list is empty.

#include <chb/galerkin.hpp>
#include <chb/noise.hpp>
#include <chb/timestepper.hpp>

#include <cctype>
#include <climits>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace chb {

enum class ExperimentKind {
  single_path,
  monte_carlo,
  ladder_dt,
  ladder_n,
  ladder_delta,
  certify_yosida,
  certify_korn,
  certify_energy,
  certify_moments,
  certify_ineq329,
};

inline const char* experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::single_path: return "single-path";
    case ExperimentKind::monte_carlo: return "monte-carlo";
    case ExperimentKind::ladder_dt: return "ladder:dt";
    case ExperimentKind::ladder_n: return "ladder:n";
    case ExperimentKind::ladder_delta: return "ladder:delta";
    case ExperimentKind::certify_yosida: return "certify:yosida";
    case ExperimentKind::certify_korn: return "certify:korn";
    case ExperimentKind::certify_energy: return "certify:energy";
    case ExperimentKind::certify_moments: return "certify:moments";
    case ExperimentKind::certify_ineq329: return "certify:ineq329";
  }
  return "?";
}

inline std::optional<ExperimentKind> experiment_from_name(const std::string& s) {
  for (ExperimentKind k :
       {ExperimentKind::single_path, ExperimentKind::monte_carlo,
        ExperimentKind::ladder_dt, ExperimentKind::ladder_n,
        ExperimentKind::ladder_delta, ExperimentKind::certify_yosida,
        ExperimentKind::certify_korn, ExperimentKind::certify_energy,
        ExperimentKind::certify_moments, ExperimentKind::certify_ineq329})
    if (s == experiment_name(k)) return k;
  return std::nullopt;
}

// initial-field preset: a named closed form projected onto the basis
struct InitialSpec {
  enum class Kind { zero, constant, cos_x, cos_xy, random, trace } kind =
      Kind::zero;
  double value = 0.0;  // amplitude / constant where applicable
};

namespace detail {

inline std::string fmt17(double x) {
  char b[48];
  std::snprintf(b, sizeof b, "%.17g", x);
  return b;
}

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

inline bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

inline bool parse_uint64(const std::string& s, std::uint64_t& out) {
  if (s.empty() || s[0] == '-') return false;
  char* end = nullptr;
  out = std::strtoull(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") { out = true; return true; }
  if (s == "false" || s == "0") { out = false; return true; }
  return false;
}

}  // namespace detail

// "constant:v" or "tanh:base,delta"
inline std::optional<CoefficientFn> parse_coefficient(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return std::nullopt;
  const std::string head = s.substr(0, colon), rest = s.substr(colon + 1);
  if (head == "constant") {
    double v;
    if (!detail::parse_double(rest, v)) return std::nullopt;
    return CoefficientFn::constant(v);
  }
  if (head == "tanh") {
    const auto comma = rest.find(',');
    if (comma == std::string::npos) return std::nullopt;
    double base, delta;
    if (!detail::parse_double(rest.substr(0, comma), base) ||
        !detail::parse_double(rest.substr(comma + 1), delta))
      return std::nullopt;
    return CoefficientFn::tanh_ramp(base, delta);
  }
  return std::nullopt;
}

// "zero", "trace", or "name:number"
inline std::optional<InitialSpec> parse_initial(const std::string& s) {
  InitialSpec out;
  if (s == "zero") { out.kind = InitialSpec::Kind::zero; return out; }
  if (s == "trace") { out.kind = InitialSpec::Kind::trace; return out; }
  const auto colon = s.find(':');
  if (colon == std::string::npos) return std::nullopt;
  const std::string head = s.substr(0, colon);
  double v;
  if (!detail::parse_double(s.substr(colon + 1), v)) return std::nullopt;
  out.value = v;
  if (head == "constant") out.kind = InitialSpec::Kind::constant;
  else if (head == "cos_x") out.kind = InitialSpec::Kind::cos_x;
  else if (head == "cos_xy") out.kind = InitialSpec::Kind::cos_xy;
  else if (head == "random") out.kind = InitialSpec::Kind::random;
  else return std::nullopt;
  return out;
}

inline std::string initial_to_string(const InitialSpec& s) {
  switch (s.kind) {
    case InitialSpec::Kind::zero: return "zero";
    case InitialSpec::Kind::trace: return "trace";
    case InitialSpec::Kind::constant: return "constant:" + detail::fmt17(s.value);
    case InitialSpec::Kind::cos_x: return "cos_x:" + detail::fmt17(s.value);
    case InitialSpec::Kind::cos_xy: return "cos_xy:" + detail::fmt17(s.value);
    case InitialSpec::Kind::random: return "random:" + detail::fmt17(s.value);
  }
  return "zero";
}

struct RunConfig {
  ChannelGeometry geometry;  // [geometry]
  PhysicalParams params;     // [params]

  // [potentials] — quartic double-well family for bulk and boundary
  std::string potential_family = "polynomial";
  double alpha = 1.0;
  double beta = 1.0;
  double alpha_gamma = 1.0;
  double beta_gamma = 1.0;
  double delta = 0.1;               // shared regularization parameter
  double shift_override = -1.0;     // < 0 selects the minimal convexity shift
  double shift_override_gamma = -1.0;

  NoiseModel noise;    // [noise]
  SchemeConfig scheme; // [scheme]

  // [initial]
  InitialSpec initial_bulk;
  InitialSpec initial_boundary{InitialSpec::Kind::trace, 0.0};

  // [experiment]
  ExperimentKind experiment = ExperimentKind::single_path;
  int n_paths = 64;
  int ladder_levels = 3;

  // [output]
  std::string output_directory = "out";
  int series_stride = 1;
  bool write_series = true;
  bool write_reports = true;
  bool write_plots = true;

  std::uint64_t master_seed = 1;

  // Every constraint violation; empty means the config is fully usable.
  // Messages name the field, the constraint, and the offending value.  The
  // params block reuses the parameter struct's own messages verbatim.
  std::vector<std::string> violations() const {
    using detail::fmt17;
    std::vector<std::string> v;

    if (geometry.n_x_modes < 1)
      v.push_back("geometry.n_x_modes must be >= 1 (got " +
                  std::to_string(geometry.n_x_modes) + ")");
    if (geometry.n_y_modes < 1)
      v.push_back("geometry.n_y_modes must be >= 1 (got " +
                  std::to_string(geometry.n_y_modes) + ")");
    if (!(geometry.period_length > 0.0))
      v.push_back("geometry.period_length must be > 0 (got " +
                  fmt17(geometry.period_length) + ")");
    if (!(geometry.channel_height > 0.0))
      v.push_back("geometry.channel_height must be > 0 (got " +
                  fmt17(geometry.channel_height) + ")");
    if (geometry.n_quad_x < 0 ||
        (geometry.n_quad_x != 0 && geometry.n_quad_x < 3 * geometry.n_x_modes))
      v.push_back(
          "geometry.n_quad_x violates the dealiasing margin: need 0 (auto) or "
          ">= 3*n_x_modes (got " + std::to_string(geometry.n_quad_x) + ")");
    if (geometry.n_quad_y < 0 ||
        (geometry.n_quad_y != 0 && geometry.n_quad_y < 3 * geometry.n_y_modes))
      v.push_back(
          "geometry.n_quad_y violates the dealiasing margin: need 0 (auto) or "
          ">= 3*n_y_modes (got " + std::to_string(geometry.n_quad_y) + ")");

    for (const auto& msg : params.violations()) v.push_back(msg);

    if (potential_family != "polynomial")
      v.push_back("potentials.family must be 'polynomial' (got '" +
                  potential_family + "')");
    if (!(alpha > 0.0))
      v.push_back("potentials.alpha must be > 0 (got " + fmt17(alpha) + ")");
    if (!(beta > 0.0))
      v.push_back("potentials.beta must be > 0 (got " + fmt17(beta) + ")");
    if (!(alpha_gamma > 0.0))
      v.push_back("potentials.alpha_gamma must be > 0 (got " +
                  fmt17(alpha_gamma) + ")");
    if (!(beta_gamma > 0.0))
      v.push_back("potentials.beta_gamma must be > 0 (got " +
                  fmt17(beta_gamma) + ")");
    if (!(delta > 0.0 && delta < 1.0))
      v.push_back("potentials.delta must lie in (0, 1) (got " + fmt17(delta) +
                  ")");
    if (shift_override >= 0.0 && alpha > 0.0 && beta > 0.0 &&
        shift_override < alpha * beta * beta)
      v.push_back(
          "potentials.shift_override below the minimal convexity shift "
          "alpha*beta^2 = " + fmt17(alpha * beta * beta) + " (got " +
          fmt17(shift_override) + ")");
    if (shift_override_gamma >= 0.0 && alpha_gamma > 0.0 && beta_gamma > 0.0 &&
        shift_override_gamma < alpha_gamma * beta_gamma * beta_gamma)
      v.push_back(
          "potentials.shift_override_gamma below the minimal convexity shift "
          "alpha_gamma*beta_gamma^2 = " +
          fmt17(alpha_gamma * beta_gamma * beta_gamma) + " (got " +
          fmt17(shift_override_gamma) + ")");

    if (noise.n_w_modes < 1)
      v.push_back("noise.n_w_modes must be >= 1 (got " +
                  std::to_string(noise.n_w_modes) + ")");
    if (!(noise.weight_decay > 0.5))
      v.push_back(
          "noise.weight_decay must exceed 1/2, otherwise the summability "
          "certificate fails (sum of squared weights diverges) (got " +
          fmt17(noise.weight_decay) + ")");
    if (!(noise.base_weight >= 0.0))
      v.push_back("noise.base_weight must be >= 0 (got " +
                  fmt17(noise.base_weight) + ")");
    if (!(noise.bulk_amplitude >= 0.0))
      v.push_back("noise.bulk_amplitude must be >= 0 (got " +
                  fmt17(noise.bulk_amplitude) + ")");
    if (!(noise.boundary_amplitude >= 0.0))
      v.push_back("noise.boundary_amplitude must be >= 0 (got " +
                  fmt17(noise.boundary_amplitude) + ")");

    if (!(scheme.dt > 0.0) || !std::isfinite(scheme.dt))
      v.push_back("scheme.dt must be a finite positive number (got " +
                  fmt17(scheme.dt) + ")");
    if (scheme.n_steps < 1)
      v.push_back("scheme.n_steps must be >= 1 (got " +
                  std::to_string(scheme.n_steps) + ")");
    if (scheme.snapshot_every < 1)
      v.push_back("scheme.snapshot_every must be >= 1 (got " +
                  std::to_string(scheme.snapshot_every) + ")");
    if (!scheme.imex_mobility_freeze)
      v.push_back(
          "scheme.imex_mobility_freeze = false is not supported: the "
          "stabilized scheme always freezes mobilities at the step start");
    if (!(scheme.kappa_guard >= 0.0))
      v.push_back(
          "scheme.kappa_guard must be >= 0, where 0 selects the automatic "
          "guard (got " + fmt17(scheme.kappa_guard) + ")");

    if (initial_bulk.kind == InitialSpec::Kind::trace)
      v.push_back(
          "initial.bulk cannot be 'trace' (only the boundary field can be "
          "initialized from the bulk trace)");

    if (n_paths < 1)
      v.push_back("experiment.n_paths must be >= 1 (got " +
                  std::to_string(n_paths) + ")");
    const bool needs_ensemble = experiment == ExperimentKind::certify_moments;
    if (needs_ensemble && n_paths < 64)
      v.push_back(
          "experiment.n_paths must be >= 64 for the moment certificate (got " +
          std::to_string(n_paths) + ")");
    const bool is_ladder = experiment == ExperimentKind::ladder_dt ||
                           experiment == ExperimentKind::ladder_n ||
                           experiment == ExperimentKind::ladder_delta;
    if (ladder_levels < 2 && is_ladder)
      v.push_back("experiment.ladder_levels must be >= 2 for ladder runs (got " +
                  std::to_string(ladder_levels) + ")");
    if (ladder_levels < 1)
      v.push_back("experiment.ladder_levels must be >= 1 (got " +
                  std::to_string(ladder_levels) + ")");

    if (output_directory.empty())
      v.push_back("output.directory must not be empty");
    if (series_stride < 1)
      v.push_back("output.series_stride must be >= 1 (got " +
                  std::to_string(series_stride) + ")");
    return v;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw std::invalid_argument(msg);
  }

  // ---- builders (call only on a validated config) --------------------------
  RegularizedPotential bulk_potential() const {
    return RegularizedPotential::make(
        SmoothPotential::polynomial(alpha, beta, shift_override), delta);
  }
  RegularizedPotential boundary_potential() const {
    return RegularizedPotential::make(
        SmoothPotential::polynomial(alpha_gamma, beta_gamma,
                                    shift_override_gamma),
        delta);
  }

  // Initial coefficients by projecting the named closed forms on the grid.
  // Streams 3/4 key the random presets so they never collide with the noise
  // draws (streams 1/2).
  std::pair<VectorXd, VectorXd> initial_coefficients(
      const SpectralBasis& basis) const {
    const double L = basis.geom.period_length, H = basis.geom.channel_height;
    const int nqx = basis.geom.n_quad_x, nqy = basis.geom.n_quad_y;
    const double two_pi = 2.0 * std::numbers::pi;

    VectorXd a0;
    switch (initial_bulk.kind) {
      case InitialSpec::Kind::zero:
        a0 = VectorXd::Zero(basis.n_bulk);
        break;
      case InitialSpec::Kind::random: {
        a0.resize(basis.n_bulk);
        for (int i = 0; i < basis.n_bulk; ++i)
          a0[i] = initial_bulk.value * keyed_normal(master_seed, 0, 0, i, 3);
        break;
      }
      default: {
        VectorXd grid(nqx * nqy);
        for (int iy = 0; iy < nqy; ++iy)
          for (int ix = 0; ix < nqx; ++ix) {
            const double x = basis.qx[ix], y = basis.qy[iy];
            double f = initial_bulk.value;
            if (initial_bulk.kind == InitialSpec::Kind::cos_x)
              f *= std::cos(two_pi * x / L);
            else if (initial_bulk.kind == InitialSpec::Kind::cos_xy)
              f *= std::cos(two_pi * x / L) * std::cos(std::numbers::pi * y / H);
            grid[iy * nqx + ix] = f;
          }
        a0 = from_grid(grid, basis, Family::bulk);
      }
    }

    VectorXd b0;
    switch (initial_boundary.kind) {
      case InitialSpec::Kind::zero:
        b0 = VectorXd::Zero(basis.n_bnd);
        break;
      case InitialSpec::Kind::trace:
        b0 = basis.trace_op * a0;
        break;
      case InitialSpec::Kind::random: {
        b0.resize(basis.n_bnd);
        for (int j = 0; j < basis.n_bnd; ++j)
          b0[j] = initial_boundary.value * keyed_normal(master_seed, 0, 0, j, 4);
        break;
      }
      default: {
        VectorXd grid(2 * nqx);
        for (int c = 0; c < 2; ++c)
          for (int ix = 0; ix < nqx; ++ix) {
            double f = initial_boundary.value;
            if (initial_boundary.kind == InitialSpec::Kind::cos_x)
              f *= std::cos(two_pi * basis.qx[ix] / L);
            grid[c * nqx + ix] = f;
          }
        b0 = from_grid(grid, basis, Family::boundary);
      }
    }
    return {std::move(a0), std::move(b0)};
  }
};

// ---------------------------------------------------------------------------
// canonical serialization (round-trips bit-exactly through parse_config)
// ---------------------------------------------------------------------------

inline std::string serialize_config(const RunConfig& c) {
  using detail::fmt17;
  std::ostringstream o;
  o << "master_seed = " << c.master_seed << "\n\n";

  o << "[geometry]\n";
  o << "n_x_modes = " << c.geometry.n_x_modes << "\n";
  o << "n_y_modes = " << c.geometry.n_y_modes << "\n";
  o << "period_length = " << fmt17(c.geometry.period_length) << "\n";
  o << "channel_height = " << fmt17(c.geometry.channel_height) << "\n";
  o << "n_quad_x = " << c.geometry.n_quad_x << "\n";
  o << "n_quad_y = " << c.geometry.n_quad_y << "\n\n";

  o << "[params]\n";
  o << "eps = " << fmt17(c.params.eps) << "\n";
  o << "eps_gamma = " << fmt17(c.params.eps_gamma) << "\n";
  o << "robin_K = " << fmt17(c.params.robin_K) << "\n";
  o << "nu = " << c.params.nu.spec << "\n";
  o << "lambda = " << c.params.lambda.spec << "\n";
  o << "gamma = " << c.params.gamma.spec << "\n";
  o << "mobility_bulk = " << c.params.mobility_bulk.spec << "\n";
  o << "mobility_bnd = " << c.params.mobility_bnd.spec << "\n\n";

  o << "[potentials]\n";
  o << "family = " << c.potential_family << "\n";
  o << "alpha = " << fmt17(c.alpha) << "\n";
  o << "beta = " << fmt17(c.beta) << "\n";
  o << "alpha_gamma = " << fmt17(c.alpha_gamma) << "\n";
  o << "beta_gamma = " << fmt17(c.beta_gamma) << "\n";
  o << "delta = " << fmt17(c.delta) << "\n";
  o << "shift_override = " << fmt17(c.shift_override) << "\n";
  o << "shift_override_gamma = " << fmt17(c.shift_override_gamma) << "\n\n";

  o << "[noise]\n";
  o << "n_w_modes = " << c.noise.n_w_modes << "\n";
  o << "weight_decay = " << fmt17(c.noise.weight_decay) << "\n";
  o << "base_weight = " << fmt17(c.noise.base_weight) << "\n";
  const char* prof = c.noise.profile == NoiseProfile::tanh_profile ? "tanh"
                     : c.noise.profile == NoiseProfile::sin_profile ? "sin"
                                                                    : "constant";
  o << "profile = " << prof << "\n";
  o << "bulk_amplitude = " << fmt17(c.noise.bulk_amplitude) << "\n";
  o << "boundary_amplitude = " << fmt17(c.noise.boundary_amplitude) << "\n";
  o << "shared_modes = " << (c.noise.shared_modes ? "true" : "false") << "\n\n";

  o << "[scheme]\n";
  o << "dt = " << fmt17(c.scheme.dt) << "\n";
  o << "n_steps = " << c.scheme.n_steps << "\n";
  o << "kind = "
    << (c.scheme.scheme == SchemeKind::explicit_em ? "explicit" : "semi-implicit")
    << "\n";
  o << "kappa_guard = " << fmt17(c.scheme.kappa_guard) << "\n";
  o << "snapshot_every = " << c.scheme.snapshot_every << "\n";
  o << "imex_mobility_freeze = " << (c.scheme.imex_mobility_freeze ? "true" : "false")
    << "\n\n";

  o << "[initial]\n";
  o << "bulk = " << initial_to_string(c.initial_bulk) << "\n";
  o << "boundary = " << initial_to_string(c.initial_boundary) << "\n\n";

  o << "[experiment]\n";
  o << "kind = " << experiment_name(c.experiment) << "\n";
  o << "n_paths = " << c.n_paths << "\n";
  o << "ladder_levels = " << c.ladder_levels << "\n\n";

  o << "[output]\n";
  o << "directory = " << c.output_directory << "\n";
  o << "series_stride = " << c.series_stride << "\n";
  std::string formats;
  if (c.write_series) formats += "series";
  if (c.write_reports) formats += formats.empty() ? "reports" : ",reports";
  if (c.write_plots) formats += formats.empty() ? "plots" : ",plots";
  if (formats.empty()) formats = "none";
  o << "formats = " << formats << "\n";
  return o.str();
}

// FNV-1a over the canonical serialization: stable across platforms because
// the text itself is canonical.
inline std::string config_hash(const RunConfig& c) {
  const std::string text = serialize_config(c);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

struct ParseResult {
  RunConfig config;
  std::vector<std::string> errors;  // syntax errors + all validation violations
  bool ok() const { return errors.empty(); }
};

inline ParseResult parse_config(const std::string& text) {
  using detail::trim;
  ParseResult out;
  RunConfig& c = out.config;
  std::vector<std::string>& errs = out.errors;

  std::istringstream in(text);
  std::string raw, section;
  int lineno = 0;
  auto err = [&](const std::string& msg) {
    errs.push_back("line " + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        err("unterminated section header '" + line + "'");
        continue;
      }
      section = line.substr(1, line.size() - 2);
      if (section != "geometry" && section != "params" &&
          section != "potentials" && section != "noise" &&
          section != "scheme" && section != "initial" &&
          section != "experiment" && section != "output")
        err("unknown section [" + section + "]");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      err("expected 'key = value', got '" + line + "'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    auto want_double = [&](double& slot) {
      double v;
      if (detail::parse_double(val, v)) slot = v;
      else err(section + "." + key + " is not a number (got '" + val + "')");
    };
    auto want_int = [&](int& slot) {
      long long v;
      if (detail::parse_int(val, v) && v >= INT_MIN && v <= INT_MAX)
        slot = static_cast<int>(v);
      else err(section + "." + key + " is not an integer (got '" + val + "')");
    };
    auto want_bool = [&](bool& slot) {
      bool v;
      if (detail::parse_bool(val, v)) slot = v;
      else err(section + "." + key + " is not true/false (got '" + val + "')");
    };
    auto want_coefficient = [&](CoefficientFn& slot) {
      if (auto fn = parse_coefficient(val)) slot = *fn;
      else
        err(section + "." + key +
            " is not a coefficient spec 'constant:v' or 'tanh:base,delta' "
            "(got '" + val + "')");
    };
    auto unknown = [&] { err("unknown key '" + key + "' in [" + section + "]"); };

    if (section.empty()) {
      if (key == "master_seed") {
        std::uint64_t v;
        if (detail::parse_uint64(val, v)) c.master_seed = v;
        else err("master_seed is not an unsigned integer (got '" + val + "')");
      } else {
        err("unknown top-level key '" + key + "' (only master_seed may appear "
            "before the first section)");
      }
    } else if (section == "geometry") {
      if (key == "n_x_modes") want_int(c.geometry.n_x_modes);
      else if (key == "n_y_modes") want_int(c.geometry.n_y_modes);
      else if (key == "period_length") want_double(c.geometry.period_length);
      else if (key == "channel_height") want_double(c.geometry.channel_height);
      else if (key == "n_quad_x") want_int(c.geometry.n_quad_x);
      else if (key == "n_quad_y") want_int(c.geometry.n_quad_y);
      else unknown();
    } else if (section == "params") {
      if (key == "eps") want_double(c.params.eps);
      else if (key == "eps_gamma") want_double(c.params.eps_gamma);
      else if (key == "robin_K") want_double(c.params.robin_K);
      else if (key == "nu") want_coefficient(c.params.nu);
      else if (key == "lambda") want_coefficient(c.params.lambda);
      else if (key == "gamma") want_coefficient(c.params.gamma);
      else if (key == "mobility_bulk") want_coefficient(c.params.mobility_bulk);
      else if (key == "mobility_bnd") want_coefficient(c.params.mobility_bnd);
      else unknown();
    } else if (section == "potentials") {
      if (key == "family") c.potential_family = val;
      else if (key == "alpha") want_double(c.alpha);
      else if (key == "beta") want_double(c.beta);
      else if (key == "alpha_gamma") want_double(c.alpha_gamma);
      else if (key == "beta_gamma") want_double(c.beta_gamma);
      else if (key == "delta") want_double(c.delta);
      else if (key == "shift_override") want_double(c.shift_override);
      else if (key == "shift_override_gamma") want_double(c.shift_override_gamma);
      else unknown();
    } else if (section == "noise") {
      if (key == "n_w_modes") want_int(c.noise.n_w_modes);
      else if (key == "weight_decay") want_double(c.noise.weight_decay);
      else if (key == "base_weight") want_double(c.noise.base_weight);
      else if (key == "profile") {
        if (val == "tanh") c.noise.profile = NoiseProfile::tanh_profile;
        else if (val == "sin") c.noise.profile = NoiseProfile::sin_profile;
        else if (val == "constant") c.noise.profile = NoiseProfile::constant_profile;
        else err("noise.profile must be tanh, sin, or constant (got '" + val + "')");
      } else if (key == "bulk_amplitude") want_double(c.noise.bulk_amplitude);
      else if (key == "boundary_amplitude") want_double(c.noise.boundary_amplitude);
      else if (key == "shared_modes") want_bool(c.noise.shared_modes);
      else unknown();
    } else if (section == "scheme") {
      if (key == "dt") want_double(c.scheme.dt);
      else if (key == "n_steps") want_int(c.scheme.n_steps);
      else if (key == "kind") {
        if (val == "explicit") c.scheme.scheme = SchemeKind::explicit_em;
        else if (val == "semi-implicit") c.scheme.scheme = SchemeKind::semi_implicit;
        else err("scheme.kind must be explicit or semi-implicit (got '" + val + "')");
      } else if (key == "kappa_guard") want_double(c.scheme.kappa_guard);
      else if (key == "snapshot_every") want_int(c.scheme.snapshot_every);
      else if (key == "imex_mobility_freeze") want_bool(c.scheme.imex_mobility_freeze);
      else unknown();
    } else if (section == "initial") {
      if (key == "bulk" || key == "boundary") {
        if (auto spec = parse_initial(val))
          (key == "bulk" ? c.initial_bulk : c.initial_boundary) = *spec;
        else
          err("initial." + key +
              " must be zero, trace, or one of constant:/cos_x:/cos_xy:/random: "
              "with a number (got '" + val + "')");
      } else unknown();
    } else if (section == "experiment") {
      if (key == "kind") {
        if (auto k = experiment_from_name(val)) c.experiment = *k;
        else
          err("experiment.kind must be one of single-path, monte-carlo, "
              "ladder:dt, ladder:n, ladder:delta, certify:yosida, "
              "certify:korn, certify:energy, certify:moments, certify:ineq329 "
              "(got '" + val + "')");
      } else if (key == "n_paths") want_int(c.n_paths);
      else if (key == "ladder_levels") want_int(c.ladder_levels);
      else unknown();
    } else if (section == "output") {
      if (key == "directory") c.output_directory = val;
      else if (key == "series_stride") want_int(c.series_stride);
      else if (key == "formats") {
        c.write_series = c.write_reports = c.write_plots = false;
        if (val != "none") {
          std::size_t pos = 0;
          while (pos <= val.size()) {
            const auto comma = val.find(',', pos);
            const std::string tok =
                trim(val.substr(pos, comma == std::string::npos ? std::string::npos
                                                                : comma - pos));
            if (tok == "series") c.write_series = true;
            else if (tok == "reports") c.write_reports = true;
            else if (tok == "plots") c.write_plots = true;
            else if (!tok.empty())
              err("output.formats contains unknown token '" + tok +
                  "' (allowed: series, reports, plots, none)");
            if (comma == std::string::npos) break;
            pos = comma + 1;
          }
        }
      } else unknown();
    }
  }

  // semantic validation only once the text itself parsed cleanly, so bad
  // values are reported at their own lines instead of twice
  if (errs.empty())
    for (const auto& msg : c.violations()) errs.push_back(msg);
  return out;
}

inline ParseResult read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    ParseResult r;
    r.errors.push_back("cannot read config file '" + path + "'");
    return r;
  }
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

}  // namespace chb
