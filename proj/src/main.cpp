// Command line driver for the bulk-surface phase-field simulator.
//
// Verbs:
//   chb validate <config>           parse + validate, report all violations
//   chb run <config>                execute the experiment named in the config
//   chb certify <suite> <config>    run one certificate suite (overrides the
//                                   config's experiment selector)
//   chb ladder <axis> <config>      run one refinement ladder (dt | n | delta)
//
// Environment overrides (the only two honored):
//   CHB_OUTPUT_DIR   redirect output files; the recorded config is unchanged
//   CHB_THREADS      worker thread count for path ensembles
//
// Exit codes: 0 all checks pass, 1 at least one check failed, 2 config or
// usage error, 3 numerical abort.

#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <iostream>
#include <stdexcept>
#include <string>

#include "chb/runner.hpp"

namespace {

// Loads and validates a config file; prints every violation on failure.
// Returns false (caller exits 2) if anything is wrong.
bool load_config(const std::string& path, chb::RunConfig& out) {
  chb::ParseResult pr = chb::read_config_file(path);
  if (!pr.ok()) {
    std::cerr << "config error in '" << path << "':\n";
    for (const auto& e : pr.errors) std::cerr << "  " << e << '\n';
    return false;
  }
  out = pr.config;
  return true;
}

// Reads the two supported environment overrides. Returns false on a
// malformed CHB_THREADS value (caller exits 2).
bool read_env_overrides(chb::RunOptions& opt) {
  if (const char* dir = std::getenv("CHB_OUTPUT_DIR"); dir && *dir)
    opt.output_dir_override = dir;
  if (const char* th = std::getenv("CHB_THREADS"); th && *th) {
    char* end = nullptr;
    const long v = std::strtol(th, &end, 10);
    if (end == th || *end != '\0' || v < 1 || v > 1024) {
      std::cerr << "config error: CHB_THREADS must be an integer in [1,1024], "
                   "got '" << th << "'\n";
      return false;
    }
    opt.threads = static_cast<int>(v);
  }
  return true;
}

void print_summary(const chb::RunSummary& sum) {
  std::cout << "experiment  = " << sum.experiment << '\n';
  std::cout << "config hash = " << sum.config_hash << '\n';
  for (const auto& c : sum.checks)
    std::cout << "  " << (c.pass ? "pass" : "FAIL") << ' ' << c.name
              << " margin= " << chb::detail::fmt17(c.margin) << " :: "
              << c.detail << '\n';
  std::cout << "files:\n";
  for (const auto& f : sum.files) std::cout << "  " << f << '\n';
  const char* result = sum.numerical_abort
                           ? "numerical-abort"
                           : (sum.all_pass() ? "pass" : "fail");
  std::cout << "result      = " << result;
  if (sum.numerical_abort) std::cout << " (" << sum.abort_message << ')';
  std::cout << "  [wall " << sum.wall_seconds << " s]\n";
}

// Runs the experiment and maps every outcome onto the exit-code contract.
int execute(const chb::RunConfig& cfg) {
  chb::RunOptions opt;
  if (!read_env_overrides(opt)) return 2;
  chb::RunSummary sum;
  try {
    sum = chb::run(cfg, opt);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  }
  print_summary(sum);
  if (sum.numerical_abort) return 3;
  return sum.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic bulk-surface phase-field simulator"};
  app.require_subcommand(1);

  std::string cfg_path;
  std::string suite;
  std::string axis;

  CLI::App* v_validate =
      app.add_subcommand("validate", "parse and validate a config file");
  v_validate->add_option("config", cfg_path, "config file")->required();

  CLI::App* v_run =
      app.add_subcommand("run", "execute the experiment named in the config");
  v_run->add_option("config", cfg_path, "config file")->required();

  CLI::App* v_certify = app.add_subcommand(
      "certify", "run one certificate suite against the config");
  v_certify
      ->add_option("suite", suite,
                   "one of: yosida, korn, energy, moments, ineq329")
      ->required();
  v_certify->add_option("config", cfg_path, "config file")->required();

  CLI::App* v_ladder =
      app.add_subcommand("ladder", "run one refinement ladder");
  v_ladder->add_option("axis", axis, "one of: dt, n, delta")->required();
  v_ladder->add_option("config", cfg_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems are config errors
  }

  chb::RunConfig cfg;
  if (!load_config(cfg_path, cfg)) return 2;

  if (v_validate->parsed()) {
    std::cout << "config ok\n";
    std::cout << "experiment  = " << chb::experiment_name(cfg.experiment)
              << '\n';
    std::cout << "config hash = " << chb::config_hash(cfg) << '\n';
    return 0;
  }

  if (v_certify->parsed()) {
    const auto kind = chb::experiment_from_name("certify:" + suite);
    if (!kind) {
      std::cerr << "config error: unknown certificate suite '" << suite
                << "' (expected yosida, korn, energy, moments, or ineq329)\n";
      return 2;
    }
    cfg.experiment = *kind;
  } else if (v_ladder->parsed()) {
    const auto kind = chb::experiment_from_name("ladder:" + axis);
    if (!kind) {
      std::cerr << "config error: unknown ladder axis '" << axis
                << "' (expected dt, n, or delta)\n";
      return 2;
    }
    cfg.experiment = *kind;
  }

  (void)v_run;
  return execute(cfg);
}
