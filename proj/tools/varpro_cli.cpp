#include <varpro/experiments.hpp>
#include <varpro/verification.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kSolverFailure = 1;
constexpr int kConfigError = 2;

int run(const std::string& config_path, const std::optional<std::string>& out_dir,
        const std::optional<std::uint64_t>& seed) {
  namespace ex = varpro::experiments;
  ex::ExperimentConfig cfg;
  try {
    cfg = ex::load_config(config_path);
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  if (seed) cfg.seed = *seed;
  if (out_dir) cfg.output_dir = *out_dir;

  try {
    const ex::RunReport report = ex::run_experiment(cfg, cfg.output_dir);
    std::cout << cfg.experiment << ": wrote " << report.outputs.size() + 1 << " files to " << cfg.output_dir << '\n';
    std::cout << report.metrics.dump(2) << '\n';
    for (const auto& f : report.failures) std::cerr << "solver failure: " << f << '\n';
    return report.ok() ? kOk : kSolverFailure;
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    // Sizes that pass parsing but are rejected by an operator or solver.
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
}

int check(std::uint64_t seed) {
  const auto results = varpro::verification::run_checks(seed);
  varpro::verification::print_table(std::cout, results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  return ok ? kOk : kSolverFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable projection experiments and verification"};
  app.set_version_flag("--version", std::string(varpro::experiments::version()));
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run an experiment described by a JSON config");
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> run_seed;
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run_cmd->add_option("--seed", run_seed, "Random seed (overrides seed)");

  auto* check_cmd = app.add_subcommand("check", "Run the built-in verification suite");
  std::uint64_t check_seed = 1;
  check_cmd->add_option("--seed", check_seed, "Seed for the random probes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  if (*run_cmd) return run(config_path, out_dir, run_seed);
  return check(check_seed);
}
