// Command-line driver: one subcommand per experiment.
//
//   cnls <experiment> [--config PATH] [--jobs N] [--seed U64] [--out DIR]
//
// Exit status: 0 all verdicts pass, 1 some verdict fails or an internal
// error, 2 configuration error, 3 numerical blow-up (state dumped).

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "cnls/experiments.hpp"

namespace {

constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBlowUp = 3;

int run(const std::string& name, const std::string& config_path, std::size_t jobs,
        std::optional<std::uint64_t> seed, const std::string& out_dir) {
  using namespace cnls;
  std::filesystem::path out;
  ExperimentContext ctx;
  try {
    ctx.cfg = config_path.empty() ? parse_config("") : load_config(config_path);
    if (seed) ctx.cfg.master_seed = *seed;
    ctx.cfg.validate();
  } catch (const ConfigError& e) {
    // The message already names the line and key.
    std::cerr << "config error" << (config_path.empty() ? "" : " in " + config_path) << ": " << e.what() << '\n';
    return kExitConfig;
  }
  out = out_dir.empty() ? ctx.cfg.output_dir / name : std::filesystem::path(out_dir);
  ctx.out = out;
  ctx.jobs = jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : jobs;

  try {
    // The calibrate subcommand always recomputes; the others reuse the cache.
    const bool coupled = name == "couple" || name == "mixing" || name == "calibrate";
    ctx.cal = calibrate(ctx.cfg, name != "calibrate", coupled);
    const auto report = run_experiment(name, ctx);
    write_report(report, out);
    std::cout << summary_table(report);
    std::cout << "c0 " << ctx.cal.consts.c0 << ", c1 " << ctx.cal.consts.c1
              << (ctx.cal.from_cache ? " (cached " : " (computed, cache ") << ctx.cal.cache_file.string() << ")\n";
    std::cout << "artifacts in " << out.string() << '\n';
    return report.passed() ? 0 : kExitFail;
  } catch (const BlowUp& e) {
    std::filesystem::create_directories(out);
    const auto dump = out / "blowup_state.bin";
    write_trajectory_binary(dump, {0.0}, {e.state()});
    write_trajectory_csv(out / "blowup_state.csv", {0.0}, {e.state()});
    std::cerr << "blow-up at step " << e.step() << " on path " << e.path() << ": " << e.what() << '\n'
              << "state dump: " << dump.string() << '\n';
    return kExitBlowUp;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::domain_error& e) {
    // Parameter combinations that only fail once an experiment uses them.
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral simulator and coupling experiments for the damped stochastic cubic NLS"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::size_t jobs = 0;
  std::optional<std::uint64_t> seed;
  int status = 0;
  for (const auto& name : cnls::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "YAML config file")->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "worker threads (0: all cores)");
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--out", out_dir, "output directory");
    sub->callback([&, name] {
      try {
        status = run(name, config_path, jobs, seed, out_dir);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        status = kExitFail;
      }
    });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return status;
}
