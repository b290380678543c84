#pragma once

// Run configuration: one YAML tree (JSON is accepted too, being a subset)
// with the sections solver, noise, functionals, coupling, experiment, rng and
// output.  Unknown keys, wrong types and out-of-range values are errors that
// carry the offending key path and source line.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnls/coupling.hpp"
#include "cnls/functionals.hpp"
#include "cnls/integrator.hpp"
#include "cnls/noise.hpp"
#include "json.hpp"

namespace cnls {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string key, int line)
      : std::runtime_error(what), key_(std::move(key)), line_(line) {}
  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }  // 1-based, 0 when unknown

 private:
  std::string key_;
  int line_;
};

struct SolverSection {
  double alpha = 1.0;
  double dt = 1e-3;
  Scheme scheme = Scheme::kStrang;
  std::size_t snapshot_stride = 10;
  std::size_t n_modes = 32;
  std::size_t n_quad = 0;  // 0: smallest FFT-friendly size >= 4 n_modes
};

struct NoiseSection {
  double amplitude = 0.3;
  double decay = 4.0;
  std::size_t n_star = 4;
  std::vector<double> custom_b;  // overrides amplitude/decay when nonempty
  NoiseKind kind = NoiseKind::kComplex;
};

struct FunctionalsSection {
  double c0 = 0.0;      // 0: calibrate
  double c1 = 0.0;      // 0: calibrate
  double Lambda = 0.0;  // 0: fit on a pilot ensemble
  std::size_t corpus_size = 2000;
  double lambda_safety = 1.5;
};

struct CouplingSection {
  CouplingParams params;
  std::size_t pilot_paths = 40;
};

struct ExperimentSection {
  std::size_t paths = 200;
  double horizon = 10.0;
  std::size_t N = 8;
  std::vector<std::size_t> N_scan{2, 4, 8, 16};
  std::size_t scan_paths = 100;
  double H0 = 2.0;         // initial energy (first system / single system)
  double H1 = 5.0;         // second initial energy in two-ensemble runs
  bool zero_first = true;  // mixing/couple: first ensemble starts at u = 0
  int k = 1;         // Lyapunov power
  int growth_k = 4;  // energy-growth power
  double initial_decay = 1.5;
  std::string initial = "random";  // random | e1 | zero
  double amplitude = 1.0;          // e1 amplitude for initial = e1
  std::size_t epochs = 10;
  std::vector<double> rho_scan{0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  std::vector<double> R0_grid{1.0, 2.0, 4.0};
  std::vector<double> R1_grid{0.1, 0.2, 0.4};
  double hit_time = 3.0;
  double tail_fraction = 0.5;
  std::size_t bootstrap = 200;
  bool write_trajectory = true;
};

struct RunConfig {
  SolverSection solver;
  NoiseSection noise;
  FunctionalsSection functionals;
  CouplingSection coupling;
  ExperimentSection experiment;
  std::uint64_t master_seed = 20240601;
  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir = ".cnls_cache";

  SpectralSpace space() const;
  SolverConfig solver_config() const;
  NoiseSpec noise_spec() const;
  void validate() const;  // throws ConfigError without a line
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

/// Every key with its value, suitable for re-loading.
nlohmann::json to_json(const RunConfig& c);

/// FNV-1a over a canonical JSON dump.
std::uint64_t config_hash(const nlohmann::json& j);

}  // namespace cnls
