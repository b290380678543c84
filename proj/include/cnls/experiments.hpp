#pragma once

// Monte Carlo experiments.  Each one turns a checkable statement about the
// damped stochastic NLS into named verdicts with explicit tolerances.  All
// randomness is keyed by (master seed, lane, path index), so reports do not
// depend on the number of worker threads.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnls/config.hpp"
#include "cnls/coupling.hpp"
#include "cnls/functionals.hpp"
#include "cnls/report.hpp"

namespace cnls {

/// Raised when a path produces non-finite values; carries what is needed for
/// the state dump.
class BlowUp : public std::runtime_error {
 public:
  BlowUp(const std::string& what, std::ptrdiff_t step, std::size_t path, CVector state)
      : std::runtime_error(what), step_(step), path_(path), state_(std::move(state)) {}
  std::ptrdiff_t step() const noexcept { return step_; }
  std::size_t path() const noexcept { return path_; }
  const CVector& state() const noexcept { return state_; }

 private:
  std::ptrdiff_t step_;
  std::size_t path_;
  CVector state_;
};

/// Runs body(i) for i in [0, n) on `jobs` threads.  If any call throws, the
/// exception of the smallest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body);

struct Calibration {
  FunctionalConstants consts;
  C0Calibration c0;
  C1Calibration c1;
  CouplingFit fit;
  bool coupling_fitted = false;
  bool from_cache = false;
  std::filesystem::path cache_file;
};

nlohmann::json to_json(const Calibration& c);

/// Fills c0, c1 (unless set in the config) and, when `with_coupling`, the
/// coupling constants (unless all three are set), reading and writing the
/// cache keyed by the hash of the inputs that determine them.
Calibration calibrate(const RunConfig& cfg, bool use_cache = true, bool with_coupling = true);

/// CouplingSetup with calibrated constants filled in.
CouplingSetup coupling_setup(const RunConfig& cfg, const Calibration& cal);

/// Initial datum: zero, amplitude * e1, or a random field with H = target.
SpectralField initial_field(const SpectralSpace& space, const std::string& kind, double target, double amplitude,
                            double decay, const FunctionalConstants& consts, SequentialRng& rng);

/// Observables compared by the mixing experiment: H, |u|^2, ||u||, Re u_1 and
/// |u_k|^2 for k = 1..4.
std::vector<double> mixing_observables(FieldEvaluator& ev, std::span<const Complex> u, const FunctionalConstants& c);
std::vector<std::string> mixing_observable_names();

struct ExperimentContext {
  RunConfig cfg;
  Calibration cal;
  std::size_t jobs = 1;
  std::filesystem::path out;  // extra artifacts (trajectories, epoch logs)
};

ExperimentReport experiment_simulate(const ExperimentContext& ctx);
ExperimentReport experiment_foias_prodi(const ExperimentContext& ctx);
ExperimentReport experiment_lyapunov(const ExperimentContext& ctx);
ExperimentReport experiment_energy_growth(const ExperimentContext& ctx);
ExperimentReport experiment_small_ball(const ExperimentContext& ctx);
ExperimentReport experiment_couple(const ExperimentContext& ctx);
ExperimentReport experiment_mixing(const ExperimentContext& ctx);
ExperimentReport experiment_calibrate(const ExperimentContext& ctx);

const std::vector<std::string>& experiment_names();
/// Dispatch by subcommand name; throws std::invalid_argument if unknown.
ExperimentReport run_experiment(const std::string& name, const ExperimentContext& ctx);

/// Binary trajectory dump: "CNLSTRJ1", u64 n_modes, u64 n_snapshots, then per
/// snapshot a double t followed by n_modes (re, im) pairs, little endian.
void write_trajectory_binary(const std::filesystem::path& path, const std::vector<double>& times,
                             const std::vector<CVector>& states);
std::pair<std::vector<double>, std::vector<CVector>> read_trajectory_binary(const std::filesystem::path& path);
/// CSV with columns t, k, re, im (one row per snapshot and mode).
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<double>& times,
                          const std::vector<CVector>& states);

}  // namespace cnls
