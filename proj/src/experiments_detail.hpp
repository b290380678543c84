#pragma once

// Helpers shared by the experiment translation units.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "cnls/experiments.hpp"
#include "cnls/statistics.hpp"

namespace cnls::detail {

inline StreamId noise_stream(std::uint64_t seed, std::size_t path) {
  return StreamId{seed, static_cast<std::uint64_t>(Lane::kNoise), static_cast<std::uint32_t>(path)};
}

inline SequentialRng initial_rng(std::uint64_t seed, std::size_t tag) {
  return SequentialRng(StreamId{seed, static_cast<std::uint64_t>(Lane::kInitialData), static_cast<std::uint32_t>(tag)});
}

/// Seed of an ensemble that must be independent of every run keyed by `seed`.
inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t salt) { return splitmix64(seed ^ splitmix64(salt)); }

/// Sample times for n_steps steps at the given stride (always includes both ends).
std::vector<double> sample_times(std::size_t n_steps, std::size_t stride, double dt);
inline bool sample_due(std::size_t s, std::size_t n_steps, std::size_t stride) {
  return s % stride == 0 || s == n_steps;
}

/// Per-time mean and standard error over paths; rows[i][t].
void column_stats(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& se);

/// Plain path from u (in place) for n_steps; observer(s, u) at each sample.
void run_plain(const SpectralSpace& space, const SolverConfig& solver, const NoiseSpec& noise, StreamId id, CVector& u, std::size_t n_steps,
               std::size_t stride, std::size_t path, const std::function<void(std::size_t, const CVector&)>& obs);

std::string fmt(double x, int prec = 4);

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

ExperimentReport make_report(const std::string& name, const ExperimentContext& ctx);

}  // namespace cnls::detail
