#pragma once

// Time stepping for
//
//   du + (alpha u + i A u - i |u|^2 u) dt = b dW + h dt
//
// by Strang (or Lie) splitting into two exactly solvable sub-flows: the
// diagonal linear flow u_k -> exp(-(alpha + i mu_k) t) u_k and the pointwise
// phase rotation u -> u exp(i |u|^2 t) on the collocation grid.  The noise
// increment and the drift are added after the deterministic step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cnls/noise.hpp"
#include "cnls/spectral.hpp"

namespace cnls {

enum class Scheme { kStrang, kLie };

std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

struct SolverConfig {
  double alpha = 1.0;
  double dt = 1e-3;
  Scheme scheme = Scheme::kStrang;
  bool nonlinear = true;  // false drops the cubic term (linear test problems)
  std::size_t snapshot_stride = 1;

  void validate() const;
};

/// Number of steps K with K dt = t_final; throws std::domain_error when
/// t_final is not an integer multiple of dt.
std::size_t steps_for(double t_final, double dt);

/// Allocation-free stepper for one trajectory.  Not shareable between threads.
class Stepper {
 public:
  Stepper(SpectralSpace space, SolverConfig cfg);

  const SpectralSpace& space() const noexcept { return space_; }
  const SolverConfig& config() const noexcept { return cfg_; }

  /// Deterministic part of one step, in place.
  void propagate(std::span<Complex> u);
  /// propagate, then u += forcing (b dW + h dt, may be empty).  Throws
  /// NumericError carrying `step_index` if the result is not finite.
  void step(std::span<Complex> u, std::span<const Complex> forcing, std::ptrdiff_t step_index = -1);

 private:
  void linear(std::span<Complex> u, const CVector& factors) const;
  void nonlinear(std::span<Complex> u, double tau);

  SpectralSpace space_;
  SolverConfig cfg_;
  CVector half_factors_;
  CVector full_factors_;
  CVector pad_;
  CVector grid_;
};

/// One step: S(u) + dWb + h dt.  `h` may be empty.
SpectralField step(const SpectralField& u, const SolverConfig& cfg, std::span<const Complex> dWb,
                   std::span<const Complex> h = {});

/// Advances u in place by n_steps, driven by gen's increments at steps
/// first_step, first_step + 1, ...  `observer(s, u)` (optional) sees the state
/// after each step s = 1..n_steps.
void evolve(Stepper& stepper, const NoiseGenerator& gen, std::span<Complex> u, std::uint64_t first_step,
            std::size_t n_steps, const std::function<void(std::size_t, std::span<const Complex>)>& observer = {});

/// Adapted low-mode drift h evaluated at the left end point of each step.
using DriftSchedule = std::function<CVector(std::size_t step, double t, std::span<const Complex> u)>;

struct Trajectory {
  SpectralSpace space;
  SolverConfig cfg;
  std::vector<double> times;
  std::vector<CVector> states;
  std::shared_ptr<const NoisePath> noise;
  std::vector<CVector> drift_log;  // one entry per step when a drift was applied

  SpectralField state(std::size_t i) const { return SpectralField(space, states.at(i)); }
  std::size_t size() const noexcept { return times.size(); }
};

/// K = t_final / dt steps driven by the recorded raw increments of `noise`
/// (scaled by b).  Snapshots every cfg.snapshot_stride steps plus the final time.
Trajectory simulate(const SpectralField& u0, double t_final, const SolverConfig& cfg, const NoiseSpec& nspec,
                    std::shared_ptr<const NoisePath> noise, const DriftSchedule& h = {});

/// Two trajectories driven by the same noise path; after every step (and at
/// t = 0) the modes k <= cutoff of the second are overwritten by those of the
/// first.
std::pair<Trajectory, Trajectory> simulate_synchronized(const SpectralField& u0_1, const SpectralField& u0_2,
                                                        std::size_t cutoff, double t_final,
                                                        const SolverConfig& cfg, const NoiseSpec& nspec,
                                                        std::shared_ptr<const NoisePath> noise);

}  // namespace cnls
