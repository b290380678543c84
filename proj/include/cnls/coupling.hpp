#pragma once

// Coupling of two solutions started from different initial data.
//
// Time is cut into epochs of length T.  At each epoch boundary kT the l0
// record decides between three constructions:
//
//   case a   (l0 = inf, H1 + H2 <= R0): shared-noise run for T - T1, then a
//            bridge that steers the low modes of the second system onto those
//            of the first over the last T1, realized as a maximal coupling of
//            the two low-mode path laws;
//   case b   (l0 <= k): low modes already agree; the second system follows
//            the low-mode path of the first, and the maximal coupling keeps
//            them together with probability 1 - TV of the two path laws;
//   trivial  otherwise: both systems driven by the same noise.
//
// The path-law maximal coupling is accept/reject: the reference low-mode path
// is accepted for the second system with probability min(1, q/p), otherwise the
// second system is drawn from the residual (q - p)^+ by rejection.  Both
// marginals are exactly the solver law.  Every construction is stopped by a
// truncation time tau (energy envelopes and drift budget); the density ratio
// only involves the path before tau.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cnls/functionals.hpp"
#include "cnls/integrator.hpp"
#include "cnls/noise.hpp"
#include "cnls/random.hpp"

namespace cnls {

// ---------------------------------------------------------------------------
// Finite distributions

struct DiscretePair {
  std::size_t first = 0;
  std::size_t second = 0;
};

/// Total variation distance 1/2 sum |p - q|.  Throws std::domain_error unless
/// both inputs are nonnegative, equal length and sum to 1 (to 1e-9).
double total_variation(std::span<const double> p, std::span<const double> q);

/// One draw from the maximal coupling of p and q: with probability 1 - TV a
/// common value from min(p, q), otherwise independent draws from the
/// normalized residuals (p - q)^+ and (q - p)^+.
DiscretePair maximal_coupling_discrete(std::span<const double> p, std::span<const double> q, SequentialRng& rng);

// ---------------------------------------------------------------------------
// Girsanov weights

/// log dP~/dP for a discrete path whose raw increments dW acquire the drift d
/// under P~.  For complex increments (components of variance dt/2) this is
/// sum_j 2 Re<d_j, dW_j> - |d_j|^2 dt; in general (Re<d, dW> - |d|^2 dt / 2) / v
/// with v the component variance in units of dt.
double girsanov_log_weight(std::span<const CVector> drifts, std::span<const CVector> increments, double dt,
                           NoiseKind kind = NoiseKind::kComplex);

class GirsanovAccumulator {
 public:
  explicit GirsanovAccumulator(NoiseKind kind = NoiseKind::kComplex) : inv_var_(1.0 / component_variance(kind)) {}

  void add(std::span<const Complex> drift, std::span<const Complex> increment, double dt);
  void stop() noexcept { active_ = false; }

  double log_density() const noexcept { return log_density_; }
  double drift_energy() const noexcept { return drift_energy_; }
  bool truncation_active() const noexcept { return active_; }

 private:
  double inv_var_;
  double log_density_ = 0.0;
  double drift_energy_ = 0.0;
  bool active_ = true;
};

// ---------------------------------------------------------------------------
// Parameters and bookkeeping

enum class Bridge { kLinear, kPropagated };
std::string to_string(Bridge b);
Bridge bridge_from_string(const std::string& name);

struct CouplingParams {
  double T = 1.0;      // epoch length
  double T1 = 0.2;     // case-a bridge window
  double d0 = 0.5;     // small-energy threshold for H1 + H2
  double R0 = 4.0;     // case-a entry radius
  double R1 = 0.2;     // radius required at the start of the bridge
  double kappa = 1.0;  // case-b envelope offset
  double a = 0.0;      // case-b budget exponent offset
  double rho = 1.0;    // case-a envelope slack
  double C4_prime = 0.0;  // growth rate of E_{u,4}; fitted when zero
  double C6_prime = 0.0;  // growth rate of E_{u,6}; fitted when zero
  double C_star = 0.0;    // weighted-distance budget; fitted when zero
  Bridge bridge = Bridge::kPropagated;
  bool independent_step1 = false;  // case a, first stage: independent instead of shared noise
  std::size_t max_retries = 1000;  // residual rejection sampling cap

  void validate() const;
  bool fitted() const noexcept { return C4_prime > 0.0 && C6_prime > 0.0 && C_star > 0.0; }
};

constexpr std::size_t kL0Infinity = std::numeric_limits<std::size_t>::max();

/// l0 history with the consistency conditions checked on every update.
class L0Record {
 public:
  struct Entry {
    std::size_t l0 = kL0Infinity;
    bool low_modes_equal = false;
    bool small_energy = false;     // H1 + H2 <= d0 at this epoch boundary
    bool envelope_held = false;    // energy envelope and identity held over the last epoch
  };

  /// l0(0) = 0 iff the low modes agree and H1 + H2 <= d0.
  L0Record(bool low_modes_equal, double H_sum, double d0);

  std::size_t epoch() const noexcept { return history_.size() - 1; }
  std::size_t current() const noexcept { return history_.back().l0; }
  const std::vector<Entry>& history() const noexcept { return history_; }

  /// Appends l0(k+1):
  ///   l             if l0(k) = l is finite and identity plus envelope held on [kT, (k+1)T],
  ///   k + 1         otherwise, if the low modes agree at (k+1)T and H1 + H2 <= d0,
  ///   infinity      otherwise.
  void advance(bool identity_held, bool low_modes_equal, double H_sum, double d0);

  /// Number of consistency violations found so far (process wide).
  static std::uint64_t violations() noexcept;

 private:
  void check(double H_sum, double d0) const;
  std::vector<Entry> history_;
};

enum class Branch { kA, kB, kTrivial };
std::string to_string(Branch b);

enum class Truncation { kNone, kEnergy1, kEnergy2, kDistance, kDriftBudget };
std::string to_string(Truncation t);

struct EpochRecord {
  std::size_t k = 0;
  Branch branch = Branch::kTrivial;
  std::size_t l0 = kL0Infinity;      // l0(k+1), after the epoch
  double H1 = 0.0, H2 = 0.0;        // at (k+1)T
  double log_weight = 0.0;          // log q/p of the reference path prefix
  double drift_energy = 0.0;        // sum |d|^2 dt on the prefix
  double drift_budget = 0.0;        // case b only
  bool accepted = false;            // reference path kept for the second system
  bool reached_small_ball = false;  // case a: H1 + H2 <= R1 at the bridge start
  Truncation truncation = Truncation::kNone;
  std::size_t retries = 0;
  bool retries_exhausted = false;
  bool met = false;                 // l0(k+1) finite
};

void write_jsonl(std::ostream& os, const EpochRecord& r);

struct CoupledRun {
  CVector u1, u2;
  std::vector<EpochRecord> epochs;
  std::vector<std::size_t> l0;       // l0(0..n_epochs)
  std::vector<double> distance;      // |u1 - u2| at each epoch boundary
  std::optional<std::size_t> coupling_epoch;  // first k with l0(k) finite and never lost afterwards
};

/// Everything a coupled run needs besides the initial data.
struct CouplingSetup {
  SpectralSpace space;
  SolverConfig solver;
  NoiseSpec noise;
  FunctionalConstants consts;
  CouplingParams params;
};

/// Called with (k, u1, u2) at every epoch boundary kT, k = 0..n_epochs.
using EpochObserver = std::function<void(std::size_t, const CVector&, const CVector&)>;

/// Runs n_epochs epochs with the three-way dispatch.  Randomness is addressed
/// by (seed, trajectory); the first system is bit-identical to a plain run
/// driven by StreamId{seed, Lane::kNoise, trajectory}.
CoupledRun run_coupled(const SpectralField& u0_1, const SpectralField& u0_2, std::size_t n_epochs,
                       const CouplingSetup& setup, std::uint64_t seed, std::uint32_t trajectory,
                       const EpochObserver& observer = {});

/// Per-epoch state carried between epochs.
struct CouplingState {
  CouplingState(CVector v1, CVector v2, double alpha)
      : u1(std::move(v1)), u2(std::move(v2)), e4_1(4, alpha), e4_2(4, alpha) {}

  CVector u1, u2;
  std::size_t k = 0;
  // Running E_{u,4}(., lT) of both systems while l0 is finite.
  EnergyAccumulator e4_1, e4_2;
};

/// Single epochs; exposed for tests.  Each advances state.u1/u2 by T.
EpochRecord couple_case_a(CouplingState& state, const CouplingSetup& setup, std::uint64_t seed,
                          std::uint32_t trajectory);
EpochRecord couple_case_b(CouplingState& state, std::size_t l, const CouplingSetup& setup, std::uint64_t seed,
                          std::uint32_t trajectory);
EpochRecord couple_trivial(CouplingState& state, const CouplingSetup& setup, std::uint64_t seed,
                           std::uint32_t trajectory);

/// Empirical surrogates for C4', C6' and C_* from pilot ensembles:
///   C4'  99th percentile of (E_{u,4}(4T) - H(u0)^4) / 4T from H(u0) = d0 / 2,
///   C6'  99th percentile of (E_{u,6}(T1) - H(u0)^6) / T1 from H(u0) = R1 / 2,
///   C_*  99th percentile of int_0^T l |r|^2 over synchronized pairs from the
///        d0 ball with equal low modes.
struct CouplingFit {
  double C4_prime = 0.0;
  double C6_prime = 0.0;
  double C_star = 0.0;
  std::size_t n_paths = 0;
};
CouplingFit fit_coupling_constants(const CouplingSetup& setup, std::size_t n_paths, std::uint64_t seed);

/// Random field with spectral decay k^-decay and random phases, scaled so that
/// H equals `target`.
SpectralField random_field_with_energy(const SpectralSpace& space, double target, double decay,
                                       const FunctionalConstants& consts, SequentialRng& rng);

}  // namespace cnls
