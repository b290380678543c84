#pragma once

// Counter-based random numbers.  Every draw is a pure function of
// (master seed, lane, trajectory, step, index), so Monte Carlo results do not
// depend on how trajectories are distributed over workers.

#include <array>
#include <cstdint>
#include <utility>

namespace cnls {

/// Philox4x32-10 block cipher (Salmon et al., Random123).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter generate(Counter counter, Key key) noexcept;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Uniform in (0, 1] from two 32-bit words (53 bits of precision).
double uniform_from_bits(std::uint32_t hi, std::uint32_t lo) noexcept;

/// Independent lanes separate logically different uses of randomness for the
/// same trajectory (driving noise, accept/reject uniforms, residual proposals...).
enum class Lane : std::uint64_t {
  kNoise = 0,
  kCoupling = 1,
  kResidual = 2,
  kInitialData = 3,
  kBootstrap = 4,
  kCalibration = 5,
  kAuxiliary = 6,
};

struct StreamId {
  std::uint64_t seed = 0;
  std::uint64_t lane = 0;
  std::uint32_t trajectory = 0;

  StreamId with_lane(std::uint64_t l) const noexcept { return {seed, l, trajectory}; }
  StreamId with_lane(Lane l) const noexcept { return with_lane(static_cast<std::uint64_t>(l)); }
  StreamId with_trajectory(std::uint32_t t) const noexcept { return {seed, lane, t}; }
};

/// Random access stream: normal pairs and uniforms addressed by (step, index).
class CounterStream {
 public:
  explicit CounterStream(StreamId id) noexcept;

  const StreamId& id() const noexcept { return id_; }

  /// Two independent standard normals (Box-Muller on one Philox block).
  std::pair<double, double> normal_pair(std::uint64_t step, std::uint32_t index) const noexcept;
  double uniform(std::uint64_t step, std::uint32_t index) const noexcept;
  std::uint64_t bits(std::uint64_t step, std::uint32_t index) const noexcept;

 private:
  Philox4x32::Counter block(std::uint64_t step, std::uint32_t index) const noexcept;

  StreamId id_;
  Philox4x32::Key key_;
};

/// Sequential generator on top of a CounterStream; also usable as a
/// UniformRandomBitGenerator.
class SequentialRng {
 public:
  using result_type = std::uint64_t;

  explicit SequentialRng(StreamId id) noexcept : stream_(id) {}

  double uniform() noexcept { return stream_.uniform(counter_++, 0); }
  double normal() noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept;

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  CounterStream stream_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cnls
