#pragma once

// Diagonal additive noise b dW.  b e_n = b_n e_n, W is realised through its
// retained modes only.  Raw Wiener increments are complex by default: real and
// imaginary parts are independent N(0, dt/2), so E|dW_n|^2 = dt.  A real-noise
// variant (imaginary part zero, real part N(0, dt)) is available.

#include <cstddef>
#include <span>
#include <vector>

#include "cnls/random.hpp"
#include "cnls/spectral.hpp"

namespace cnls {

enum class NoiseKind { kComplex, kReal };

/// Variance of one real component of a raw increment, in units of dt.
constexpr double component_variance(NoiseKind kind) noexcept {
  return kind == NoiseKind::kComplex ? 0.5 : 1.0;
}

struct NoiseSpec {
  std::vector<double> b;
  std::size_t n_star = 0;
  double sigma_0 = 0.0;  // min_{n <= n_star} b_n, zero when n_star = 0
  double B0 = 0.0;
  double B1 = 0.0;
  double B3 = 0.0;
  NoiseKind kind = NoiseKind::kComplex;

  std::size_t n_modes() const noexcept { return b.size(); }
  /// B_s = sum_n mu_n^s b_n^2.
  double hilbert_schmidt(double s) const;
  bool is_zero() const noexcept;
};

/// b_n = amplitude * n^{-decay}.  Requires decay > 3.5 (B_3 finite) and
/// 1 <= n_star <= n_modes unless amplitude == 0 and n_star == 0 (no noise).
NoiseSpec make_noise_spec(std::size_t n_modes, std::size_t n_star, double amplitude, double decay,
                          NoiseKind kind = NoiseKind::kComplex);

/// Arbitrary nonnegative b.  b_n > 0 is required for n <= n_star.
NoiseSpec make_noise_spec(std::vector<double> b, std::size_t n_star, NoiseKind kind = NoiseKind::kComplex);

NoiseSpec zero_noise(std::size_t n_modes);

/// Source of raw increments dW for one trajectory.
class NoiseGenerator {
 public:
  NoiseGenerator(const NoiseSpec& nspec, double dt, StreamId id);

  double dt() const noexcept { return dt_; }
  const NoiseSpec& nspec() const noexcept { return *spec_; }
  const StreamId& id() const noexcept { return stream_.id(); }

  /// Raw increment dW at `step` (length n_modes).
  void raw(std::uint64_t step, std::span<Complex> out) const;
  /// b dW at `step`.
  void forcing(std::uint64_t step, std::span<Complex> out) const;

 private:
  const NoiseSpec* spec_;
  double dt_;
  double scale_;
  CounterStream stream_;
};

/// b dW for (stream, step): mode n receives b_n (xi + i zeta) sqrt(dt/2).
CVector sample_increment(const NoiseSpec& nspec, double dt, const CounterStream& stream, std::uint64_t step);

/// Recorded raw increments, replayable bit for bit.
struct NoisePath {
  double dt = 0.0;
  StreamId seed_id;
  std::vector<CVector> increments;

  std::size_t steps() const noexcept { return increments.size(); }
};

NoisePath record_noise_path(const NoiseSpec& nspec, double dt, StreamId id, std::size_t n_steps);

/// Component-wise division by b_n on modes n <= n_star.  Nonzero entries above
/// n_star are a domain error.
CVector sigma_l_inverse_apply(const NoiseSpec& nspec, std::span<const Complex> v);

}  // namespace cnls
