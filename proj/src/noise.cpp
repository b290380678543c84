#include "cnls/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cnls {

namespace {

void finish_spec(NoiseSpec& nspec) {
  if (nspec.n_star > nspec.b.size()) {
    throw std::domain_error("noise: n_star (" + std::to_string(nspec.n_star) + ") exceeds n_modes (" +
                            std::to_string(nspec.b.size()) + ")");
  }
  for (std::size_t n = 0; n < nspec.b.size(); ++n) {
    if (!(nspec.b[n] >= 0.0) || !std::isfinite(nspec.b[n])) {
      throw std::domain_error("noise: b_" + std::to_string(n + 1) + " must be finite and nonnegative");
    }
  }
  nspec.sigma_0 = 0.0;
  if (nspec.n_star > 0) {
    nspec.sigma_0 = *std::min_element(nspec.b.begin(), nspec.b.begin() + static_cast<std::ptrdiff_t>(nspec.n_star));
    if (!(nspec.sigma_0 > 0.0)) {
      throw std::domain_error("noise: non-degeneracy requires b_n > 0 for all n <= n_star = " +
                              std::to_string(nspec.n_star));
    }
  }
  nspec.B0 = nspec.hilbert_schmidt(0.0);
  nspec.B1 = nspec.hilbert_schmidt(1.0);
  nspec.B3 = nspec.hilbert_schmidt(3.0);
}

}  // namespace

double NoiseSpec::hilbert_schmidt(double s) const {
  double sum = 0.0;
  for (std::size_t n = 0; n < b.size(); ++n) sum += std::pow(eigenvalue(n + 1), s) * b[n] * b[n];
  return sum;
}

bool NoiseSpec::is_zero() const noexcept {
  return std::all_of(b.begin(), b.end(), [](double x) { return x == 0.0; });
}

NoiseSpec make_noise_spec(std::size_t n_modes, std::size_t n_star, double amplitude, double decay,
                          NoiseKind kind) {
  if (!(decay > 3.5)) {
    throw std::domain_error("noise: decay must exceed 3.5, otherwise B_3 = sum mu_n^3 b_n^2 diverges (got " +
                            std::to_string(decay) + ")");
  }
  if (!(amplitude >= 0.0)) throw std::domain_error("noise: amplitude must be nonnegative");
  if (n_star == 0 && amplitude != 0.0) {
    throw std::domain_error("noise: n_star must be at least 1 for nonzero noise");
  }
  NoiseSpec nspec;
  nspec.kind = kind;
  nspec.n_star = n_star;
  nspec.b.resize(n_modes);
  for (std::size_t n = 1; n <= n_modes; ++n) {
    nspec.b[n - 1] = amplitude * std::pow(static_cast<double>(n), -decay);
  }
  finish_spec(nspec);
  return nspec;
}

NoiseSpec make_noise_spec(std::vector<double> b, std::size_t n_star, NoiseKind kind) {
  NoiseSpec nspec;
  nspec.kind = kind;
  nspec.n_star = n_star;
  nspec.b = std::move(b);
  finish_spec(nspec);
  return nspec;
}

NoiseSpec zero_noise(std::size_t n_modes) {
  NoiseSpec nspec;
  nspec.b.assign(n_modes, 0.0);
  finish_spec(nspec);
  return nspec;
}

NoiseGenerator::NoiseGenerator(const NoiseSpec& nspec, double dt, StreamId id)
    : spec_(&nspec), dt_(dt), scale_(std::sqrt(dt * component_variance(nspec.kind))), stream_(id) {
  if (!(dt > 0.0)) throw std::domain_error("noise: dt must be positive");
}

void NoiseGenerator::raw(std::uint64_t step, std::span<Complex> out) const {
  if (out.size() != spec_->n_modes()) throw std::invalid_argument("noise: output size mismatch");
  if (spec_->kind == NoiseKind::kComplex) {
    for (std::size_t n = 0; n < out.size(); ++n) {
      const auto [xi, zeta] = stream_.normal_pair(step, static_cast<std::uint32_t>(n));
      out[n] = Complex(scale_ * xi, scale_ * zeta);
    }
  } else {
    for (std::size_t n = 0; n < out.size(); ++n) {
      out[n] = Complex(scale_ * stream_.normal_pair(step, static_cast<std::uint32_t>(n)).first, 0.0);
    }
  }
}

void NoiseGenerator::forcing(std::uint64_t step, std::span<Complex> out) const {
  raw(step, out);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] *= spec_->b[n];
}

CVector sample_increment(const NoiseSpec& nspec, double dt, const CounterStream& stream, std::uint64_t step) {
  NoiseGenerator gen(nspec, dt, stream.id());
  CVector out(nspec.n_modes());
  gen.forcing(step, out);
  return out;
}

NoisePath record_noise_path(const NoiseSpec& nspec, double dt, StreamId id, std::size_t n_steps) {
  NoiseGenerator gen(nspec, dt, id);
  NoisePath path;
  path.dt = dt;
  path.seed_id = id;
  path.increments.assign(n_steps, CVector(nspec.n_modes()));
  for (std::size_t s = 0; s < n_steps; ++s) gen.raw(s, path.increments[s]);
  return path;
}

CVector sigma_l_inverse_apply(const NoiseSpec& nspec, std::span<const Complex> v) {
  if (v.size() > nspec.n_modes()) throw std::invalid_argument("sigma_l_inverse_apply: vector too long");
  CVector out(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    if (n < nspec.n_star) {
      out[n] = v[n] / nspec.b[n];
    } else if (v[n] != Complex{}) {
      throw std::domain_error("sigma_l_inverse_apply: nonzero entry at mode " + std::to_string(n + 1) +
                              " above n_star = " + std::to_string(nspec.n_star));
    }
  }
  return out;
}

}  // namespace cnls
