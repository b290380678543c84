#include "cnls/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

namespace cnls {

namespace {

// FFTW planning is not thread safe; execution with the new-array interface is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

bool is_five_smooth(std::size_t n) {
  for (std::size_t p : {2u, 3u, 5u}) {
    while (n % p == 0) n /= p;
  }
  return n == 1;
}

void require_finite(std::span<const Complex> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i].real()) || !std::isfinite(values[i].imag())) {
      throw NumericError(std::string(what) + ": non-finite value at index " + std::to_string(i),
                         static_cast<std::ptrdiff_t>(i));
    }
  }
}

}  // namespace

double eigenvalue(std::size_t n) {
  if (n == 0) throw std::domain_error("eigenvalue: mode index must be >= 1");
  const double k = static_cast<double>(n) * std::numbers::pi;
  return k * k;
}

std::size_t default_quadrature_size(std::size_t n_modes) {
  std::size_t q = 4 * n_modes;
  while (!is_five_smooth(q + 1)) ++q;
  return q;
}

// Type-I DST on interleaved complex data: two real transforms of length
// n_quad, stride 2, distance 1.
struct SpectralSpace::Transform {
  fftw_plan plan = nullptr;
  std::size_t n_quad = 0;

  explicit Transform(std::size_t n) : n_quad(n) {
    std::vector<double> in(2 * n), out(2 * n);
    int len = static_cast<int>(n);
    fftw_r2r_kind kind = FFTW_RODFT00;
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_many_r2r(1, &len, 2, in.data(), nullptr, 2, 1, out.data(), nullptr, 2, 1, &kind,
                              FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw std::runtime_error("fftw: failed to create DST-I plan");
  }
  ~Transform() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  Transform(const Transform&) = delete;
  Transform& operator=(const Transform&) = delete;

  void execute(const Complex* in, Complex* out) const {
    // The plan never writes to its input for out-of-place r2r transforms.
    fftw_execute_r2r(plan, const_cast<double*>(reinterpret_cast<const double*>(in)),
                     reinterpret_cast<double*>(out));
  }
};

SpectralSpace::SpectralSpace(std::size_t n_modes, std::size_t n_quad)
    : n_modes_(n_modes), n_quad_(n_quad == 0 ? default_quadrature_size(n_modes) : n_quad) {
  if (n_modes_ == 0) throw std::domain_error("SpectralSpace: n_modes must be positive");
  if (n_quad_ < 4 * n_modes_) {
    throw std::domain_error("SpectralSpace: n_quad must be >= 4 * n_modes (got " +
                            std::to_string(n_quad_) + " for n_modes " + std::to_string(n_modes_) + ")");
  }
  auto mu = std::make_shared<std::vector<double>>(n_modes_);
  for (std::size_t k = 0; k < n_modes_; ++k) (*mu)[k] = eigenvalue(k + 1);
  eigenvalues_ = std::move(mu);
  transform_ = std::make_shared<const Transform>(n_quad_);
}

void SpectralSpace::to_grid(std::span<const Complex> coeffs, std::span<Complex> values) const {
  if (coeffs.size() != n_modes_ || values.size() != n_quad_) {
    throw std::invalid_argument("to_grid: size mismatch");
  }
  CVector padded(n_quad_, Complex{});
  std::copy(coeffs.begin(), coeffs.end(), padded.begin());
  transform_->execute(padded.data(), values.data());
  const double scale = std::numbers::sqrt2 / 2.0;
  for (auto& v : values) v *= scale;
}

void SpectralSpace::from_grid(std::span<const Complex> values, std::span<Complex> coeffs) const {
  if (coeffs.size() != n_modes_ || values.size() != n_quad_) {
    throw std::invalid_argument("from_grid: size mismatch");
  }
  CVector full(n_quad_);
  transform_->execute(values.data(), full.data());
  const double scale = weight() * std::numbers::sqrt2 / 2.0;
  for (std::size_t k = 0; k < n_modes_; ++k) coeffs[k] = scale * full[k];
}

void SpectralSpace::raw_dst(std::span<const Complex> in, std::span<Complex> out) const {
  if (in.size() != n_quad_ || out.size() != n_quad_) throw std::invalid_argument("raw_dst: size mismatch");
  transform_->execute(in.data(), out.data());
}

SpectralField::SpectralField(SpectralSpace space)
    : space_(std::move(space)), coeffs_(space_.n_modes(), Complex{}) {}

SpectralField::SpectralField(SpectralSpace space, CVector coeffs)
    : space_(std::move(space)), coeffs_(std::move(coeffs)) {
  if (coeffs_.size() != space_.n_modes()) {
    throw std::invalid_argument("SpectralField: expected " + std::to_string(space_.n_modes()) +
                                " coefficients, got " + std::to_string(coeffs_.size()));
  }
}

bool SpectralField::is_finite() const noexcept {
  return std::all_of(coeffs_.begin(), coeffs_.end(),
                     [](Complex c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
}

SpectralField& SpectralField::operator+=(const SpectralField& other) {
  if (!(space_ == other.space_)) throw std::invalid_argument("SpectralField: space mismatch");
  for (std::size_t k = 0; k < coeffs_.size(); ++k) coeffs_[k] += other.coeffs_[k];
  return *this;
}

SpectralField& SpectralField::operator-=(const SpectralField& other) {
  if (!(space_ == other.space_)) throw std::invalid_argument("SpectralField: space mismatch");
  for (std::size_t k = 0; k < coeffs_.size(); ++k) coeffs_[k] -= other.coeffs_[k];
  return *this;
}

SpectralField& SpectralField::operator*=(Complex factor) {
  for (auto& c : coeffs_) c *= factor;
  return *this;
}

SpectralField SpectralField::mode(SpectralSpace space, std::size_t k, Complex amplitude) {
  SpectralField f(std::move(space));
  f[k] = amplitude;
  return f;
}

SpectralField operator+(SpectralField lhs, const SpectralField& rhs) { return lhs += rhs; }
SpectralField operator-(SpectralField lhs, const SpectralField& rhs) { return lhs -= rhs; }
SpectralField operator*(Complex factor, SpectralField field) { return field *= factor; }

SpectralField project_low(const SpectralField& u, std::size_t cutoff) {
  if (cutoff > u.space().n_modes()) {
    throw std::domain_error("project_low: cutoff " + std::to_string(cutoff) + " exceeds n_modes " +
                            std::to_string(u.space().n_modes()));
  }
  SpectralField out = u;
  auto c = out.coeffs();
  std::fill(c.begin() + static_cast<std::ptrdiff_t>(cutoff), c.end(), Complex{});
  return out;
}

SpectralField project_high(const SpectralField& u, std::size_t cutoff) {
  if (cutoff > u.space().n_modes()) {
    throw std::domain_error("project_high: cutoff " + std::to_string(cutoff) + " exceeds n_modes " +
                            std::to_string(u.space().n_modes()));
  }
  SpectralField out = u;
  auto c = out.coeffs();
  std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(cutoff), Complex{});
  return out;
}

double sobolev_norm_squared(const SpectralSpace& space, std::span<const Complex> coeffs, double s) {
  const auto mu = space.eigenvalues();
  double sum = 0.0;
  if (s == 0.0) {
    for (const auto& c : coeffs) sum += std::norm(c);
  } else if (s == 1.0) {
    for (std::size_t k = 0; k < coeffs.size(); ++k) sum += mu[k] * std::norm(coeffs[k]);
  } else {
    for (std::size_t k = 0; k < coeffs.size(); ++k) sum += std::pow(mu[k], s) * std::norm(coeffs[k]);
  }
  return sum;
}

double sobolev_norm(const SpectralField& u, double s) {
  require_finite(u.coeffs(), "sobolev_norm");
  return std::sqrt(sobolev_norm_squared(u.space(), u.coeffs(), s));
}

CVector collocate(const SpectralField& u) {
  CVector values(u.space().n_quad());
  u.space().to_grid(u.coeffs(), values);
  return values;
}

SpectralField cubic_nonlinearity(const SpectralField& u) {
  require_finite(u.coeffs(), "cubic_nonlinearity");
  CVector values = collocate(u);
  for (auto& v : values) v *= std::norm(v);
  require_finite(values, "cubic_nonlinearity (collocation point)");
  SpectralField out(u.space());
  u.space().from_grid(values, out.coeffs());
  return out;
}

double integrate_power(const SpectralSpace& space, std::span<const Complex> values, int p) {
  double sum = 0.0;
  switch (p) {
    case 2:
      for (const auto& v : values) sum += std::norm(v);
      break;
    case 4:
      for (const auto& v : values) {
        const double a = std::norm(v);
        sum += a * a;
      }
      break;
    case 6:
      for (const auto& v : values) {
        const double a = std::norm(v);
        sum += a * a * a;
      }
      break;
    default:
      throw std::domain_error("integrate_power: p must be 2, 4 or 6");
  }
  return space.weight() * sum;
}

double lp_norm(const SpectralField& u, double p) {
  require_finite(u.coeffs(), "lp_norm");
  const CVector values = collocate(u);
  if (std::isinf(p)) {
    double m = 0.0;
    for (const auto& v : values) m = std::max(m, std::abs(v));
    return m;
  }
  if (p == 4.0) return std::pow(integrate_power(u.space(), values, 4), 0.25);
  if (p == 6.0) return std::pow(integrate_power(u.space(), values, 6), 1.0 / 6.0);
  throw std::domain_error("lp_norm: p must be 4, 6 or infinity");
}

}  // namespace cnls
