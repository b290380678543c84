#pragma once

// Dirichlet sine basis on (0,1).
//
// A field u is stored through its coefficients against the L2-normalised
// eigenfunctions e_k(x) = sqrt(2) sin(k pi x), k = 1..n_modes, of A = -d^2/dx^2
// with eigenvalues mu_k = (k pi)^2.  Pointwise products are evaluated on the
// interior collocation grid x_j = j / (n_quad + 1), j = 1..n_quad, which is the
// natural grid of the type-I discrete sine transform.  With n_quad >= 4 n_modes
// the projection of |u|^2 u back onto the retained band is alias free, and the
// rectangle rule on this grid integrates |u|^4 and |u|^6 exactly.

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cnls {

using Complex = std::complex<double>;
using CVector = std::vector<Complex>;

/// Raised when a computation produces NaN/Inf.  `where` locates the offending
/// entry (mode index, grid point or step) for diagnostics.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t where = -1)
      : std::runtime_error(what), where_(where) {}
  std::ptrdiff_t where() const noexcept { return where_; }

 private:
  std::ptrdiff_t where_;
};

/// mu_n = (n pi)^2.  Throws std::domain_error for n = 0.
double eigenvalue(std::size_t n);

/// Smallest n_quad >= 4 n_modes such that n_quad + 1 has no prime factor above 5.
std::size_t default_quadrature_size(std::size_t n_modes);

class SpectralSpace {
 public:
  /// n_quad = 0 selects default_quadrature_size(n_modes).
  explicit SpectralSpace(std::size_t n_modes, std::size_t n_quad = 0);

  std::size_t n_modes() const noexcept { return n_modes_; }
  std::size_t n_quad() const noexcept { return n_quad_; }
  /// Quadrature weight 1 / (n_quad + 1).
  double weight() const noexcept { return 1.0 / static_cast<double>(n_quad_ + 1); }
  double grid_point(std::size_t j) const { return static_cast<double>(j + 1) * weight(); }

  /// mu_{k+1} for zero-based k.
  std::span<const double> eigenvalues() const noexcept { return *eigenvalues_; }

  /// Coefficients (length n_modes) to grid values (length n_quad).
  void to_grid(std::span<const Complex> coeffs, std::span<Complex> values) const;
  /// Grid values (length n_quad) to the first n_modes coefficients.
  void from_grid(std::span<const Complex> values, std::span<Complex> coeffs) const;
  /// Unscaled type-I sine transform of a full-length (n_quad) complex array,
  /// Y_k = 2 sum_j X_j sin(pi (j+1)(k+1) / (n_quad+1)).  Applying it twice
  /// multiplies by 2 (n_quad + 1).  Allocation free, for the time stepper.
  void raw_dst(std::span<const Complex> in, std::span<Complex> out) const;

  bool operator==(const SpectralSpace& other) const noexcept {
    return n_modes_ == other.n_modes_ && n_quad_ == other.n_quad_;
  }

 private:
  struct Transform;

  std::size_t n_modes_;
  std::size_t n_quad_;
  std::shared_ptr<const std::vector<double>> eigenvalues_;
  std::shared_ptr<const Transform> transform_;
};

class SpectralField {
 public:
  explicit SpectralField(SpectralSpace space);
  SpectralField(SpectralSpace space, CVector coeffs);

  const SpectralSpace& space() const noexcept { return space_; }
  std::span<const Complex> coeffs() const noexcept { return coeffs_; }
  std::span<Complex> coeffs() noexcept { return coeffs_; }
  const CVector& vector() const noexcept { return coeffs_; }

  /// Coefficient of e_k, k >= 1.
  Complex operator[](std::size_t k) const { return coeffs_.at(k - 1); }
  Complex& operator[](std::size_t k) { return coeffs_.at(k - 1); }

  bool is_finite() const noexcept;

  SpectralField& operator+=(const SpectralField& other);
  SpectralField& operator-=(const SpectralField& other);
  SpectralField& operator*=(Complex factor);

  /// Single mode a e_k.
  static SpectralField mode(SpectralSpace space, std::size_t k, Complex amplitude);

 private:
  SpectralSpace space_;
  CVector coeffs_;
};

SpectralField operator+(SpectralField lhs, const SpectralField& rhs);
SpectralField operator-(SpectralField lhs, const SpectralField& rhs);
SpectralField operator*(Complex factor, SpectralField field);

/// P_N: keep modes k <= N.  Throws std::domain_error for N > n_modes.
SpectralField project_low(const SpectralField& u, std::size_t cutoff);
/// Q_N = I - P_N.
SpectralField project_high(const SpectralField& u, std::size_t cutoff);

/// (sum_k mu_k^s |u_k|^2)^{1/2}; s = 0 is the L2 norm, s = 1 the H^1_0 norm.
double sobolev_norm(const SpectralField& u, double s);
/// Same without the square root, from a raw coefficient span.
double sobolev_norm_squared(const SpectralSpace& space, std::span<const Complex> coeffs, double s);

/// Grid values of u.
CVector collocate(const SpectralField& u);

/// Coefficients of |u|^2 u in the retained band.
SpectralField cubic_nonlinearity(const SpectralField& u);

/// L^p norm for p in {4, 6, inf}.  The infinity norm is the maximum over the
/// collocation grid.
double lp_norm(const SpectralField& u, double p);

/// Integral of |u|^p over (0,1) by collocation quadrature, from grid values.
double integrate_power(const SpectralSpace& space, std::span<const Complex> values, int p);

}  // namespace cnls
