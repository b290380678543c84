#include <cmath>
#include <numbers>

#include "cnls/random.hpp"
#include "cnls/spectral.hpp"
#include "doctest.h"

using namespace cnls;

namespace {

SpectralField random_field(const SpectralSpace& space, std::uint64_t seed, double decay = 2.0) {
  SpectralField u(space);
  const CounterStream s(StreamId{seed, 0, 0});
  for (std::size_t k = 1; k <= space.n_modes(); ++k) {
    const auto [x, y] = s.normal_pair(0, static_cast<std::uint32_t>(k));
    u[k] = Complex(x, y) * std::pow(static_cast<double>(k), -decay);
  }
  return u;
}

// Direct sum of the sine series, no transforms involved.
Complex evaluate(const SpectralField& u, double x) {
  Complex v{};
  for (std::size_t k = 1; k <= u.space().n_modes(); ++k) {
    v += u[k] * std::numbers::sqrt2 * std::sin(static_cast<double>(k) * std::numbers::pi * x);
  }
  return v;
}

}  // namespace

TEST_CASE("eigenvalues and grid") {
  CHECK(eigenvalue(1) == doctest::Approx(std::numbers::pi * std::numbers::pi));
  CHECK(eigenvalue(3) == doctest::Approx(9 * std::numbers::pi * std::numbers::pi));
  CHECK_THROWS_AS(eigenvalue(0), std::domain_error);
  CHECK(default_quadrature_size(64) == 269);  // 270 = 2 * 3^3 * 5
  CHECK(default_quadrature_size(8) == 35);
  CHECK_THROWS_AS(SpectralSpace(8, 31), std::domain_error);
}

TEST_CASE("collocation matches direct evaluation and round trips") {
  const SpectralSpace space(16);
  const auto u = random_field(space, 3);
  const auto values = collocate(u);
  for (std::size_t j = 0; j < space.n_quad(); j += 7) {
    const Complex ref = evaluate(u, space.grid_point(j));
    CHECK(std::abs(values[j] - ref) < 1e-13);
  }
  SpectralField back(space);
  space.from_grid(values, back.coeffs());
  for (std::size_t k = 1; k <= 16; ++k) CHECK(std::abs(back[k] - u[k]) < 1e-14);
}

TEST_CASE("cubic nonlinearity against a midpoint quadrature oracle") {
  const SpectralSpace space(8);
  const auto u = random_field(space, 11, 1.0);
  const auto nl = cubic_nonlinearity(u);
  // |u|^2 u e_k is a cosine polynomial of degree <= 4 n_modes in pi x, which
  // the midpoint rule on 200 cells integrates exactly.
  const int cells = 200;
  for (std::size_t k = 1; k <= 8; ++k) {
    Complex ref{};
    for (int i = 0; i < cells; ++i) {
      const double x = (i + 0.5) / cells;
      const Complex v = evaluate(u, x);
      ref += std::norm(v) * v * std::numbers::sqrt2 * std::sin(static_cast<double>(k) * std::numbers::pi * x);
    }
    ref /= cells;
    CHECK(std::abs(nl[k] - ref) < 1e-12);
  }
}

TEST_CASE("norms") {
  const SpectralSpace space(8);
  const auto e1 = SpectralField::mode(space, 1, 1.0);
  CHECK(sobolev_norm(e1, 0) == doctest::Approx(1.0));
  CHECK(sobolev_norm(e1, 1) == doctest::Approx(std::numbers::pi));
  // int_0^1 (sqrt2 sin pi x)^4 = 3/2 and (sqrt2 sin pi x)^6 integrates to 5/2.
  CHECK(std::pow(lp_norm(e1, 4), 4) == doctest::Approx(1.5).epsilon(1e-13));
  CHECK(std::pow(lp_norm(e1, 6), 6) == doctest::Approx(2.5).epsilon(1e-13));
  CHECK(lp_norm(e1, INFINITY) <= std::numbers::sqrt2);
  CHECK_THROWS_AS(lp_norm(e1, 3), std::domain_error);

  auto bad = e1;
  bad[2] = Complex(NAN, 0);
  CHECK_THROWS_AS(sobolev_norm(bad, 0), NumericError);
}

TEST_CASE("projections") {
  const SpectralSpace space(8);
  const auto u = random_field(space, 5);
  const auto lo = project_low(u, 3), hi = project_high(u, 3);
  for (std::size_t k = 1; k <= 8; ++k) CHECK((lo + hi)[k] == u[k]);
  CHECK(lo[4] == Complex{});
  CHECK(hi[3] == Complex{});
  CHECK_THROWS_AS(project_low(u, 9), std::domain_error);
}

TEST_CASE("documented examples") {
  const SpectralSpace space(8);
  auto u = SpectralField::mode(space, 1, 1.0);
  u[2] = 1.0;
  const double pi4 = std::pow(std::numbers::pi, 4);
  CHECK(sobolev_norm(u, 2) == doctest::Approx(std::sqrt(17 * pi4)).epsilon(1e-14));
  for (Complex a : {Complex(0.7, 0), Complex(0, 0.7)}) {
    const auto nl = cubic_nonlinearity(SpectralField::mode(space, 1, a));
    const Complex a3 = std::norm(a) * a;
    CHECK(std::abs(nl[1] - 1.5 * a3) < 1e-15);
    CHECK(std::abs(nl[3] + 0.5 * a3) < 1e-15);
    CHECK(std::abs(nl[2]) < 1e-15);
  }
  // Mass conservation of the cubic term: Re <i |u|^2 u, u> = 0.
  const auto v = random_field(space, 21, 1.0);
  const auto nl = cubic_nonlinearity(v);
  double re = 0, scale = 0;
  for (std::size_t k = 1; k <= 8; ++k) {
    re += (Complex(0, 1) * nl[k] * std::conj(v[k])).real();
    scale += std::abs(nl[k] * std::conj(v[k]));
  }
  CHECK(std::abs(re) < 1e-12 * scale);
}
