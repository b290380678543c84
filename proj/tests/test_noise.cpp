#include <cmath>
#include <numbers>

#include "cnls/noise.hpp"
#include "doctest.h"

using namespace cnls;

TEST_CASE("hilbert-schmidt sums against zeta values") {
  // b_n = n^-4: B_0 = zeta(8) = pi^8 / 9450, B_1 = pi^2 zeta(6) = pi^8 / 945.
  const auto nspec = make_noise_spec(400, 4, 1.0, 4.0);
  const double pi8 = std::pow(std::numbers::pi, 8);
  CHECK(nspec.B0 == doctest::Approx(pi8 / 9450).epsilon(1e-12));
  CHECK(nspec.B1 == doctest::Approx(pi8 / 945).epsilon(1e-12));
  CHECK(nspec.sigma_0 == doctest::Approx(std::pow(4.0, -4.0)));
}

TEST_CASE("noise parameter validation") {
  CHECK_THROWS_AS(make_noise_spec(16, 4, 1.0, 3.5), std::domain_error);
  CHECK_THROWS_AS(make_noise_spec(16, 0, 1.0, 4.0), std::domain_error);
  CHECK_THROWS_AS(make_noise_spec(16, 17, 1.0, 4.0), std::domain_error);
  CHECK_THROWS_AS(make_noise_spec({1.0, 0.0, 1.0}, 2), std::domain_error);
  CHECK_NOTHROW(make_noise_spec(16, 0, 0.0, 4.0));
  CHECK(zero_noise(8).is_zero());
}

TEST_CASE("increment variance follows the noise convention") {
  const auto nspec = make_noise_spec(4, 2, 1.0, 4.0);
  const double dt = 0.01;
  const NoiseGenerator gen(nspec, dt, StreamId{9, 0, 0});
  const int n = 50000;
  double re2 = 0, im2 = 0, cross = 0;
  CVector dw(4);
  for (int s = 0; s < n; ++s) {
    gen.raw(static_cast<std::uint64_t>(s), dw);
    re2 += dw[0].real() * dw[0].real();
    im2 += dw[0].imag() * dw[0].imag();
    cross += dw[0].real() * dw[1].real();
  }
  const double tol = 5.0 * std::sqrt(2.0 / n) * dt / 2;
  CHECK(std::abs(re2 / n - dt / 2) < tol);
  CHECK(std::abs(im2 / n - dt / 2) < tol);
  CHECK(std::abs(cross / n) < tol);

  const auto real_spec = make_noise_spec(4, 2, 1.0, 4.0, NoiseKind::kReal);
  const NoiseGenerator real_gen(real_spec, dt, StreamId{9, 0, 0});
  double r2 = 0;
  for (int s = 0; s < n; ++s) {
    real_gen.raw(static_cast<std::uint64_t>(s), dw);
    CHECK(dw[0].imag() == 0.0);
    r2 += std::norm(dw[0]);
  }
  CHECK(std::abs(r2 / n - dt) < 5.0 * std::sqrt(2.0 / n) * dt);
}

TEST_CASE("recorded paths replay the generator") {
  const auto nspec = make_noise_spec(8, 3, 0.5, 4.0);
  const StreamId id{77, 0, 3};
  const auto path = record_noise_path(nspec, 1e-3, id, 20);
  const NoiseGenerator gen(nspec, 1e-3, id);
  CVector dw(8);
  gen.raw(13, dw);
  CHECK(dw == path.increments[13]);
  const auto forced = sample_increment(nspec, 1e-3, CounterStream(id), 13);
  for (std::size_t n = 0; n < 8; ++n) CHECK(forced[n] == nspec.b[n] * dw[n]);
}

TEST_CASE("inverse of the low-mode noise covariance") {
  const auto nspec = make_noise_spec(8, 2, 2.0, 4.0);
  const CVector v{Complex(2, 0), Complex(0, 1), Complex{}};
  const auto w = sigma_l_inverse_apply(nspec, v);
  CHECK(w[0] == Complex(1, 0));
  CHECK(std::abs(w[1] - Complex(0, 8)) < 1e-12);
  CHECK_THROWS_AS(sigma_l_inverse_apply(nspec, CVector{1, 1, 1}), std::domain_error);
}
