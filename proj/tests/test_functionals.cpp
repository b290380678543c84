#include <cmath>
#include <numbers>

#include "cnls/functionals.hpp"
#include "cnls/random.hpp"
#include "doctest.h"

using namespace cnls;

namespace {

constexpr double kPi2 = std::numbers::pi * std::numbers::pi;

SpectralField random_field(const SpectralSpace& space, SequentialRng& rng, double decay, double scale) {
  SpectralField u(space);
  for (std::size_t k = 1; k <= space.n_modes(); ++k) {
    u[k] = scale * std::pow(static_cast<double>(k), -decay) * Complex(rng.normal(), rng.normal());
  }
  return u;
}

}  // namespace

TEST_CASE("hamiltonian of a single mode") {
  const SpectralSpace space(16);
  CHECK(hamiltonian_star(SpectralField(space)) == 0.0);
  for (double a : {0.3, 1.0, 2.5}) {
    const auto v = SpectralField::mode(space, 1, a);
    CHECK(hamiltonian_star(v) == doctest::Approx(0.5 * kPi2 * a * a - 0.375 * std::pow(a, 4)).epsilon(1e-13));
    const FunctionalConstants c{0.7, 0, 0};
    CHECK(hamiltonian(v, c) ==
          doctest::Approx(0.5 * kPi2 * a * a - 0.375 * std::pow(a, 4) + 0.7 * std::pow(a, 6)).epsilon(1e-13));
  }
  CHECK(hamiltonian_star(SpectralField::mode(space, 1, 1.0)) == doctest::Approx(4.559802).epsilon(1e-7));
}

TEST_CASE("hamiltonian scaling") {
  const SpectralSpace space(16);
  SequentialRng rng(StreamId{4, 0, 0});
  const auto v = random_field(space, rng, 1.5, 1.0);
  FieldEvaluator ev(space);
  const auto n = ev.norms(v.coeffs());
  for (double lambda : {2.0, 10.0}) {
    auto w = v;
    w *= lambda;
    const double expected = lambda * lambda * 0.5 * n.gradient - std::pow(lambda, 4) * 0.25 * n.quartic;
    CHECK(hamiltonian_star(w) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("coupling functional J") {
  const SpectralSpace space(16);
  const FunctionalConstants c{0.7, 0.2, 0};
  const auto zero = SpectralField(space);
  const auto e1 = SpectralField::mode(space, 1, 1.0);
  auto [js0, j0] = coupling_J(e1, e1, zero, c);
  CHECK(js0 == 0.0);
  CHECK(j0 == 0.0);
  SequentialRng rng(StreamId{8, 0, 0});
  const auto r = random_field(space, rng, 1.0, 1.0);
  auto [js1, j1] = coupling_J(zero, zero, r, c);
  CHECK(js1 == doctest::Approx(0.5 * std::pow(sobolev_norm(r, 1), 2)));
  CHECK(j1 == doctest::Approx(js1));
  auto [js2, j2] = coupling_J(e1, e1, e1, c);
  CHECK(js2 == doctest::Approx(0.5 * kPi2 - 2.25).epsilon(1e-13));
  CHECK(j2 == doctest::Approx(js2 + 0.2 * 2 * hamiltonian(e1, c)).epsilon(1e-13));
  CHECK(l_weight(zero, zero, c) == 1.0);
}

TEST_CASE("gagliardo-nirenberg ratio along an amplitude ray") {
  const SpectralSpace space(16);
  FieldEvaluator ev(space);
  // Closed form for a e_1: (3/2 a^4 - pi^2 a^2 / 4) / (a^6 / 2), maximal at
  // a^2 = pi^2 / 3 with value 9 / (2 pi^2).
  const auto n = ev.norms(SpectralField::mode(space, 1, 1.0).coeffs());
  CHECK(gn_ratio_ray_max(n) == doctest::Approx(4.5 / kPi2).epsilon(1e-13));
  double best = -1e9;
  for (int i = 1; i < 4000; ++i) {
    const double a = 0.001 * i;
    best = std::max(best, gn_ratio(ev.norms(SpectralField::mode(space, 1, a).coeffs())));
  }
  CHECK(best == doctest::Approx(4.5 / kPi2).epsilon(1e-5));
}

TEST_CASE("c0 calibration") {
  const SpectralSpace space(32);
  const auto cal = calibrate_c0(space, 2000, 1);
  CHECK(cal.c0 > 0.0);
  // The sech profile is the continuum extremal with ratio 2/3.
  CHECK(cal.max_ratio > 0.6);
  CHECK(cal.max_ratio < 2.0 / 3.0 + 1e-3);
  const auto twice = calibrate_c0(space, 4000, 2);
  CHECK(std::abs(twice.c0 - cal.c0) < 0.2 * cal.c0);

  // Coercivity H(v) >= 1/4 ||v||^2 on fresh random fields at many amplitudes.
  const FunctionalConstants c{cal.c0, 0, 0};
  SequentialRng rng(StreamId{99, 0, 0});
  FieldEvaluator ev(space);
  int violations = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto v = random_field(space, rng, 0.5 + 0.25 * (i % 6), std::pow(10.0, -1.0 + 2.0 * rng.uniform()));
    const auto nv = ev.norms(v.coeffs());
    if (nv.hamiltonian(c.c0) < 0.25 * nv.gradient) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("coupling form maximum") {
  const SpectralSpace space(8);
  const CVector zero(8);
  CHECK(coupling_form_max(space, zero, zero) == doctest::Approx(-0.25 * kPi2));
  // Oracle: assemble the real 2M x 2M form by polarization of the quartic
  // integral on basis vectors, then shifted power iteration.
  SequentialRng rng(StreamId{3, 0, 0});
  const auto u1 = random_field(space, rng, 1.0, 3.0);
  const auto u2 = random_field(space, rng, 1.0, 3.0);
  const double lam = coupling_form_max(space, u1.coeffs(), u2.coeffs());
  FieldEvaluator ev(space);
  const std::size_t m = 8, d = 16;
  auto basis = [&](std::size_t i) {
    CVector r(m);
    r[i % m] = i < m ? Complex(1, 0) : Complex(0, 1);
    return r;
  };
  auto Q = [&](const CVector& r) { return ev.coupling_quartic(u1.coeffs(), u2.coeffs(), r); };
  std::vector<std::vector<double>> F(d, std::vector<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      CVector s = basis(i);
      const CVector bj = basis(j);
      for (std::size_t k = 0; k < m; ++k) s[k] += bj[k];
      F[i][j] = 0.25 * 0.5 * (Q(s) - Q(basis(i)) - Q(bj));
    }
    F[i][i] -= 0.25 * eigenvalue(i % m + 1);
  }
  const double shift = 0.25 * eigenvalue(m) + 1.0;
  std::vector<double> x(d, 1.0), y(d);
  double rayleigh = 0;
  for (int it = 0; it < 20000; ++it) {
    double norm = 0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = shift * x[i];
      for (std::size_t j = 0; j < d; ++j) y[i] += F[i][j] * x[j];
      norm += y[i] * y[i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) x[i] = y[i] / norm;
  }
  double num = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) num += x[i] * F[i][j] * x[j];
  }
  rayleigh = num;
  CHECK(rayleigh == doctest::Approx(lam).epsilon(1e-8));
}

TEST_CASE("c1 calibration gives J >= 1/4 ||r||^2") {
  const SpectralSpace space(16);
  const auto c0 = calibrate_c0(space, 1000, 1).c0;
  const auto cal = calibrate_c1(space, c0, 600, 1);
  CHECK(cal.c1 > 0.0);
  const FunctionalConstants c{c0, cal.c1, 0};
  SequentialRng rng(StreamId{17, 0, 0});
  FieldEvaluator ev(space);
  int violations = 0;
  for (int i = 0; i < 2000; ++i) {
    const double s = std::pow(10.0, -1.0 + 2.0 * rng.uniform());
    const auto u1 = random_field(space, rng, 1.0, s);
    const auto u2 = random_field(space, rng, 1.0, s * 2 * rng.uniform());
    const auto r = random_field(space, rng, 1.0 + rng.uniform(), 1.0);
    const double H1 = ev.hamiltonian(u1.coeffs(), c), H2 = ev.hamiltonian(u2.coeffs(), c);
    const double j = ev.coupling_J(u1.coeffs(), u2.coeffs(), r.coeffs(), H1, H2, c).second;
    if (j < 0.25 * sobolev_norm_squared(space, r.coeffs(), 1.0)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("target hamiltonian by bisection") {
  const SpectralSpace space(16);
  const FunctionalConstants c{0.75, 0, 0};
  SequentialRng rng(StreamId{2, 0, 0});
  const auto v = random_field(space, rng, 1.5, 1.0);
  for (double target : {0.5, 5.0, 20.0}) {
    CHECK(hamiltonian(scale_to_hamiltonian(v, target, c), c) == doctest::Approx(target).epsilon(1e-12));
  }
  CHECK_THROWS_AS(scale_to_hamiltonian(SpectralField(space), 1.0, c), std::domain_error);
}

TEST_CASE("energy functional on a constant trajectory") {
  const SpectralSpace space(8);
  const auto v = SpectralField::mode(space, 2, 0.4);
  const FunctionalConstants c{0.7, 0, 0};
  Trajectory traj{space, SolverConfig{.alpha = 0.5, .dt = 0.1}, {}, {}, nullptr, {}};
  for (int i = 0; i <= 10; ++i) {
    traj.times.push_back(0.1 * i);
    traj.states.push_back(v.vector());
  }
  const double H = hamiltonian(v, c);
  CHECK(energy_E(traj, 4, 0.8, 0.2, c) == doctest::Approx(std::pow(H, 4) * (1 + 0.5 * 4 * 0.6)));
  CHECK(energy_E(traj, 1, 0.3, 0.3, c) == doctest::Approx(H));
  CHECK_THROWS_AS(energy_E(traj, 1, 0.35, 0.0, c), std::domain_error);
  // Additivity of the running integral.
  EnergyAccumulator a(2, 0.5), b(2, 0.5);
  for (int i = 0; i <= 10; ++i) a.add(0.1 * i, 1.0 + i);
  for (int i = 0; i <= 4; ++i) b.add(0.1 * i, 1.0 + i);
  EnergyAccumulator rest(2, 0.5);
  for (int i = 4; i <= 10; ++i) rest.add(0.1 * i, 1.0 + i);
  CHECK(a.integral() == doctest::Approx(b.integral() + rest.integral()).epsilon(1e-14));
}

TEST_CASE("foias-prodi functional") {
  const SpectralSpace space(16);
  const auto nspec = make_noise_spec(16, 4, 0.5, 4.0);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2, .snapshot_stride = 10};
  auto path = std::make_shared<const NoisePath>(record_noise_path(nspec, cfg.dt, StreamId{5, 0, 0}, 100));
  const FunctionalConstants c{0.75, 0.5, 1.0};
  const auto u = SpectralField::mode(space, 1, 0.5);
  const auto [a, b] = simulate_synchronized(u, u, 4, 1.0, cfg, nspec, path);
  for (double x : foias_prodi_series(a, b, 4, c)) CHECK(x == 0.0);

  auto u2 = u;
  u2[6] = 0.2;
  const auto [p, q] = simulate_synchronized(u, u2, 4, 1.0, cfg, nspec, path);
  const auto series = foias_prodi_series(p, q, 4, c);
  CHECK(series[0] == doctest::Approx(coupling_J(u, u2, u - u2, c).second));

  // Synthetic paths: J(t) = e^{-t}, int l = 2t.  Mean J_FP = exp(t (2 alpha - 1 - 2 Lambda')),
  // so the smallest admissible Lambda' is alpha - 1/2.
  std::vector<double> times;
  FoiasProdiPath synth;
  for (int i = 0; i <= 20; ++i) {
    const double t = 0.1 * i;
    times.push_back(t);
    synth.J.push_back(std::exp(-t));
    synth.l_integral.push_back(2 * t);
  }
  const std::vector<FoiasProdiPath> paths{synth};
  const double lambda = fit_lambda(paths, times, 1.0, 4);
  CHECK(lambda / std::pow(eigenvalue(5), 0.125) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(fit_lambda(paths, times, 0.25, 4) == 0.0);
}
