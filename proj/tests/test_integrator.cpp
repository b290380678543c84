#include <cmath>

#include "cnls/integrator.hpp"
#include "doctest.h"

using namespace cnls;

namespace {

double l2(std::span<const Complex> c) {
  double s = 0;
  for (auto z : c) s += std::norm(z);
  return std::sqrt(s);
}

SpectralField smooth_initial(const SpectralSpace& space) {
  SpectralField u(space);
  u[1] = Complex(1.0, 0.2);
  u[2] = Complex(-0.3, 0.4);
  u[3] = Complex(0.1, -0.1);
  return u;
}

CVector run(const SpectralField& u0, double t, SolverConfig cfg) {
  Stepper stepper(u0.space(), cfg);
  CVector u = u0.vector();
  for (std::size_t s = 0, n = steps_for(t, cfg.dt); s < n; ++s) stepper.step(u, {}, static_cast<std::ptrdiff_t>(s));
  return u;
}

}  // namespace

TEST_CASE("step counts must be exact") {
  CHECK(steps_for(1.0, 1e-3) == 1000);
  CHECK(steps_for(10.0, 2.5e-4) == 40000);
  CHECK_THROWS_AS(steps_for(1.0, 0.3), std::domain_error);
}

TEST_CASE("linear flow is solved exactly") {
  const SpectralSpace space(8);
  const auto u0 = smooth_initial(space);
  SolverConfig cfg{.alpha = 0.7, .dt = 1e-2, .nonlinear = false};
  const auto u = run(u0, 1.0, cfg);
  for (std::size_t k = 1; k <= 8; ++k) {
    const Complex exact = std::exp(-Complex(0.7, eigenvalue(k)) * 1.0) * u0[k];
    CHECK(std::abs(u[k - 1] - exact) < 1e-12);
  }
}

TEST_CASE("noise-free damped flow contracts the L2 norm exactly") {
  const SpectralSpace space(16);
  const auto u0 = smooth_initial(space);
  for (auto scheme : {Scheme::kStrang, Scheme::kLie}) {
    SolverConfig cfg{.alpha = 1.0, .dt = 1e-3, .scheme = scheme};
    const auto u = run(u0, 2.0, cfg);
    CHECK(l2(u) == doctest::Approx(std::exp(-2.0) * l2(u0.vector())).epsilon(1e-10));
  }
}

TEST_CASE("strang splitting is second order") {
  const SpectralSpace space(16);
  auto u0 = smooth_initial(space);
  u0 *= 2.0;
  SolverConfig ref_cfg{.alpha = 0.5, .dt = 1.0 / 2560};
  const auto ref = run(u0, 0.5, ref_cfg);
  std::vector<double> errors;
  for (double dt : {1.0 / 40, 1.0 / 80, 1.0 / 160}) {
    SolverConfig cfg{.alpha = 0.5, .dt = dt};
    const auto u = run(u0, 0.5, cfg);
    CVector diff(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) diff[k] = u[k] - ref[k];
    errors.push_back(l2(diff));
  }
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double order = std::log2(errors[i - 1] / errors[i]);
    CHECK(order > 1.9);
    CHECK(order < 3.0);
  }
}

TEST_CASE("forcing is added after the deterministic step") {
  const SpectralSpace space(8);
  const auto u0 = smooth_initial(space);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2};
  CVector dwb(8, Complex{}), h(8, Complex{});
  dwb[2] = Complex(0.5, 0);
  h[0] = Complex(0, 3.0);
  const auto base = step(u0, cfg, {});
  const auto forced = step(u0, cfg, dwb, h);
  CHECK(std::abs(forced[3] - base[3] - 0.5) < 1e-15);
  CHECK(std::abs(forced[1] - base[1] - Complex(0, 0.03)) < 1e-15);
}

TEST_CASE("simulate replays a recorded path and snapshots on stride") {
  const SpectralSpace space(8);
  const auto nspec = make_noise_spec(8, 2, 0.5, 4.0);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2, .snapshot_stride = 3};
  auto path = std::make_shared<const NoisePath>(record_noise_path(nspec, cfg.dt, StreamId{1, 0, 0}, 10));
  const auto a = simulate(smooth_initial(space), 0.1, cfg, nspec, path);
  const auto b = simulate(smooth_initial(space), 0.1, cfg, nspec, path);
  REQUIRE(a.size() == 5);  // t = 0, 0.03, 0.06, 0.09, 0.1
  CHECK(a.times.back() == doctest::Approx(0.1));
  CHECK(a.states.back() == b.states.back());
  CHECK_THROWS_AS(simulate(smooth_initial(space), 0.2, cfg, nspec, path), std::invalid_argument);
}

TEST_CASE("drift outside the noise band is rejected") {
  const SpectralSpace space(8);
  const auto nspec = make_noise_spec(8, 2, 0.5, 4.0);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2};
  auto path = std::make_shared<const NoisePath>(record_noise_path(nspec, cfg.dt, StreamId{1, 0, 0}, 10));
  const DriftSchedule bad = [](std::size_t, double, std::span<const Complex>) { return CVector{0, 0, 1}; };
  CHECK_THROWS_AS(simulate(smooth_initial(space), 0.1, cfg, nspec, path, bad), std::domain_error);
  const DriftSchedule good = [](std::size_t, double, std::span<const Complex>) { return CVector{1, 0}; };
  const auto traj = simulate(smooth_initial(space), 0.1, cfg, nspec, path, good);
  CHECK(traj.drift_log.size() == 10);
}

TEST_CASE("synchronized pairs share low modes") {
  const SpectralSpace space(8);
  const auto nspec = make_noise_spec(8, 4, 0.5, 4.0);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2};
  auto path = std::make_shared<const NoisePath>(record_noise_path(nspec, cfg.dt, StreamId{2, 0, 0}, 50));
  auto u2 = smooth_initial(space);
  u2[6] = 0.3;
  u2[1] = 0.0;
  const auto [t1, t2] = simulate_synchronized(smooth_initial(space), u2, 4, 0.5, cfg, nspec, path);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) CHECK(t1.states[i][k] == t2.states[i][k]);
  }
  CHECK(t1.states.back()[5] != t2.states.back()[5]);
}

TEST_CASE("blow-up is reported with the step index") {
  const SpectralSpace space(8);
  auto u0 = SpectralField::mode(space, 1, 1e160);
  SolverConfig cfg{.alpha = 1.0, .dt = 1e-2};
  Stepper stepper(space, cfg);
  CVector u = u0.vector();
  try {
    stepper.step(u, {}, 17);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where() == 17);
  }
}
