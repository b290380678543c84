#include "cnls/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cnls {

std::string to_string(Scheme scheme) { return scheme == Scheme::kStrang ? "strang" : "lie"; }

Scheme scheme_from_string(const std::string& name) {
  if (name == "strang") return Scheme::kStrang;
  if (name == "lie") return Scheme::kLie;
  throw std::invalid_argument("unknown scheme '" + name + "' (expected strang or lie)");
}

void SolverConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::domain_error("solver.dt must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::domain_error("solver.alpha must be nonnegative");
  if (snapshot_stride == 0) throw std::domain_error("solver.snapshot_stride must be positive");
}

std::size_t steps_for(double t_final, double dt) {
  if (!(t_final >= 0.0)) throw std::domain_error("final time must be nonnegative");
  const double ratio = t_final / dt;
  const double k = std::round(ratio);
  if (std::abs(ratio - k) > 1e-9 * std::max(1.0, ratio)) {
    throw std::domain_error("final time " + std::to_string(t_final) + " is not a multiple of dt " +
                            std::to_string(dt));
  }
  return static_cast<std::size_t>(k);
}

Stepper::Stepper(SpectralSpace space, SolverConfig cfg)
    : space_(std::move(space)),
      cfg_(cfg),
      half_factors_(space_.n_modes()),
      full_factors_(space_.n_modes()),
      pad_(space_.n_quad()),
      grid_(space_.n_quad()) {
  cfg_.validate();
  const auto mu = space_.eigenvalues();
  for (std::size_t k = 0; k < space_.n_modes(); ++k) {
    const Complex rate(cfg_.alpha, mu[k]);
    half_factors_[k] = std::exp(-rate * (0.5 * cfg_.dt));
    full_factors_[k] = std::exp(-rate * cfg_.dt);
  }
}

void Stepper::linear(std::span<Complex> u, const CVector& factors) const {
  for (std::size_t k = 0; k < u.size(); ++k) u[k] *= factors[k];
}

void Stepper::nonlinear(std::span<Complex> u, double tau) {
  const std::size_t m = space_.n_modes();
  std::copy(u.begin(), u.end(), pad_.begin());
  std::fill(pad_.begin() + static_cast<std::ptrdiff_t>(m), pad_.end(), Complex{});
  space_.raw_dst(pad_, grid_);
  // Grid values are grid_ / sqrt(2); the rotation angle uses |value|^2.
  for (auto& g : grid_) {
    const double phase = 0.5 * std::norm(g) * tau;
    g *= Complex(std::cos(phase), std::sin(phase));
  }
  space_.raw_dst(grid_, pad_);
  // to_grid scale (1/sqrt 2) times from_grid scale (w/sqrt 2).
  const double scale = 0.5 * space_.weight();
  for (std::size_t k = 0; k < m; ++k) u[k] = scale * pad_[k];
}

void Stepper::propagate(std::span<Complex> u) {
  if (u.size() != space_.n_modes()) throw std::invalid_argument("Stepper: state size mismatch");
  if (!cfg_.nonlinear) {
    linear(u, full_factors_);
    return;
  }
  if (cfg_.scheme == Scheme::kStrang) {
    linear(u, half_factors_);
    nonlinear(u, cfg_.dt);
    linear(u, half_factors_);
  } else {
    linear(u, full_factors_);
    nonlinear(u, cfg_.dt);
  }
}

void Stepper::step(std::span<Complex> u, std::span<const Complex> forcing, std::ptrdiff_t step_index) {
  propagate(u);
  if (!forcing.empty()) {
    if (forcing.size() > u.size()) throw std::invalid_argument("Stepper: forcing longer than state");
    for (std::size_t k = 0; k < forcing.size(); ++k) u[k] += forcing[k];
  }
  for (const auto& c : u) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
      throw NumericError("non-finite state after step " + std::to_string(step_index), step_index);
    }
  }
}

SpectralField step(const SpectralField& u, const SolverConfig& cfg, std::span<const Complex> dWb,
                   std::span<const Complex> h) {
  Stepper stepper(u.space(), cfg);
  SpectralField out = u;
  CVector forcing(u.space().n_modes(), Complex{});
  if (!dWb.empty()) {
    if (dWb.size() != forcing.size()) throw std::invalid_argument("step: noise increment size mismatch");
    std::copy(dWb.begin(), dWb.end(), forcing.begin());
  }
  for (std::size_t k = 0; k < h.size(); ++k) forcing.at(k) += h[k] * cfg.dt;
  stepper.step(out.coeffs(), forcing, 0);
  return out;
}

void evolve(Stepper& stepper, const NoiseGenerator& gen, std::span<Complex> u, std::uint64_t first_step,
            std::size_t n_steps, const std::function<void(std::size_t, std::span<const Complex>)>& observer) {
  CVector forcing(u.size());
  for (std::size_t s = 0; s < n_steps; ++s) {
    gen.forcing(first_step + s, forcing);
    stepper.step(u, forcing, static_cast<std::ptrdiff_t>(first_step + s));
    if (observer) observer(s + 1, u);
  }
}

namespace {

void record(Trajectory& traj, double t, std::span<const Complex> u) {
  traj.times.push_back(t);
  traj.states.emplace_back(u.begin(), u.end());
}

bool snapshot_due(std::size_t s, std::size_t n_steps, std::size_t stride) {
  return s % stride == 0 || s == n_steps;
}

}  // namespace

Trajectory simulate(const SpectralField& u0, double t_final, const SolverConfig& cfg, const NoiseSpec& nspec,
                    std::shared_ptr<const NoisePath> noise, const DriftSchedule& h) {
  cfg.validate();
  if (!u0.is_finite()) throw NumericError("simulate: initial state is not finite", 0);
  const std::size_t n_steps = steps_for(t_final, cfg.dt);
  const std::size_t m = u0.space().n_modes();
  if (nspec.n_modes() != m) throw std::invalid_argument("simulate: noise coefficients have the wrong number of modes");
  if (!noise) throw std::invalid_argument("simulate: noise path required");
  if (noise->steps() < n_steps) throw std::invalid_argument("simulate: noise path too short");
  if (std::abs(noise->dt - cfg.dt) > 1e-15 * cfg.dt) throw std::invalid_argument("simulate: noise dt mismatch");

  Trajectory traj{u0.space(), cfg, {}, {}, noise, {}};
  Stepper stepper(u0.space(), cfg);
  CVector u = u0.vector();
  CVector forcing(m);
  record(traj, 0.0, u);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const auto& dw = noise->increments[s];
    for (std::size_t k = 0; k < m; ++k) forcing[k] = nspec.b[k] * dw[k];
    if (h) {
      CVector drift = h(s, static_cast<double>(s) * cfg.dt, u);
      if (drift.size() > m) throw std::invalid_argument("simulate: drift longer than state");
      for (std::size_t k = nspec.n_star; k < drift.size(); ++k) {
        if (drift[k] != Complex{}) {
          throw std::domain_error("simulate: drift must be supported on modes <= n_star");
        }
      }
      for (std::size_t k = 0; k < drift.size(); ++k) forcing[k] += drift[k] * cfg.dt;
      traj.drift_log.push_back(std::move(drift));
    }
    stepper.step(u, forcing, static_cast<std::ptrdiff_t>(s));
    if (snapshot_due(s + 1, n_steps, cfg.snapshot_stride)) {
      record(traj, static_cast<double>(s + 1) * cfg.dt, u);
    }
  }
  return traj;
}

std::pair<Trajectory, Trajectory> simulate_synchronized(const SpectralField& u0_1, const SpectralField& u0_2,
                                                        std::size_t cutoff, double t_final,
                                                        const SolverConfig& cfg, const NoiseSpec& nspec,
                                                        std::shared_ptr<const NoisePath> noise) {
  cfg.validate();
  if (!(u0_1.space() == u0_2.space())) throw std::invalid_argument("simulate_synchronized: space mismatch");
  const std::size_t m = u0_1.space().n_modes();
  if (cutoff > m) throw std::domain_error("simulate_synchronized: cutoff exceeds n_modes");
  const std::size_t n_steps = steps_for(t_final, cfg.dt);
  if (!noise || noise->steps() < n_steps) throw std::invalid_argument("simulate_synchronized: noise path too short");
  if (nspec.n_modes() != m) throw std::invalid_argument("simulate_synchronized: noise coefficients have the wrong number of modes");

  Trajectory t1{u0_1.space(), cfg, {}, {}, noise, {}};
  Trajectory t2{u0_1.space(), cfg, {}, {}, noise, {}};
  Stepper s1(u0_1.space(), cfg);
  Stepper s2(u0_1.space(), cfg);
  CVector u1 = u0_1.vector();
  CVector u2 = u0_2.vector();
  std::copy_n(u1.begin(), cutoff, u2.begin());
  CVector forcing(m);
  record(t1, 0.0, u1);
  record(t2, 0.0, u2);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const auto& dw = noise->increments[s];
    for (std::size_t k = 0; k < m; ++k) forcing[k] = nspec.b[k] * dw[k];
    s1.step(u1, forcing, static_cast<std::ptrdiff_t>(s));
    s2.step(u2, forcing, static_cast<std::ptrdiff_t>(s));
    std::copy_n(u1.begin(), cutoff, u2.begin());
    if (snapshot_due(s + 1, n_steps, cfg.snapshot_stride)) {
      const double t = static_cast<double>(s + 1) * cfg.dt;
      record(t1, t, u1);
      record(t2, t, u2);
    }
  }
  return {std::move(t1), std::move(t2)};
}

}  // namespace cnls
