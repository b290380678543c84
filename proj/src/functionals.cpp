#include "cnls/functionals.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cnls/random.hpp"

namespace cnls {

FieldEvaluator::FieldEvaluator(SpectralSpace space)
    : space_(std::move(space)),
      pad_(space_.n_quad()),
      g1_(space_.n_quad()),
      g2_(space_.n_quad()),
      g3_(space_.n_quad()) {}

// Raw transform values; the true grid values are these divided by sqrt 2.
void FieldEvaluator::grid_values(std::span<const Complex> v, CVector& out) {
  if (v.size() != space_.n_modes()) throw std::invalid_argument("FieldEvaluator: size mismatch");
  std::copy(v.begin(), v.end(), pad_.begin());
  std::fill(pad_.begin() + static_cast<std::ptrdiff_t>(v.size()), pad_.end(), Complex{});
  space_.raw_dst(pad_, out);
}

FieldNorms FieldEvaluator::norms(std::span<const Complex> v) {
  grid_values(v, g1_);
  double q = 0.0;
  for (const auto& g : g1_) {
    const double a = std::norm(g);
    q += a * a;
  }
  if (!std::isfinite(q)) throw NumericError("hamiltonian: non-finite quartic integral");
  FieldNorms n;
  n.mass = sobolev_norm_squared(space_, v, 0.0);
  n.gradient = sobolev_norm_squared(space_, v, 1.0);
  n.quartic = 0.25 * space_.weight() * q;  // (|g|^2 / 2)^2
  return n;
}

double FieldEvaluator::coupling_quartic(std::span<const Complex> u1, std::span<const Complex> u2,
                                        std::span<const Complex> r) {
  grid_values(u1, g1_);
  grid_values(u2, g2_);
  grid_values(r, g3_);
  double sum = 0.0;
  for (std::size_t j = 0; j < g1_.size(); ++j) {
    const double rr = std::norm(g3_[j]);
    const double re = ((g1_[j] + g2_[j]) * std::conj(g3_[j])).real();
    sum += (std::norm(g1_[j]) + std::norm(g2_[j])) * rr + re * re;
  }
  return 0.25 * space_.weight() * sum;
}

std::pair<double, double> FieldEvaluator::coupling_J(std::span<const Complex> u1, std::span<const Complex> u2,
                                                     std::span<const Complex> r, double H1, double H2,
                                                     const FunctionalConstants& c) {
  const double j_star = 0.5 * sobolev_norm_squared(space_, r, 1.0) - 0.25 * coupling_quartic(u1, u2, r);
  const double j = j_star + c.c1 * (H1 + H2) * sobolev_norm_squared(space_, r, 0.0);
  return {j_star, j};
}

double hamiltonian_star(const SpectralField& v) {
  if (!v.is_finite()) throw NumericError("hamiltonian_star: non-finite field");
  return FieldEvaluator(v.space()).hamiltonian_star(v.coeffs());
}

double hamiltonian(const SpectralField& v, const FunctionalConstants& c) {
  if (!v.is_finite()) throw NumericError("hamiltonian: non-finite field");
  return FieldEvaluator(v.space()).hamiltonian(v.coeffs(), c);
}

std::pair<double, double> coupling_J(const SpectralField& u1, const SpectralField& u2, const SpectralField& r,
                                     const FunctionalConstants& c) {
  if (!(u1.space() == u2.space()) || !(u1.space() == r.space())) {
    throw std::invalid_argument("coupling_J: fields live in different spaces");
  }
  FieldEvaluator ev(u1.space());
  const double H1 = ev.hamiltonian(u1.coeffs(), c);
  const double H2 = ev.hamiltonian(u2.coeffs(), c);
  return ev.coupling_J(u1.coeffs(), u2.coeffs(), r.coeffs(), H1, H2, c);
}

double l_weight(const SpectralField& u1, const SpectralField& u2, const FunctionalConstants& c) {
  return l_weight(hamiltonian(u1, c), hamiltonian(u2, c));
}

double gn_ratio(const FieldNorms& n) {
  if (!(n.mass > 0.0)) throw std::domain_error("gn_ratio: zero field");
  return (n.quartic - 0.25 * n.gradient) / (0.5 * n.mass * n.mass * n.mass);
}

double gn_ratio_ray_max(const FieldNorms& n) {
  if (!(n.mass > 0.0)) throw std::domain_error("gn_ratio_ray_max: zero field");
  return 2.0 * n.quartic * n.quartic / (n.gradient * n.mass * n.mass * n.mass);
}

namespace {

CVector random_coefficients(std::size_t m, double decay, SequentialRng& rng) {
  CVector c(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double s = std::pow(static_cast<double>(k + 1), -decay);
    const double x = rng.normal();
    const double y = rng.normal();
    c[k] = s * Complex(x, y);
  }
  return c;
}

CVector sech_profile(const SpectralSpace& space, double lambda, double center, double wavenumber) {
  CVector values(space.n_quad());
  for (std::size_t j = 0; j < values.size(); ++j) {
    const double x = space.grid_point(j);
    values[j] = std::polar(1.0 / std::cosh(lambda * (x - center)), wavenumber * x);
  }
  CVector c(space.n_modes());
  space.from_grid(values, c);
  return c;
}

}  // namespace

C0Calibration calibrate_c0(const SpectralSpace& space, std::size_t corpus_size, std::uint64_t seed) {
  if (corpus_size == 0) throw std::domain_error("calibrate_c0: empty corpus");
  SequentialRng rng(StreamId{seed, static_cast<std::uint64_t>(Lane::kCalibration), 0});
  FieldEvaluator ev(space);
  const std::size_t m = space.n_modes();
  C0Calibration out;

  auto consider = [&](const CVector& v, const char* family) {
    const FieldNorms n = ev.norms(v);
    if (!(n.mass > 0.0)) return;
    const double r = gn_ratio_ray_max(n);
    if (!std::isfinite(r)) throw NumericError(std::string("calibrate_c0: non-finite ratio in ") + family);
    if (out.corpus_size == 0 || r > out.max_ratio) {
      out.max_ratio = r;
      out.argmax = family;
    }
    ++out.corpus_size;
  };

  // Deterministic families first: single modes, then pairs of low modes.
  for (std::size_t k = 1; k <= std::min<std::size_t>(m, 8) && out.corpus_size < corpus_size; ++k) {
    consider(SpectralField::mode(space, k, 1.0).vector(), "single mode");
  }
  static constexpr double kDecays[] = {0.5, 1.0, 1.5, 2.0, 3.0};
  std::size_t i = 0;
  while (out.corpus_size < corpus_size) {
    switch (i++ % 3) {
      case 0: {
        const double decay = kDecays[rng() % std::size(kDecays)];
        consider(random_coefficients(m, decay, rng), "random field");
        break;
      }
      case 1: {
        // Width from broad to a few grid cells of the retained band.
        const double lambda = std::exp(std::log(1.0) + rng.uniform() * std::log(0.5 * static_cast<double>(m)));
        const double center = 0.3 + 0.4 * rng.uniform();
        const double wavenumber = (rng.uniform() < 0.5) ? 0.0 : 10.0 * rng.normal();
        consider(sech_profile(space, lambda, center, wavenumber), "sech profile");
        break;
      }
      default: {
        CVector v(m, Complex{});
        const std::size_t a = rng() % std::min<std::size_t>(m, 6);
        const std::size_t b = rng() % std::min<std::size_t>(m, 6);
        v[a] += Complex(rng.normal(), rng.normal());
        v[b] += Complex(rng.normal(), rng.normal());
        consider(v, "mode pair");
        break;
      }
    }
  }
  out.c0 = 1.1 * std::max(out.max_ratio, 0.0);
  if (!(out.c0 > 0.0)) throw std::runtime_error("calibrate_c0: corpus produced no positive ratio");
  return out;
}

double coupling_form_max(const SpectralSpace& space, std::span<const Complex> u1, std::span<const Complex> u2) {
  const std::size_t m = space.n_modes(), q = space.n_quad();
  CVector g1(q), g2(q);
  space.to_grid(u1, g1);
  space.to_grid(u2, g2);
  // Basis values e_k(x_j) scaled by sqrt(weight) so that E^T diag(w) E is the Gram form.
  Eigen::MatrixXd E(q, m);
  const double sw = std::sqrt(space.weight());
  for (std::size_t j = 0; j < q; ++j) {
    const double x = space.grid_point(j);
    for (std::size_t k = 0; k < m; ++k) {
      E(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          sw * std::numbers::sqrt2 * std::sin(static_cast<double>(k + 1) * std::numbers::pi * x);
    }
  }
  Eigen::VectorXd wxx(q), wxy(q), wyy(q);
  for (std::size_t j = 0; j < q; ++j) {
    const double a = std::norm(g1[j]) + std::norm(g2[j]);
    const Complex s = g1[j] + g2[j];
    const auto jj = static_cast<Eigen::Index>(j);
    wxx(jj) = a + s.real() * s.real();
    wxy(jj) = s.real() * s.imag();
    wyy(jj) = a + s.imag() * s.imag();
  }
  const auto mm = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd form(2 * mm, 2 * mm);
  form.topLeftCorner(mm, mm) = E.transpose() * wxx.asDiagonal() * E;
  form.topRightCorner(mm, mm) = E.transpose() * wxy.asDiagonal() * E;
  form.bottomLeftCorner(mm, mm) = form.topRightCorner(mm, mm).transpose();
  form.bottomRightCorner(mm, mm) = E.transpose() * wyy.asDiagonal() * E;
  const auto mu = space.eigenvalues();
  for (Eigen::Index k = 0; k < mm; ++k) {
    form(k, k) -= mu[static_cast<std::size_t>(k)];
    form(k + mm, k + mm) -= mu[static_cast<std::size_t>(k)];
  }
  form *= 0.25;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(form, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("coupling_form_max: eigensolver failed");
  return solver.eigenvalues().maxCoeff();
}

C1Calibration calibrate_c1(const SpectralSpace& space, double c0, std::size_t corpus_size, std::uint64_t seed) {
  if (corpus_size == 0) throw std::domain_error("calibrate_c1: empty corpus");
  if (!(c0 > 0.0)) throw std::domain_error("calibrate_c1: c0 must be calibrated first");
  SequentialRng rng(StreamId{seed, static_cast<std::uint64_t>(Lane::kCalibration), 1});
  FieldEvaluator ev(space);
  const std::size_t m = space.n_modes();
  const FunctionalConstants consts{c0, 0.0, 0.0};
  C1Calibration out;
  static constexpr double kDecays[] = {0.5, 1.0, 1.5, 2.0};
  // Amplitude scan per shape pair: the ratio vanishes for small and large
  // fields, so a log grid around unit L2 norm brackets the maximum.
  static constexpr int kScan = 12;
  while (out.corpus_size < corpus_size) {
    CVector v1, v2;
    if (rng.uniform() < 0.5) {
      v1 = random_coefficients(m, kDecays[rng() % std::size(kDecays)], rng);
      v2 = random_coefficients(m, kDecays[rng() % std::size(kDecays)], rng);
    } else {
      const double lambda = std::exp(rng.uniform() * std::log(0.5 * static_cast<double>(m)));
      const double center = 0.3 + 0.4 * rng.uniform();
      v1 = sech_profile(space, lambda, center, 0.0);
      v2 = (rng.uniform() < 0.5) ? v1 : random_coefficients(m, 1.5, rng);
    }
    const double n1 = std::sqrt(sobolev_norm_squared(space, v1, 0.0));
    const double n2 = std::sqrt(sobolev_norm_squared(space, v2, 0.0));
    const double ratio12 = std::exp(rng.uniform() * std::log(4.0)) / 2.0;
    for (int a = 0; a < kScan && out.corpus_size < corpus_size; ++a) {
      const double amp = std::pow(10.0, -1.5 + 2.5 * a / (kScan - 1));  // 0.03 .. 10 in L2 norm
      CVector u1 = v1, u2 = v2;
      for (auto& z : u1) z *= amp / n1;
      for (auto& z : u2) z *= amp * ratio12 / n2;
      const double lam = coupling_form_max(space, u1, u2);
      ++out.corpus_size;
      if (lam <= 0.0) continue;
      ++out.positive;
      const double h = ev.hamiltonian(u1, consts) + ev.hamiltonian(u2, consts);
      out.max_ratio = std::max(out.max_ratio, lam / h);
    }
  }
  // If no pair can make J_* fall below 1/4 ||r||^2 any c1 > 0 works; keep a
  // small positive value so that J retains its H-weighted term.
  out.c1 = out.positive > 0 ? 1.1 * out.max_ratio : 1e-3;
  return out;
}

SpectralField scale_to_hamiltonian(const SpectralField& v, double target, const FunctionalConstants& c) {
  if (!(target >= 0.0)) throw std::domain_error("scale_to_hamiltonian: target must be nonnegative");
  if (target == 0.0) return SpectralField(v.space());
  FieldEvaluator ev(v.space());
  const FieldNorms n = ev.norms(v.coeffs());
  if (!(n.mass > 0.0)) throw std::domain_error("scale_to_hamiltonian: cannot scale the zero field");
  auto H = [&](double s) {
    const double s2 = s * s;
    return s2 * 0.5 * n.gradient - s2 * s2 * 0.25 * n.quartic + c.c0 * std::pow(s2 * n.mass, 3);
  };
  double lo = 0.0, hi = 1.0;
  while (H(hi) < target) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e100) throw std::domain_error("scale_to_hamiltonian: target not reachable");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (H(mid) < target ? lo : hi) = mid;
  }
  SpectralField out = v;
  out *= 0.5 * (lo + hi);
  return out;
}

void EnergyAccumulator::add(double t, double H) {
  const double p = std::pow(H, k_);
  if (started_) {
    if (t < last_t_) throw std::domain_error("EnergyAccumulator: time went backwards");
    integral_ += 0.5 * (p + last_power_) * (t - last_t_);
  }
  started_ = true;
  last_t_ = t;
  last_power_ = p;
}

double EnergyAccumulator::value() const noexcept { return last_power_ + alpha_ * k_ * integral_; }

namespace {

std::size_t snapshot_index(const Trajectory& traj, double t) {
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    if (std::abs(traj.times[i] - t) <= tol) return i;
  }
  throw std::domain_error("energy_E: time " + std::to_string(t) + " is not a snapshot time of the trajectory");
}

}  // namespace

double energy_E(const Trajectory& traj, int k, double t, double s, const FunctionalConstants& c) {
  if (k < 1) throw std::domain_error("energy_E: k must be >= 1");
  if (s > t) throw std::domain_error("energy_E: s must not exceed t");
  const std::size_t i0 = snapshot_index(traj, s), i1 = snapshot_index(traj, t);
  FieldEvaluator ev(traj.space);
  EnergyAccumulator acc(k, traj.cfg.alpha);
  for (std::size_t i = i0; i <= i1; ++i) acc.add(traj.times[i], ev.hamiltonian(traj.states[i], c));
  return acc.value();
}

std::vector<double> foias_prodi_from_parts(const FoiasProdiPath& path, std::span<const double> times, double alpha,
                                           std::size_t N, double Lambda) {
  if (path.J.size() != times.size() || path.l_integral.size() != times.size()) {
    throw std::domain_error("foias_prodi: series lengths differ");
  }
  const double rate = Lambda / std::pow(eigenvalue(N + 1), 0.125);
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    out[i] = path.J[i] * std::exp(2.0 * alpha * times[i] - rate * path.l_integral[i]);
  }
  return out;
}

std::vector<double> foias_prodi_series(const Trajectory& t1, const Trajectory& t2, std::size_t N,
                                       const FunctionalConstants& c) {
  if (!(t1.space == t2.space) || t1.times != t2.times) {
    throw std::domain_error("foias_prodi_series: trajectories are not a synchronized pair");
  }
  if (N >= t1.space.n_modes()) throw std::domain_error("foias_prodi_series: N must be below n_modes");
  FieldEvaluator ev(t1.space);
  FoiasProdiPath path;
  CVector r(t1.space.n_modes());
  double prev_l = 0.0, integral = 0.0;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    const auto& a = t1.states[i];
    const auto& b = t2.states[i];
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = a[k] - b[k];
    const double H1 = ev.hamiltonian(a, c), H2 = ev.hamiltonian(b, c);
    const double l = l_weight(H1, H2);
    if (i > 0) integral += 0.5 * (l + prev_l) * (t1.times[i] - t1.times[i - 1]);
    prev_l = l;
    path.J.push_back(ev.coupling_J(a, b, r, H1, H2, c).second);
    path.l_integral.push_back(integral);
  }
  return foias_prodi_from_parts(path, t1.times, t1.cfg.alpha, N, c.Lambda);
}

double fit_lambda(std::span<const FoiasProdiPath> paths, std::span<const double> times, double alpha,
                  std::size_t N) {
  if (paths.empty()) throw std::domain_error("fit_lambda: no paths");
  double target = 0.0;
  for (const auto& p : paths) target += p.J.at(0);
  target /= static_cast<double>(paths.size());
  auto excess = [&](double Lambda) {
    std::vector<double> mean(times.size(), 0.0);
    for (const auto& p : paths) {
      const auto s = foias_prodi_from_parts(p, times, alpha, N, Lambda);
      for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i];
    }
    double worst = -INFINITY;
    for (std::size_t i = 1; i < mean.size(); ++i) worst = std::max(worst, mean[i] / paths.size() - target);
    return worst;
  };
  if (excess(0.0) <= 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (excess(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw std::runtime_error("fit_lambda: no admissible Lambda found");
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0.0 ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace cnls
