#pragma once

// Scalar functionals of the state and of coupled pairs:
//
//   H_*(v) = 1/2 ||v||^2 - 1/4 |v|_4^4            (conserved when alpha = 0, b = 0)
//   H(v)   = H_*(v) + c0 |v|^6                    (coercive Lyapunov functional)
//   E_{u,k}(t,s) = H(u(t))^k + alpha k int_s^t H(u)^k
//   J_*(u1,u2,r) = 1/2 ||r||^2 - 1/4 int (|u1|^2 + |u2|^2)|r|^2 + (Re (u1 + u2) conj r)^2
//   J = J_* + c1 (H(u1) + H(u2)) |r|^2
//   l(u1,u2) = 1 + H(u1)^4 + H(u2)^4
//   J_FP^N(t) = J(t) exp(2 alpha t - Lambda mu_{N+1}^{-1/8} int_0^t l)
//
// ||.|| is the H^1_0 norm, |.| the L2 norm and |.|_p the L^p norm.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnls/integrator.hpp"
#include "cnls/spectral.hpp"

namespace cnls {

struct FunctionalConstants {
  double c0 = 0.0;
  double c1 = 0.0;
  double Lambda = 0.0;
};

/// Quadratic, quartic and sextic ingredients of H for one field.
struct FieldNorms {
  double mass = 0.0;     // |v|^2
  double gradient = 0.0; // ||v||^2
  double quartic = 0.0;  // |v|_4^4

  double hamiltonian_star() const noexcept { return 0.5 * gradient - 0.25 * quartic; }
  double hamiltonian(double c0) const noexcept { return hamiltonian_star() + c0 * mass * mass * mass; }
};

/// Workspace-holding evaluator; one per thread.
class FieldEvaluator {
 public:
  explicit FieldEvaluator(SpectralSpace space);

  const SpectralSpace& space() const noexcept { return space_; }

  FieldNorms norms(std::span<const Complex> v);
  double hamiltonian_star(std::span<const Complex> v) { return norms(v).hamiltonian_star(); }
  double hamiltonian(std::span<const Complex> v, const FunctionalConstants& c) { return norms(v).hamiltonian(c.c0); }

  /// (J_*, J).  H1 and H2 are the modified Hamiltonians of u1 and u2.
  std::pair<double, double> coupling_J(std::span<const Complex> u1, std::span<const Complex> u2,
                                       std::span<const Complex> r, double H1, double H2,
                                       const FunctionalConstants& c);
  /// The integral subtracted in J_*, without the factor 1/4.
  double coupling_quartic(std::span<const Complex> u1, std::span<const Complex> u2, std::span<const Complex> r);

 private:
  void grid_values(std::span<const Complex> v, CVector& out);

  SpectralSpace space_;
  CVector pad_;
  CVector g1_, g2_, g3_;
};

double hamiltonian_star(const SpectralField& v);
double hamiltonian(const SpectralField& v, const FunctionalConstants& c);
std::pair<double, double> coupling_J(const SpectralField& u1, const SpectralField& u2, const SpectralField& r,
                                     const FunctionalConstants& c);

inline double l_weight(double H1, double H2) noexcept {
  const double a = H1 * H1, b = H2 * H2;
  return 1.0 + a * a + b * b;
}
double l_weight(const SpectralField& u1, const SpectralField& u2, const FunctionalConstants& c);

/// Gagliardo-Nirenberg ratio (|v|_4^4 - 1/4 ||v||^2) / (1/2 |v|^6).
double gn_ratio(const FieldNorms& n);
/// Supremum of gn_ratio over the ray {lambda v, lambda > 0}: 2 F^2 / (K m^3)
/// with F = |v|_4^4, K = ||v||^2, m = |v|^2.
double gn_ratio_ray_max(const FieldNorms& n);

struct C0Calibration {
  double c0 = 0.0;
  double max_ratio = 0.0;
  std::size_t corpus_size = 0;
  std::string argmax;  // corpus family attaining the maximum
};

/// Maximizes the GN ratio over a corpus of random fields (several spectral
/// decays, complex phases), single modes, mode pairs and projected
/// sech(lambda (x - 1/2)) profiles, each optimized exactly along its amplitude
/// ray.  Returns 1.1 times the maximum.
C0Calibration calibrate_c0(const SpectralSpace& space, std::size_t corpus_size, std::uint64_t seed);

struct C1Calibration {
  double c1 = 0.0;
  double max_ratio = 0.0;
  std::size_t corpus_size = 0;
  std::size_t positive = 0;  // pairs where the quartic term can beat 1/4 ||r||^2
};

/// For each corpus pair (u1, u2) the worst r is found exactly as the top
/// eigenvector of 1/4 (W - A) on the retained band, where W is the quadratic
/// form of the quartic integral in J_*.  The ratio is
/// lambda_max / (H(u1) + H(u2)); c1 is 1.1 times its maximum (positive part).
C1Calibration calibrate_c1(const SpectralSpace& space, double c0, std::size_t corpus_size, std::uint64_t seed);

/// Largest eigenvalue of 1/4 (W(u1,u2) - A) over complex r in the band,
/// i.e. sup_r (1/4 int(...) - 1/4 ||r||^2) / |r|^2.
double coupling_form_max(const SpectralSpace& space, std::span<const Complex> u1, std::span<const Complex> u2);

/// Smallest s > 0 with H(s v) = target (H(s v) is increasing in s once c0 > 0
/// is calibrated).  Throws std::domain_error if v = 0 and target > 0.
SpectralField scale_to_hamiltonian(const SpectralField& v, double target, const FunctionalConstants& c);

/// Running E_{u,k}: trapezoidal integral of H^k over the samples added so far.
class EnergyAccumulator {
 public:
  EnergyAccumulator(int k, double alpha) : k_(k), alpha_(alpha) {}

  void add(double t, double H);
  /// H(u(t_last))^k + alpha k int H^k.
  double value() const noexcept;
  double integral() const noexcept { return integral_; }
  double last_power() const noexcept { return last_power_; }
  bool empty() const noexcept { return !started_; }
  void reset() noexcept { started_ = false; integral_ = 0.0; }

 private:
  int k_;
  double alpha_;
  bool started_ = false;
  double last_t_ = 0.0;
  double last_power_ = 0.0;
  double integral_ = 0.0;
};

/// E_{u,k}(t,s) along a stored trajectory; t and s must be snapshot times.
double energy_E(const Trajectory& traj, int k, double t, double s, const FunctionalConstants& c);

/// J_FP^N at every snapshot of a synchronized pair (trapezoidal int l).
std::vector<double> foias_prodi_series(const Trajectory& t1, const Trajectory& t2, std::size_t N,
                                       const FunctionalConstants& c);

/// Per-path ingredients of J_FP^N sampled on a common time grid.
struct FoiasProdiPath {
  std::vector<double> J;         // J(u1(t), u2(t), r(t))
  std::vector<double> l_integral; // int_0^t l
};

/// J_FP for one path given Lambda (alpha, N fixed).
std::vector<double> foias_prodi_from_parts(const FoiasProdiPath& path, std::span<const double> times, double alpha,
                                           std::size_t N, double Lambda);

/// Smallest Lambda for which the ensemble mean of J_FP^N stays below the mean
/// of J(0) at every sample time (bisection; the mean is decreasing in Lambda).
double fit_lambda(std::span<const FoiasProdiPath> paths, std::span<const double> times, double alpha,
                  std::size_t N);

}  // namespace cnls
