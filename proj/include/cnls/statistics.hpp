#pragma once

// Small statistics toolkit for the Monte Carlo verdicts: sample moments,
// two-sample Kolmogorov-Smirnov, chi-squared goodness of fit, least squares
// on log scales and bootstrap standard errors.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace cnls {

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Sample mean and standard error of the mean (n - 1 in the variance).
MeanStderr mean_stderr(std::span<const double> x);

struct KsResult {
  double statistic = 0.0;  // sup |F1 - F2|
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov with the asymptotic Kolmogorov law at the
/// effective size n1 n2 / (n1 + n2) (Stephens' small-sample correction).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_survival(double lambda);

struct ChiSquareResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Pearson goodness of fit of `counts` against probabilities `p`.  Cells with
/// zero probability must have zero counts (else p = 0).
ChiSquareResult chi_square_gof(std::span<const std::uint64_t> counts, std::span<const double> p);

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_stderr = 0.0;  // classical OLS standard error
};

/// Ordinary least squares y = intercept + slope x.
LineFit least_squares(std::span<const double> x, std::span<const double> y);

/// Bootstrap standard error of a statistic over resamples of `n` indices.
/// `statistic` receives the resampled index multiset.  Deterministic in seed.
double bootstrap_stderr(std::size_t n, std::size_t resamples, std::uint64_t seed,
                        const std::function<double(std::span<const std::size_t>)>& statistic);

/// Quantile with linear interpolation (q in [0, 1]) of an unsorted sample.
double quantile(std::vector<double> x, double q);

}  // namespace cnls
