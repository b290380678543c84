#pragma once

// Distances between two ensembles of observable vectors.  For each scalar
// observable the transport cost of the truncated metric min(|x - y|, 1) is
// evaluated on the monotone (quantile) matching of the two empirical
// measures.  The max over observables is what the mixing experiment reports.

#include <cstdint>
#include <span>
#include <vector>

namespace cnls {

/// Monotone-matching transport cost of min(|x - y|, 1) between two empirical
/// measures.  Equals the exact 1-Wasserstein distance whenever no matched pair
/// is more than 1 apart.  Throws std::domain_error on empty input.
double wasserstein_capped_1d(std::span<const double> a, std::span<const double> b);

struct WassersteinEstimate {
  std::vector<double> per_observable;
  double max = 0.0;
  std::size_t argmax = 0;
};

/// samples[i][j] is observable j of sample i.  All rows must have equal length.
WassersteinEstimate wasserstein_bl(const std::vector<std::vector<double>>& samples1,
                                   const std::vector<std::vector<double>>& samples2);

/// Bootstrap standard error of the max over observables.  Ensembles are
/// resampled independently, or as pairs (i, i) when `paired` is set.
double wasserstein_bl_stderr(const std::vector<std::vector<double>>& samples1,
                             const std::vector<std::vector<double>>& samples2, std::size_t resamples,
                             std::uint64_t seed, bool paired = false);

}  // namespace cnls
