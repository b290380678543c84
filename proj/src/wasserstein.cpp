#include "cnls/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cnls/random.hpp"
#include "cnls/statistics.hpp"

namespace cnls {

namespace {

double sorted_cost(const std::vector<double>& x, const std::vector<double>& y) {
  // Integrate |F^-1(s) - G^-1(s)| ^ 1 over s in (0, 1) across the merged breakpoints.
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double s = 0.0, cost = 0.0;
  while (i < x.size() && j < y.size()) {
    const double next = std::min(static_cast<double>(i + 1) / nx, static_cast<double>(j + 1) / ny);
    cost += (next - s) * std::min(std::abs(x[i] - y[j]), 1.0);
    s = next;
    if (static_cast<double>(i + 1) / nx <= next) ++i;
    if (static_cast<double>(j + 1) / ny <= next) ++j;
  }
  return cost;
}

std::vector<double> column(const std::vector<std::vector<double>>& rows, std::size_t j,
                           std::span<const std::size_t> idx = {}) {
  std::vector<double> c;
  if (idx.empty()) {
    c.reserve(rows.size());
    for (const auto& r : rows) c.push_back(r[j]);
  } else {
    c.reserve(idx.size());
    for (auto i : idx) c.push_back(rows[i][j]);
  }
  std::sort(c.begin(), c.end());
  return c;
}

std::size_t check_rows(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw std::domain_error("wasserstein_bl: empty ensemble");
  const std::size_t d = a.front().size();
  if (d == 0) throw std::domain_error("wasserstein_bl: no observables");
  for (const auto& r : a) if (r.size() != d) throw std::domain_error("wasserstein_bl: ragged samples");
  for (const auto& r : b) if (r.size() != d) throw std::domain_error("wasserstein_bl: ragged samples");
  return d;
}

}  // namespace

double wasserstein_capped_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::domain_error("wasserstein_capped_1d: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return sorted_cost(x, y);
}

WassersteinEstimate wasserstein_bl(const std::vector<std::vector<double>>& samples1,
                                   const std::vector<std::vector<double>>& samples2) {
  const std::size_t d = check_rows(samples1, samples2);
  WassersteinEstimate w;
  for (std::size_t j = 0; j < d; ++j) {
    w.per_observable.push_back(sorted_cost(column(samples1, j), column(samples2, j)));
    if (w.per_observable.back() > w.max) {
      w.max = w.per_observable.back();
      w.argmax = j;
    }
  }
  return w;
}

double wasserstein_bl_stderr(const std::vector<std::vector<double>>& samples1,
                             const std::vector<std::vector<double>>& samples2, std::size_t resamples,
                             std::uint64_t seed, bool paired) {
  const std::size_t d = check_rows(samples1, samples2);
  if (paired && samples1.size() != samples2.size()) throw std::domain_error("paired bootstrap needs equal sizes");
  SequentialRng rng(StreamId{seed, static_cast<std::uint64_t>(Lane::kBootstrap), 1});
  std::vector<std::size_t> i1(samples1.size()), i2(samples2.size());
  std::vector<double> values;
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& i : i1) i = std::min(i1.size() - 1, static_cast<std::size_t>(rng.uniform() * i1.size()));
    if (paired) {
      i2 = i1;  // coupled ensembles: resample pairs jointly
    } else {
      for (auto& i : i2) i = std::min(i2.size() - 1, static_cast<std::size_t>(rng.uniform() * i2.size()));
    }
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m = std::max(m, sorted_cost(column(samples1, j, i1), column(samples2, j, i2)));
    values.push_back(m);
  }
  return mean_stderr(values).stderr_ * std::sqrt(static_cast<double>(values.size()));
}

}  // namespace cnls
