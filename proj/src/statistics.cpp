#include "cnls/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

#include "cnls/random.hpp"

namespace cnls {

MeanStderr mean_stderr(std::span<const double> x) {
  MeanStderr r;
  r.n = x.size();
  if (x.empty()) return r;
  double s = 0.0;
  for (double v : x) s += v;
  r.mean = s / static_cast<double>(x.size());
  if (x.size() < 2) return r;
  double q = 0.0;
  for (double v : x) q += (v - r.mean) * (v - r.mean);
  r.stderr_ = std::sqrt(q / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
  return r;
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  // The alternating series converges slowly below ~0.3, where the value is 1 to
  // double precision anyway.
  if (lambda < 0.2) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::domain_error("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }
  const double ne = n1 * n2 / (n1 + n2);
  const double root = std::sqrt(ne);
  return {d, kolmogorov_survival((root + 0.12 + 0.11 / root) * d)};
}

ChiSquareResult chi_square_gof(std::span<const std::uint64_t> counts, std::span<const double> p) {
  if (counts.size() != p.size() || counts.empty()) throw std::domain_error("chi_square_gof: size mismatch");
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  ChiSquareResult r;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double expected = total * p[i];
    if (expected <= 0.0) {
      if (counts[i] > 0) return {INFINITY, 0.0, 0.0};
      continue;
    }
    const double diff = static_cast<double>(counts[i]) - expected;
    r.statistic += diff * diff / expected;
    ++cells;
  }
  if (cells < 2) return r;
  r.dof = static_cast<double>(cells - 1);
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.statistic));
  return r;
}

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::domain_error("least_squares: need two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::domain_error("least_squares: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - f.intercept - f.slope * x[i];
      rss += e * e;
    }
    f.slope_stderr = std::sqrt(rss / (n - 2.0) / sxx);
  }
  return f;
}

double bootstrap_stderr(std::size_t n, std::size_t resamples, std::uint64_t seed,
                        const std::function<double(std::span<const std::size_t>)>& statistic) {
  if (n == 0 || resamples < 2) throw std::domain_error("bootstrap_stderr: need data and two resamples");
  SequentialRng rng(StreamId{seed, static_cast<std::uint64_t>(Lane::kBootstrap), 0});
  std::vector<std::size_t> idx(n);
  std::vector<double> values;
  values.reserve(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& i : idx) i = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
    const double v = statistic(idx);
    if (std::isfinite(v)) values.push_back(v);
  }
  if (values.size() < 2) return INFINITY;
  return mean_stderr(values).stderr_ * std::sqrt(static_cast<double>(values.size()));
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw std::domain_error("quantile: empty sample");
  std::sort(x.begin(), x.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(x.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  return i + 1 < x.size() ? x[i] * (1.0 - frac) + x[i + 1] * frac : x[i];
}

}  // namespace cnls
