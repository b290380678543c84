#include <cmath>
#include <stdexcept>

#include "cnls/random.hpp"
#include "cnls/statistics.hpp"
#include "cnls/wasserstein.hpp"
#include "doctest.h"

using namespace cnls;

TEST_CASE("sample mean and standard error") {
  const std::vector<double> x{1, 2, 3, 4};
  const auto m = mean_stderr(x);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.stderr_ == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(m.n == 4);
}

TEST_CASE("kolmogorov survival matches tabulated values") {
  // scipy.special.kolmogorov
  CHECK(kolmogorov_survival(0.5) == doctest::Approx(0.9639452436648751).epsilon(1e-10));
  CHECK(kolmogorov_survival(1.0) == doctest::Approx(0.26999967167735456).epsilon(1e-10));
  CHECK(kolmogorov_survival(1.36) == doctest::Approx(0.049485876755377876).epsilon(1e-10));
  CHECK(kolmogorov_survival(2.0) == doctest::Approx(0.0006709252557796953).epsilon(1e-8));
  CHECK(kolmogorov_survival(0.0) == 1.0);
}

TEST_CASE("two-sample KS statistic") {
  const std::vector<double> a{0.1, 0.4, 0.7, 1.3, 2.2, 2.9}, b{0.5, 0.6, 1.1, 3.0, 3.5};
  CHECK(ks_two_sample(a, b).statistic == doctest::Approx(0.4));
  CHECK(ks_two_sample(a, a).statistic == 0.0);
  CHECK(ks_two_sample(a, a).p_value == doctest::Approx(1.0));
}

TEST_CASE("KS separates shifted samples and accepts equal laws") {
  SequentialRng rng(StreamId{8, 6, 0});
  std::vector<double> x, y, z;
  for (int i = 0; i < 2000; ++i) {
    x.push_back(rng.normal());
    y.push_back(rng.normal());
    z.push_back(rng.normal() + 0.3);
  }
  CHECK(ks_two_sample(x, y).p_value > 0.01);
  CHECK(ks_two_sample(x, z).p_value < 1e-6);
}

TEST_CASE("chi-squared goodness of fit") {
  const std::vector<std::uint64_t> counts{18, 22, 30, 30};
  const std::vector<double> p{0.2, 0.2, 0.3, 0.3};
  const auto r = chi_square_gof(counts, p);
  CHECK(r.statistic == doctest::Approx(0.4));
  CHECK(r.dof == 3);
  CHECK(r.p_value == doctest::Approx(0.9402424948393607).epsilon(1e-9));
  const std::vector<std::uint64_t> impossible{1, 99};
  CHECK(chi_square_gof(impossible, std::vector<double>{0.0, 1.0}).p_value == 0.0);
}

TEST_CASE("least squares recovers an exact line") {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = least_squares(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.slope_stderr == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bootstrap error of a mean") {
  SequentialRng rng(StreamId{9, 6, 0});
  std::vector<double> x(400);
  for (auto& v : x) v = rng.normal();
  const double se = bootstrap_stderr(x.size(), 400, 3, [&](std::span<const std::size_t> idx) {
    double s = 0;
    for (auto i : idx) s += x[i];
    return s / static_cast<double>(idx.size());
  });
  CHECK(se == doctest::Approx(mean_stderr(x).stderr_).epsilon(0.15));
}

TEST_CASE("quantiles interpolate") {
  CHECK(quantile({3, 1, 2, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({3, 1, 2, 4}, 1.0) == 4.0);
  CHECK(quantile({3, 1, 2, 4}, 0.0) == 1.0);
}

TEST_CASE("capped transport between point masses") {
  const std::vector<double> zero{0.0}, one{1.0}, far{5.0}, half{0.5};
  CHECK(wasserstein_capped_1d(zero, one) == doctest::Approx(1.0));
  CHECK(wasserstein_capped_1d(zero, far) == doctest::Approx(1.0));
  CHECK(wasserstein_capped_1d(zero, half) == doctest::Approx(0.5));
  CHECK(wasserstein_capped_1d(one, one) == 0.0);
  CHECK_THROWS_AS(wasserstein_capped_1d(std::vector<double>{}, one), std::domain_error);
}

TEST_CASE("capped transport of a dilation") {
  // x against 3x with x uniform on (0,1): int min(2x, 1) dx = 3/4.
  const int n = 4000;
  std::vector<double> a, b;
  for (int i = 0; i < n; ++i) {
    a.push_back((i + 0.5) / n);
    b.push_back(3.0 * (i + 0.5) / n);
  }
  CHECK(wasserstein_capped_1d(a, b) == doctest::Approx(0.75).epsilon(1e-4));
}

TEST_CASE("shifted gaussians are half apart") {
  SequentialRng rng(StreamId{10, 6, 0});
  std::vector<std::vector<double>> s1, s2;
  for (int i = 0; i < 20000; ++i) {
    s1.push_back({rng.normal(), rng.normal()});
    s2.push_back({rng.normal() + 0.5, rng.normal()});
  }
  const auto w = wasserstein_bl(s1, s2);
  CHECK(w.max == doctest::Approx(0.5).epsilon(0.06));
  CHECK(w.argmax == 0);
  CHECK(w.per_observable[1] < 0.05);
  CHECK_THROWS_AS(wasserstein_bl(s1, {}), std::domain_error);
  CHECK_THROWS_AS(wasserstein_bl({{1.0}}, {{1.0, 2.0}}), std::domain_error);
}

TEST_CASE("paired bootstrap needs equal sizes") {
  const std::vector<std::vector<double>> a{{0.0}, {1.0}}, b{{0.5}};
  CHECK_THROWS_AS(wasserstein_bl_stderr(a, b, 10, 1, true), std::domain_error);
  CHECK(wasserstein_bl_stderr(a, b, 10, 1, false) >= 0.0);
}
