#pragma once

// Small statistics toolkit: moments, bootstrap, rank correlation, goodness of
// fit and distances between samples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "fastslow/error.hpp"
#include "fastslow/rng.hpp"

namespace fastslow::stats {

inline double mean(const std::vector<double>& x) {
  detail::require(!x.empty(), "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x) {
  detail::require(x.size() >= 2, "variance needs at least two values");
  const double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

inline double standard_error(const std::vector<double>& x) {
  return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<double>(), x); }

inline double normal_quantile(double p) {
  detail::require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// Linear-interpolated quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  detail::require(!sorted.empty(), "quantile of an empty sample");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

inline double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  return sorted_quantile(x, 0.5);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  bool overlaps(const Interval& o) const { return !(hi < o.lo || o.hi < lo); }
};

// Percentile bootstrap interval for `statistic` over resamples of `x`.
inline Interval bootstrap_ci(const std::vector<double>& x,
                             const std::function<double(const std::vector<double>&)>& statistic,
                             std::uint64_t seed, int resamples = 200, double level = 0.95,
                             std::uint64_t stream = 0) {
  detail::require(!x.empty(), "bootstrap of an empty sample");
  detail::require(resamples >= 200, "bootstrap needs at least 200 resamples");
  CounterRng rng(seed, stream_id(StreamTag::bootstrap, stream));
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(resamples));
  std::vector<double> sample(x.size());
  for (int b = 0; b < resamples; ++b) {
    for (auto& v : sample) v = x[static_cast<std::size_t>(rng.uniform() * static_cast<double>(x.size()))];
    stats.push_back(statistic(sample));
  }
  std::sort(stats.begin(), stats.end());
  const double tail = 0.5 * (1.0 - level);
  return {sorted_quantile(stats, tail), sorted_quantile(stats, 1.0 - tail)};
}

// Basic (reverse percentile) interval [2 t - q_hi, 2 t - q_lo]. Preferable to
// the percentile form when resampling biases the statistic, as duplicated
// points do for distances to a fixed reference law.
inline Interval bootstrap_basic_ci(const std::vector<double>& x,
                                   const std::function<double(const std::vector<double>&)>& statistic,
                                   std::uint64_t seed, int resamples = 200, double level = 0.95,
                                   std::uint64_t stream = 0) {
  const double t = statistic(x);
  const Interval p = bootstrap_ci(x, statistic, seed, resamples, level, stream);
  return {2.0 * t - p.hi, 2.0 * t - p.lo};
}

inline Interval bootstrap_mean_ci(const std::vector<double>& x, std::uint64_t seed, int resamples = 200,
                                  std::uint64_t stream = 0) {
  return bootstrap_ci(x, [](const std::vector<double>& s) { return mean(s); }, seed, resamples, 0.95, stream);
}

// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct SpearmanResult {
  double rho = 0.0;
  double p_positive = 1.0;  // one-sided p-value for a positive association
};

// Spearman rank correlation. The one-sided p-value is exact (all
// permutations) for n <= 9 and uses the t approximation otherwise.
inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require(x.size() == y.size() && x.size() >= 3, "spearman needs at least three pairs");
  const auto rx = ranks(x), ry = ranks(y);
  SpearmanResult out;
  out.rho = pearson(rx, ry);
  const std::size_t n = x.size();
  if (n <= 9) {
    std::vector<double> perm = ry;
    std::sort(perm.begin(), perm.end());
    std::size_t total = 0, at_least = 0;
    do {
      ++total;
      if (pearson(rx, perm) >= out.rho - 1e-12) ++at_least;
    } while (std::next_permutation(perm.begin(), perm.end()));
    out.p_positive = static_cast<double>(at_least) / static_cast<double>(total);
    return out;
  }
  if (out.rho >= 1.0) {
    out.p_positive = 0.0;
    return out;
  }
  const double t = out.rho * std::sqrt((static_cast<double>(n) - 2.0) / (1.0 - out.rho * out.rho));
  boost::math::students_t_distribution<double> dist(static_cast<double>(n) - 2.0);
  out.p_positive = boost::math::cdf(boost::math::complement(dist, t));
  return out;
}

// Anderson-Darling statistic of `x` against the fully specified N(mu, sd^2).
inline double anderson_darling_normal(std::vector<double> x, double mu, double sd) {
  detail::require(x.size() >= 8, "anderson_darling_normal needs at least 8 values");
  detail::require(sd > 0.0, "anderson_darling_normal: sd must be positive");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double zi = std::clamp(normal_cdf((x[i] - mu) / sd), 1e-300, 1.0 - 1e-16);
    const double zr = std::clamp(normal_cdf((x[x.size() - 1 - i] - mu) / sd), 1e-300, 1.0 - 1e-16);
    acc += (2.0 * static_cast<double>(i) + 1.0) * (std::log(zi) + std::log1p(-zr));
  }
  return -n - acc / n;
}

// 1% critical value of the Anderson-Darling statistic for a fully specified law.
inline constexpr double kAndersonDarlingCritical1 = 3.857;

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  detail::require(!a.empty() && !b.empty(), "ks_statistic of an empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double worst = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return worst;
}

// Scale of the two-sample KS statistic under the null, sqrt((n + m) / (n m)).
inline double ks_scale(std::size_t n, std::size_t m) {
  return std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

// Asymptotic two-sample KS p-value (Kolmogorov distribution).
inline double ks_p_value(double statistic, std::size_t n, std::size_t m) {
  const double en = std::sqrt(static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m));
  const double lambda = (en + 0.12 + 0.11 / en) * statistic;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

// One-dimensional W1 between two empirical laws: exact for equal sizes (matched
// order statistics), through the quantile functions otherwise.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  detail::require(!a.empty() && !b.empty(), "wasserstein1 of an empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  // Integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the merged breakpoints.
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    acc += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return acc;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;
  double slope_se = 0.0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require(x.size() == y.size() && x.size() >= 2, "least_squares needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  detail::require(sxx > 0.0, "least_squares: abscissae are all equal");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    fit.residuals.push_back(r);
    rss += r * r;
  }
  if (x.size() > 2) fit.slope_se = std::sqrt(rss / (static_cast<double>(x.size()) - 2.0) / sxx);
  return fit;
}

// Strassen: with a coupling at hand, the Prokhorov distance is at most the
// smallest eps on the grid j / grid_size with P(distance > eps) <= eps.
inline double strassen_prokhorov(const std::vector<double>& distances, int grid_size = 1000) {
  detail::require(!distances.empty(), "strassen_prokhorov: empty sample");
  std::vector<double> sorted = distances;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (int j = 1; j <= grid_size; ++j) {
    const double eps = static_cast<double>(j) / grid_size;
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), eps);
    if (static_cast<double>(above) / n <= eps) return eps;
  }
  return 1.0;
}

}  // namespace fastslow::stats
