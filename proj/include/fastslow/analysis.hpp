#pragma once

// Statistical verification: decay-rate fits, moment growth of partial sums,
// characteristic-function gaps and Wasserstein distances.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "fastslow/error.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/parallel.hpp"
#include "fastslow/rng.hpp"
#include "fastslow/stats.hpp"

namespace fastslow {

// ---- decay fits ----------------------------------------------------------

struct DecayFit {
  std::vector<double> log_n;
  std::vector<double> log_error;
  double slope = 0.0;
  double intercept = 0.0;
  double delta = 0.0;  // -slope
  stats::Interval delta_ci;
  int resamples = 0;
  bool paired = false;  // CI from resampling per-path samples
  double max_residual = 0.0;
};

// Least squares in log-log with a 95% percentile bootstrap band for delta.
// With `samples` (per-scale per-path values whose mean is the error), the
// bootstrap resamples paths; otherwise it resamples fit residuals.
inline DecayFit decay_fit(const std::vector<double>& scales, const std::vector<double>& errors,
                          std::uint64_t seed = 1, const std::vector<std::vector<double>>* samples = nullptr,
                          int resamples = 200) {
  detail::require(scales.size() == errors.size(), "decay_fit: scales and errors differ in length");
  detail::require(scales.size() >= 4, "decay_fit: needs at least 4 scales");
  detail::require(resamples >= 200, "decay_fit: needs at least 200 bootstrap resamples");
  DecayFit fit;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    detail::require(scales[i] > 0.0, "decay_fit: scales must be positive");
    detail::require(errors[i] > 0.0, "decay_fit: errors must be positive");
    fit.log_n.push_back(std::log(scales[i]));
    fit.log_error.push_back(std::log(errors[i]));
  }
  const stats::LinearFit base = stats::least_squares(fit.log_n, fit.log_error);
  fit.slope = base.slope;
  fit.intercept = base.intercept;
  fit.delta = -base.slope;
  for (double r : base.residuals) fit.max_residual = std::max(fit.max_residual, std::abs(r));
  fit.resamples = resamples;
  CounterRng rng(seed, stream_id(StreamTag::bootstrap, 0xdeca));
  std::vector<double> deltas;
  deltas.reserve(static_cast<std::size_t>(resamples));
  if (samples) {
    detail::require(samples->size() == scales.size(), "decay_fit: one sample vector per scale required");
    fit.paired = true;
    for (int b = 0; b < resamples; ++b) {
      std::vector<double> y;
      for (const auto& s : *samples) {
        detail::require(!s.empty(), "decay_fit: empty per-scale sample");
        double acc = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) acc += s[static_cast<std::size_t>(rng.uniform() * s.size())];
        y.push_back(std::log(std::max(acc / static_cast<double>(s.size()), 1e-300)));
      }
      deltas.push_back(-stats::least_squares(fit.log_n, y).slope);
    }
  } else {
    for (int b = 0; b < resamples; ++b) {
      std::vector<double> y(fit.log_n.size());
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = base.residuals[static_cast<std::size_t>(rng.uniform() * base.residuals.size())];
        y[i] = base.intercept + base.slope * fit.log_n[i] + r;
      }
      deltas.push_back(-stats::least_squares(fit.log_n, y).slope);
    }
  }
  std::sort(deltas.begin(), deltas.end());
  fit.delta_ci = {stats::sorted_quantile(deltas, 0.025), stats::sorted_quantile(deltas, 0.975)};
  return fit;
}

// ---- moment growth -------------------------------------------------------

struct MomentGrowth {
  int M = 1;
  std::vector<std::int64_t> n;
  std::vector<double> ratio;  // E|S_n|^{2M} / n^M
  std::vector<double> se;
  stats::SpearmanResult trend;
  bool bounded = true;  // no positive trend at the 1% level
};

// Partial sums S_n of independent trajectories; the ensemble for each n uses
// its own block of path indices. Returns one growth table per requested M,
// all computed from the same sums.
inline std::vector<MomentGrowth> moment_growth(const ProcessHandle& h, const std::vector<int>& moments,
                                               const std::vector<std::int64_t>& n_grid, std::size_t paths,
                                               unsigned threads = 1, std::uint64_t path_offset = 0) {
  detail::require(!moments.empty(), "moment_growth: no moments requested");
  detail::require(n_grid.size() >= 3, "moment_growth: needs at least three values of n");
  detail::require(paths >= 2, "moment_growth: needs at least two paths");
  std::vector<MomentGrowth> out(moments.size());
  for (std::size_t j = 0; j < moments.size(); ++j) {
    detail::require(moments[j] >= 1, "moment_growth: M must be >= 1");
    out[j].M = moments[j];
    out[j].n = n_grid;
  }
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::int64_t n = n_grid[gi];
    detail::require(n >= 1, "moment_growth: n must be >= 1");
    std::vector<double> norms(paths);
    parallel_for(paths, threads, [&](std::size_t p) {
      auto cursor = h.cursor(path_offset + gi * paths + p);
      Vec v(h.dimension());
      Vec sum = Vec::Zero(h.dimension());
      for (std::int64_t k = 0; k < n; ++k) {
        cursor.next(v);
        sum += v;
      }
      norms[p] = sum.squaredNorm();
    });
    for (std::size_t j = 0; j < moments.size(); ++j) {
      const int M = moments[j];
      std::vector<double> values(paths);
      const double scale = std::pow(static_cast<double>(n), M);
      for (std::size_t p = 0; p < paths; ++p) values[p] = std::pow(norms[p], M) / scale;
      out[j].ratio.push_back(stats::mean(values));
      out[j].se.push_back(stats::standard_error(values));
    }
  }
  for (auto& g : out) {
    std::vector<double> x(g.n.begin(), g.n.end());
    g.trend = stats::spearman(x, g.ratio);
    g.bounded = g.trend.p_positive >= 0.01;
  }
  return out;
}

// ---- characteristic functions ---------------------------------------------

struct CfGap {
  double gap = 0.0;
  double se = 0.0;
  Vec argmax;
  double radius = 0.0;
  bool inconclusive = false;  // gap below 3 Monte Carlo standard errors
  std::size_t samples = 0;
};

inline constexpr double kCfExponent = 1.0 / 20.0;

// sup over a grid in |w| <= radius of |f_hat(w) - exp(-<varsigma w, w>/2)| for
// samples already normalized (S_n / sqrt(n) or block variables V_k). The grid
// has `points` nodes per axis; for d >= 2 the axes are used separately.
inline CfGap empirical_cf_gap(const std::vector<Vec>& samples, const Eigen::MatrixXd& sigma, double radius,
                              int points = 33) {
  detail::require(!samples.empty(), "empirical_cf_gap: empty sample");
  const int d = static_cast<int>(samples.front().size());
  CfGap out;
  out.radius = radius;
  out.samples = samples.size();
  const double count = static_cast<double>(samples.size());
  for (int axis = 0; axis < d; ++axis) {
    for (int j = 0; j < points; ++j) {
      Vec w = Vec::Zero(d);
      w(axis) = -radius + 2.0 * radius * j / (points - 1);
      std::complex<double> f(0.0, 0.0);
      for (const Vec& s : samples) {
        const double angle = w.dot(s);
        f += std::complex<double>(std::cos(angle), std::sin(angle));
      }
      f /= count;
      const Mat sig = sigma;
      const double target = std::exp(-0.5 * w.dot(sig * w));
      const double gap = std::abs(f - target);
      if (gap > out.gap || out.argmax.size() == 0) {
        out.gap = gap;
        out.argmax = w;
        // delta method: project the summands on the direction of f - target
        const std::complex<double> u = gap > 0.0 ? (f - target) / gap : std::complex<double>(1.0, 0.0);
        double sum = 0.0, sq = 0.0;
        for (const Vec& s : samples) {
          const double angle = w.dot(s);
          const double proj = std::real(std::conj(u) * std::complex<double>(std::cos(angle), std::sin(angle)));
          sum += proj;
          sq += proj * proj;
        }
        const double var = std::max(0.0, sq / count - (sum / count) * (sum / count));
        out.se = std::sqrt(var / count);
      }
    }
  }
  out.inconclusive = out.gap < 3.0 * out.se;
  return out;
}

// Empirical characteristic-function gap of S_n / sqrt(n) over |w| <= n^{1/40}.
inline CfGap cf_gaussian_gap(const ProcessHandle& h, std::int64_t n, const Eigen::MatrixXd& sigma,
                             std::size_t samples, unsigned threads = 1, std::uint64_t path_offset = 0) {
  detail::require(n >= 1, "cf_gaussian_gap: n must be >= 1");
  detail::require(samples >= 100000, "cf_gaussian_gap: needs at least 1e5 partial-sum samples");
  std::vector<Vec> sums(samples);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  parallel_for(samples, threads, [&](std::size_t p) {
    auto cursor = h.cursor(path_offset + p);
    Vec v(h.dimension());
    Vec sum = Vec::Zero(h.dimension());
    for (std::int64_t k = 0; k < n; ++k) {
      cursor.next(v);
      sum += v;
    }
    sums[p] = norm * sum;
  });
  return empirical_cf_gap(sums, sigma, std::pow(static_cast<double>(n), 0.5 * kCfExponent));
}

// ---- distances -------------------------------------------------------------

// W1 between empirical laws: exact in d = 1, sliced over 64 random directions
// for d >= 2.
inline double wasserstein1(const std::vector<Vec>& a, const std::vector<Vec>& b, std::uint64_t seed = 1) {
  detail::require(!a.empty() && !b.empty(), "wasserstein1 of an empty sample");
  const int d = static_cast<int>(a.front().size());
  detail::require(a.size() >= 1000 && b.size() >= 1000, "wasserstein1 needs at least 1e3 samples per side");
  auto project = [](const std::vector<Vec>& s, const Vec& dir) {
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = dir.dot(s[i]);
    return out;
  };
  if (d == 1) return stats::wasserstein1(project(a, scalar_vec(1.0)), project(b, scalar_vec(1.0)));
  CounterRng rng(seed, stream_id(StreamTag::directions, 0));
  double acc = 0.0;
  constexpr int kDirections = 64;
  for (int k = 0; k < kDirections; ++k) {
    Vec dir(d);
    for (int i = 0; i < d; ++i) dir(i) = rng.normal();
    dir /= dir.norm();
    acc += stats::wasserstein1(project(a, dir), project(b, dir));
  }
  return acc / kDirections;
}

}  // namespace fastslow
