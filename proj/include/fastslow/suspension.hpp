#pragma once

// Suspension flows over a fast process: the base step k lasts tau(omega_k)
// units of flow time, and the flow value on [Theta_k, Theta_{k+1}) is built
// from the base values.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fastslow/error.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/linalg.hpp"

namespace fastslow {

enum class FlowInterpolation { piecewise_constant, linear };

struct SuspensionSpec {
  ProcessHandle base;
  std::function<double(const Vec&)> roof;  // tau as a function of the base value at the step
  double l_hat = 1.0;                      // L_hat^{-1} <= tau <= L_hat
  FlowInterpolation interpolation = FlowInterpolation::piecewise_constant;
  double mean_roof = 1.0;  // tau bar
  double mean_roof_se = 0.0;
  bool exact = false;  // tau bar and the centering shift come from the stationary law
  Vec shift;           // subtracted from the raw flow value so that E eta = 0

  int dimension() const { return base.dimension(); }
};

// One roof interval of a suspension trajectory.
struct RoofStep {
  std::int64_t index = 0;
  double tau = 1.0;
  double theta = 0.0;  // Theta_index
  Vec start;           // flow value at the left end (after the shift)
  Vec end;             // flow value at the right end (equal to start when piecewise constant)
  Vec eta;             // integral of the flow value over the roof interval
  int state = -1;      // base symbol for chain bases

  // Flow value at local time u in [0, tau).
  Vec value(double u) const {
    if (tau <= 0.0) return start;
    const double w = u / tau;
    return (1.0 - w) * start + w * end;
  }
};

class SuspensionCursor {
 public:
  SuspensionCursor(const SuspensionSpec& spec, std::uint64_t path_index)
      : spec_(&spec), base_(spec.base.cursor(path_index)) {
    const int d = spec.dimension();
    current_.resize(d);
    ahead_.resize(d);
    base_.next(current_);
    state_ = base_.last_state();
    if (spec.interpolation == FlowInterpolation::linear) base_.next(ahead_);
  }

  RoofStep next() {
    const auto& s = *spec_;
    RoofStep step;
    step.index = index_;
    step.theta = theta_;
    step.state = state_;
    step.tau = s.roof(current_);
    if (!(step.tau >= 1.0 / s.l_hat - 1e-12 && step.tau <= s.l_hat + 1e-12)) {
      throw Rejected("roof value " + std::to_string(step.tau) + " at step " + std::to_string(index_) +
                     " violates the declared bounds [1/L_hat, L_hat]");
    }
    step.start = current_ - s.shift;
    if (s.interpolation == FlowInterpolation::linear) {
      step.end = ahead_ - s.shift;
      current_ = ahead_;
      state_ = base_.last_state();
      base_.next(ahead_);
    } else {
      step.end = step.start;
      base_.next(current_);
      state_ = base_.last_state();
    }
    step.eta = 0.5 * step.tau * (step.start + step.end);
    theta_ += step.tau;
    ++index_;
    return step;
  }

 private:
  const SuspensionSpec* spec_;
  ProcessCursor base_;
  Vec current_;
  Vec ahead_;
  int state_ = -1;
  std::int64_t index_ = 0;
  double theta_ = 0.0;
};

namespace detail {

// Exact tau bar and E[raw eta] for chain bases.
inline void exact_roof_moments(const SuspensionSpec& s, double& tau_bar, Vec& raw_eta_mean) {
  const MarkovChainSpec& chain = *s.base.chain();
  const auto& values = s.base.state_values();
  const int d = s.dimension();
  tau_bar = 0.0;
  raw_eta_mean = Vec::Zero(d);
  for (std::size_t a = 0; a < values.size(); ++a) {
    const double pa = chain.stationary(static_cast<Eigen::Index>(a));
    const double ta = s.roof(values[a]);
    tau_bar += pa * ta;
    if (s.interpolation == FlowInterpolation::piecewise_constant) {
      raw_eta_mean += pa * ta * values[a];
    } else {
      Vec next_mean = Vec::Zero(d);
      for (std::size_t b = 0; b < values.size(); ++b) {
        next_mean += chain.transition(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * values[b];
      }
      raw_eta_mean += pa * ta * 0.5 * (values[a] + next_mean);
    }
  }
}

}  // namespace detail

// Builds the suspension and centers the flow value so that E eta = 0. For
// chain bases the shift is exact; otherwise tau bar and E eta are estimated
// from `calibration_steps` base steps, and the two half-sample estimates of
// tau bar must agree within 3 standard errors.
inline SuspensionSpec build_suspension(const ProcessHandle& base, std::function<double(const Vec&)> roof,
                                       double l_hat,
                                       FlowInterpolation interpolation = FlowInterpolation::piecewise_constant,
                                       std::int64_t calibration_steps = 1 << 20) {
  detail::require(static_cast<bool>(roof), "build_suspension: roof function is missing");
  detail::require(l_hat >= 1.0, "build_suspension: L_hat must be >= 1");
  SuspensionSpec s;
  s.base = base;
  s.roof = std::move(roof);
  s.l_hat = l_hat;
  s.interpolation = interpolation;
  const int d = base.dimension();
  s.shift = Vec::Zero(d);
  if (base.chain()) {
    for (const Vec& v : base.state_values()) {
      const double t = s.roof(v);
      detail::require(t >= 1.0 / l_hat && t <= l_hat,
                      "build_suspension: roof value " + std::to_string(t) + " violates [1/L_hat, L_hat]");
    }
    double tau_bar = 0.0;
    Vec raw_mean;
    detail::exact_roof_moments(s, tau_bar, raw_mean);
    s.mean_roof = tau_bar;
    s.shift = raw_mean / tau_bar;
    s.exact = true;
    return s;
  }
  // Estimated mode: accumulate on the uncentered flow.
  SuspensionCursor cursor(s, 0);
  const std::int64_t half = calibration_steps / 2;
  double tau_sum[2] = {0.0, 0.0};
  double tau_sq[2] = {0.0, 0.0};
  Vec eta_sum = Vec::Zero(d);
  for (std::int64_t k = 0; k < 2 * half; ++k) {
    const RoofStep step = cursor.next();
    const int h = k < half ? 0 : 1;
    tau_sum[h] += step.tau;
    tau_sq[h] += step.tau * step.tau;
    eta_sum += step.eta;
  }
  double mean[2], var[2];
  for (int h = 0; h < 2; ++h) {
    mean[h] = tau_sum[h] / half;
    var[h] = std::max(0.0, tau_sq[h] / half - mean[h] * mean[h]) / half;
  }
  const double se_diff = std::sqrt(var[0] + var[1]);
  detail::require(std::abs(mean[0] - mean[1]) <= 3.0 * se_diff + 1e-15,
                  "build_suspension: half-sample estimates of the mean roof disagree");
  s.mean_roof = 0.5 * (mean[0] + mean[1]);
  s.mean_roof_se = 0.5 * se_diff;
  s.shift = eta_sum / (2.0 * half) / s.mean_roof;
  return s;
}

inline SuspensionCursor suspension_cursor(const SuspensionSpec& s, std::uint64_t path_index = 0) {
  return SuspensionCursor(s, path_index);
}

// eta(k) = eta o theta^k for k in [first, first + count) of trajectory `path_index`.
inline Eigen::MatrixXd eta_path(const SuspensionSpec& s, std::int64_t first, std::int64_t count,
                                std::uint64_t path_index = 0) {
  detail::require(first >= 0 && count >= 1, "eta_path: invalid range");
  SuspensionCursor cursor(s, path_index);
  Eigen::MatrixXd out(count, s.dimension());
  for (std::int64_t k = 0; k < first + count; ++k) {
    const RoofStep step = cursor.next();
    if (k >= first) out.row(k - first) = step.eta.transpose();
  }
  return out;
}

// Theta_0..Theta_n.
inline std::vector<double> theta(const SuspensionSpec& s, std::int64_t n, std::uint64_t path_index = 0) {
  detail::require(n >= 0, "theta: n must be non-negative");
  SuspensionCursor cursor(s, path_index);
  std::vector<double> out{0.0};
  out.reserve(static_cast<std::size_t>(n) + 1);
  for (std::int64_t k = 0; k < n; ++k) {
    const RoofStep step = cursor.next();
    out.push_back(step.theta + step.tau);
  }
  return out;
}

// The skeleton eta as a state function of a chain: the base chain itself in
// piecewise-constant mode, the chain of consecutive pairs in linear mode.
// Gives exact covariances of eta through exact_covariance.
struct EtaChain {
  MarkovChainSpec chain;
  ObservableSpec eta;
  std::vector<double> roof;  // tau per state of `chain`
  std::vector<Vec> start;    // flow value at the left end per state
  std::vector<Vec> end;      // flow value at the right end per state
};

inline EtaChain eta_chain(const SuspensionSpec& s) {
  detail::require(s.base.chain() != nullptr && s.exact, "eta_chain: needs a chain base");
  const MarkovChainSpec& base = *s.base.chain();
  const auto& values = s.base.state_values();
  const int d = s.dimension();
  const auto states = static_cast<Eigen::Index>(values.size());
  EtaChain out;
  if (s.interpolation == FlowInterpolation::piecewise_constant) {
    out.chain = base;
    Eigen::MatrixXd table(states, d);
    for (Eigen::Index a = 0; a < states; ++a) {
      const Vec v = values[static_cast<std::size_t>(a)];
      const double t = s.roof(v);
      table.row(a) = (t * (v - s.shift)).transpose();
      out.roof.push_back(t);
      out.start.push_back(v - s.shift);
      out.end.push_back(v - s.shift);
    }
    out.eta = ObservableSpec::on_states(table, false);
    return out;
  }
  const Eigen::Index pairs = states * states;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(pairs, pairs);
  Eigen::VectorXd pi(pairs);
  Eigen::MatrixXd table(pairs, d);
  for (Eigen::Index a = 0; a < states; ++a) {
    for (Eigen::Index b = 0; b < states; ++b) {
      const Eigen::Index ab = a * states + b;
      pi(ab) = base.stationary(a) * base.transition(a, b);
      for (Eigen::Index c = 0; c < states; ++c) p(ab, b * states + c) = base.transition(b, c);
      const Vec va = values[static_cast<std::size_t>(a)] - s.shift;
      const Vec vb = values[static_cast<std::size_t>(b)] - s.shift;
      const double t = s.roof(values[static_cast<std::size_t>(a)]);
      table.row(ab) = (0.5 * t * (va + vb)).transpose();
      out.roof.push_back(t);
      out.start.push_back(va);
      out.end.push_back(vb);
    }
  }
  out.chain.transition = p;
  out.chain.stationary = pi;
  out.eta = ObservableSpec::on_states(table, false);
  return out;
}

}  // namespace fastslow
