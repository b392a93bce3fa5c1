#pragma once

// Euler-Maruyama for the limiting diffusion and its transformed form.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "fastslow/coefficients.hpp"
#include "fastslow/error.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/path.hpp"
#include "fastslow/rng.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/slow_motion.hpp"

namespace fastslow {

struct SdeSpec {
  int d = 1;
  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> diffusion;
  double dt = 1e-4;
  double horizon = 1.0;
  bool additive = false;  // diffusion does not depend on the state
  bool driftless = false;

  std::int64_t steps() const { return static_cast<std::int64_t>(std::llround(horizon / dt)); }

  void validate() const {
    detail::require(d >= 1 && d <= kMaxDim, "SDE dimension out of range");
    detail::require(static_cast<bool>(drift) && static_cast<bool>(diffusion), "SDE coefficients missing");
    detail::require(dt > 0.0 && horizon > 0.0, "SDE step and horizon must be positive");
    detail::require(dt <= 1e-2 * horizon * (1.0 + 1e-12), "SDE step must satisfy dt <= 1e-2 T");
    const double ratio = horizon / dt;
    detail::require(std::abs(ratio - std::round(ratio)) <= 1e-6 * ratio, "horizon must be a multiple of dt");
  }
};

// Xi_{k+1} = Xi_k + drift(Xi_k) dt + diffusion(Xi_k) dW_k with dW_k drawn by
// `next_increment` (variance dt per coordinate).
template <class NextIncrement>
Path euler_maruyama_with(const SdeSpec& s, NextIncrement&& next_increment, const Vec& x0) {
  s.validate();
  detail::require(x0.size() == s.d, "initial state has the wrong dimension");
  const std::int64_t steps = s.steps();
  Path p;
  p.grid.reserve(static_cast<std::size_t>(steps) + 1);
  p.values.reserve(static_cast<std::size_t>(steps) + 1);
  Vec x = x0;
  Vec dw(s.d);
  p.push(0.0, x);
  const Mat constant_diffusion = s.additive ? s.diffusion(x0) : Mat();
  for (std::int64_t k = 0; k < steps; ++k) {
    next_increment(dw);
    Vec next = x;
    if (!s.driftless) next += s.drift(x) * s.dt;
    next += (s.additive ? constant_diffusion : s.diffusion(x)) * dw;
    x = next;
    if (!x.allFinite()) throw NumericalAbort("SDE state left the finite range", k);
    p.push(static_cast<double>(k + 1) * s.dt, x);
  }
  return p;
}

// Noise from a supplied increment matrix (rows = steps).
inline Path euler_maruyama(const SdeSpec& s, const Eigen::MatrixXd& increments, const Vec& x0) {
  detail::require(increments.rows() == s.steps() && increments.cols() == s.d,
                  "euler_maruyama: increment matrix has the wrong shape");
  Eigen::Index row = 0;
  return euler_maruyama_with(
      s, [&](Vec& dw) { dw = increments.row(row++).transpose(); }, x0);
}

// Noise from a seed: stream (brownian, path_index).
inline Path euler_maruyama(const SdeSpec& s, std::uint64_t seed, const Vec& x0, std::uint64_t path_index = 0) {
  CounterRng rng(seed, stream_id(StreamTag::sde, path_index));
  const double scale = std::sqrt(s.dt);
  return euler_maruyama_with(
      s,
      [&](Vec& dw) {
        for (int i = 0; i < s.d; ++i) dw(i) = scale * rng.normal();
      },
      x0);
}

// Brownian increments for a seed, identical to those used by euler_maruyama(s, seed, ...).
inline Eigen::MatrixXd brownian_increments(const SdeSpec& s, std::uint64_t seed, std::uint64_t path_index = 0) {
  CounterRng rng(seed, stream_id(StreamTag::sde, path_index));
  const double scale = std::sqrt(s.dt);
  Eigen::MatrixXd out(s.steps(), s.d);
  for (Eigen::Index k = 0; k < out.rows(); ++k) {
    for (int i = 0; i < s.d; ++i) out(k, i) = scale * rng.normal();
  }
  return out;
}

// dXi = sigma(Xi) dW + (b_bar + c)(Xi) dt
inline SdeSpec limit_sde(const DiffusionCoefficients& dc, const SlowModel& m, double dt, double horizon,
                         bool with_correction = true) {
  SdeSpec s;
  s.d = dc.d;
  s.dt = dt;
  s.horizon = horizon;
  s.additive = m.constant_sigma;
  s.driftless = m.zero_drift && (m.constant_sigma || !with_correction);
  s.diffusion = dc.sigma_field;
  if (with_correction) {
    s.drift = [dc](const Vec& x) -> Vec { return dc.drift(x); };
  } else {
    s.drift = dc.b_bar;
  }
  return s;
}

// dPsi = varsigma^{1/2} dW + (Sigma^{-1} b_bar + q^E)(r^{-1} Psi) dt in discrete
// mode; the continuous mode has no q^E term.
inline SdeSpec transformed_sde(const DiffusionCoefficients& dc, const SlowModel& m, const TransformHandle& t,
                               double dt, double horizon) {
  SdeSpec s;
  s.d = dc.d;
  s.dt = dt;
  s.horizon = horizon;
  s.additive = true;
  const Mat root = dc.sigma_sqrt;
  s.diffusion = [root](const Vec&) -> Mat { return root; };
  const bool with_q = dc.mode == CoefficientMode::discrete && !m.constant_sigma;
  s.driftless = m.zero_drift && !with_q;
  const Eigen::MatrixXd zero_lag = dc.zero_lag;
  auto hint = std::make_shared<Vec>(Vec::Zero(dc.d));
  s.drift = [dc, m, t, zero_lag, with_q, hint](const Vec& psi) -> Vec {
    const Vec x = t.r_inv_from(psi, *hint);
    *hint = x;
    Vec out = Vec::Zero(dc.d);
    if (!m.zero_drift) out += t.Dr(x) * dc.b_bar(x);
    if (with_q) out += expected_correction(m, zero_lag, x);
    return out;
  };
  return s;
}

// t -> p(t / tau_bar) on the grid of p.
inline Path time_changed_path(const Path& p, double tau_bar) {
  detail::require(tau_bar > 0.0, "time_changed_path: tau_bar must be positive");
  detail::require(!p.grid.empty(), "time_changed_path: empty path");
  Path out;
  const double end = p.grid.back();
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double t = p.grid[k] / tau_bar;
    if (t > end * (1.0 + 1e-12)) {
      throw Rejected("time_changed_path: t / tau_bar = " + std::to_string(t) + " lies beyond the horizon");
    }
    out.push(p.grid[k], p.at(std::min(t, end)));
  }
  return out;
}

}  // namespace fastslow
