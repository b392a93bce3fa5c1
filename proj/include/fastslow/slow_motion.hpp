#pragma once

// Slow-motion recursions and ODEs, and the Sigma^{-1} transform r with its
// second-order correction q.

#include <algorithm>
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
#include "fastslow/path.hpp"
#include "fastslow/quadrature.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/suspension.hpp"

namespace fastslow {

// ---- transform -----------------------------------------------------------

struct TransformHandle {
  int d = 1;
  std::function<Vec(const Vec&)> r;
  std::function<Vec(const Vec&, const Vec&)> r_inv_from;  // (y, starting guess)
  std::function<Mat(const Vec&)> Dr;
  std::function<Vec(const Vec&, const Vec&)> q;  // q(x, zeta)
  bool identity = false;                         // Sigma = I
  bool linear = false;                           // Sigma constant

  Vec r_inv(const Vec& y) const { return r_inv_from(y, Vec::Zero(d)); }
};

// q(x, zeta) = -1/2 Sigma^{-1} sum_l (Sigma zeta)_l (d_l Sigma) zeta
inline Vec transform_correction(const SlowModel& m, const Vec& x, const Vec& zeta) {
  const Mat s = m.sigma(x);
  const MatGrad grad = m.gradient(x);
  const Vec sz = s * zeta;
  Vec acc = Vec::Zero(m.d);
  for (int l = 0; l < m.d; ++l) acc += sz(l) * (grad[static_cast<std::size_t>(l)] * zeta);
  const Vec solved = s.partialPivLu().solve(acc);
  return -0.5 * solved;
}

// q^E(x) = E q(x, xi(0)) = -1/2 Sigma^{-1} sum_l [(d_l Sigma) Z Sigma^T]_{., l}, Z = E xi xi^T.
inline Vec expected_correction(const SlowModel& m, const Eigen::MatrixXd& zero_lag, const Vec& x) {
  const Mat s = m.sigma(x);
  const MatGrad grad = m.gradient(x);
  const Mat z = zero_lag;
  Vec acc = Vec::Zero(m.d);
  for (int l = 0; l < m.d; ++l) {
    const Mat term = grad[static_cast<std::size_t>(l)] * z * s.transpose();
    acc += term.col(l);
  }
  const Vec solved = s.partialPivLu().solve(acc);
  return -0.5 * solved;
}

namespace detail {

// r(x) = int_0^x du / Sigma(u) through a cumulative table on [-32, 32].
class ScalarAntiderivative {
 public:
  explicit ScalarAntiderivative(std::function<double(double)> f) : f_(std::move(f)) {
    cumulative_.assign(kCells + 1, 0.0);
    const int zero_cell = kCells / 2;
    for (int c = zero_cell; c < kCells; ++c) {
      cumulative_[c + 1] = cumulative_[c] + quad::adaptive(f_, node(c), node(c + 1), 1e-13);
    }
    for (int c = zero_cell; c > 0; --c) {
      cumulative_[c - 1] = cumulative_[c] - quad::adaptive(f_, node(c - 1), node(c), 1e-13);
    }
  }

  double operator()(double x) const {
    if (!(x > kLo && x < kHi)) {
      if (!std::isfinite(x)) return x;
      return x > 0 ? cumulative_.back() + quad::adaptive(f_, kHi, x, 1e-12)
                   : cumulative_.front() - quad::adaptive(f_, x, kLo, 1e-12);
    }
    const int c = std::min(kCells - 1, static_cast<int>(std::floor((x - kLo) / kWidth)));
    return cumulative_[c] + quad::gauss_legendre10(f_, node(c), x);
  }

 private:
  static constexpr double kLo = -32.0;
  static constexpr double kHi = 32.0;
  static constexpr double kWidth = 1.0 / 16.0;
  static constexpr int kCells = 1024;

  static double node(int c) { return kLo + c * kWidth; }

  std::function<double(double)> f_;
  std::vector<double> cumulative_;
};

}  // namespace detail

// Builds r with Dr = Sigma^{-1}. d = 1 integrates 1/Sigma; d >= 2 uses the
// model's closed-form r, checked against Sigma^{-1} by central differences.
inline TransformHandle build_transform(const SlowModel& m) {
  detail::require(m.invertible, "build_transform: model '" + m.name + "' is not declared invertible");
  detail::require(m.symmetric_inverse, "build_transform: model '" + m.name + "' is not declared curl-free");
  TransformHandle t;
  t.d = m.d;
  t.Dr = [m](const Vec& x) -> Mat { return m.sigma(x).inverse(); };
  t.q = [m](const Vec& x, const Vec& zeta) -> Vec {
    if (m.constant_sigma) return Vec::Zero(m.d);
    return transform_correction(m, x, zeta);
  };
  if (m.constant_sigma) {
    const Mat s = m.sigma(Vec::Zero(m.d));
    const Mat inv = s.inverse();
    t.linear = true;
    t.identity = (s - Mat::Identity(m.d, m.d)).cwiseAbs().maxCoeff() == 0.0;
    t.r = [inv](const Vec& x) -> Vec { return inv * x; };
    t.r_inv_from = [s](const Vec& y, const Vec&) -> Vec { return s * y; };
    return t;
  }
  if (m.d == 1) {
    auto sigma = m.sigma;
    auto table = std::make_shared<detail::ScalarAntiderivative>(
        [sigma](double u) { return 1.0 / sigma(scalar_vec(u))(0, 0); });
    t.r = [table](const Vec& x) -> Vec { return scalar_vec((*table)(x(0))); };
    t.r_inv_from = [table, sigma](const Vec& yv, const Vec& guess) -> Vec {
      // r is strictly monotone: safeguarded Newton inside an expanding bracket.
      const double y = yv(0);
      if (!std::isfinite(y)) throw NumericalAbort("r_inv: non-finite argument", 0);
      double x = std::isfinite(guess(0)) ? guess(0) : 0.0;
      const double sign = sigma(scalar_vec(0.0))(0, 0) > 0 ? 1.0 : -1.0;
      auto residual = [&](double z) { return sign * ((*table)(z) - y); };
      double lo = x - 1.0, hi = x + 1.0;
      for (int k = 0; residual(lo) > 0.0; ++k) {
        lo -= std::ldexp(1.0, k);
        if (k > 60) throw NumericalAbort("r_inv: bracket search diverged", 0);
      }
      for (int k = 0; residual(hi) < 0.0; ++k) {
        hi += std::ldexp(1.0, k);
        if (k > 60) throw NumericalAbort("r_inv: bracket search diverged", 0);
      }
      for (int it = 0; it < 100; ++it) {
        const double f = residual(x);
        if (f == 0.0) return scalar_vec(x);
        if (f > 0.0) hi = x; else lo = x;
        double next = x - f * sign * sigma(scalar_vec(x))(0, 0);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-13 * std::max(1.0, std::abs(x))) return scalar_vec(next);
        x = next;
        if (hi - lo <= 1e-14 * std::max(1.0, std::abs(x))) return scalar_vec(x);
      }
      throw NumericalAbort("r_inv: Newton iteration did not converge", 0);
    };
    return t;
  }
  detail::require(static_cast<bool>(m.r), "build_transform: d >= 2 needs a closed-form r from model '" + m.name + "'");
  t.r = m.r;
  const auto grid = model_test_grid(m.d);
  for (const Vec& x : grid) {
    const MatGrad dr = SlowModel::finite_difference_gradient(
        [&](const Vec& z) -> Mat {
          Mat out(m.d, 1);
          out.col(0) = m.r(z);
          return out;
        },
        x, m.d);
    Mat jac(m.d, m.d);
    for (int k = 0; k < m.d; ++k) jac.col(k) = dr[static_cast<std::size_t>(k)].col(0);
    const double defect = (jac - m.sigma(x).inverse()).cwiseAbs().maxCoeff();
    detail::require(defect <= 1e-6, "build_transform: closed-form r of model '" + m.name +
                                        "' does not satisfy Dr = Sigma^{-1} (defect " + std::to_string(defect) + ")");
  }
  auto r = m.r;
  auto sigma = m.sigma;
  if (m.r_inv) {
    auto r_inv = m.r_inv;
    t.r_inv_from = [r_inv](const Vec& y, const Vec&) -> Vec { return r_inv(y); };
  } else {
    t.r_inv_from = [r, sigma](const Vec& y, const Vec& guess) -> Vec {
      Vec x = guess.allFinite() ? guess : Vec::Zero(y.size());
      for (int it = 0; it < 100; ++it) {
        const Vec f = r(x) - y;
        const Vec step = sigma(x) * f;
        x -= step;
        if (step.cwiseAbs().maxCoeff() <= 1e-13 * std::max(1.0, x.cwiseAbs().maxCoeff())) return x;
      }
      throw NumericalAbort("r_inv: Newton iteration did not converge", 0);
    };
  }
  return t;
}

// ---- discrete recursions ---------------------------------------------------

// Steps X_N(n+1/N) = X + N^{-1/2} Sigma(X) xi(n) + N^{-1} b(X, xi(n)) for
// n < steps, drawing xi from `next_xi`. Records every state.
template <class NextXi>
Path iterate_discrete_with(const SlowModel& m, NextXi&& next_xi, double n_per_unit, std::int64_t steps,
                           const Vec& x0) {
  const double inv_sqrt = 1.0 / std::sqrt(n_per_unit);
  const double inv = 1.0 / n_per_unit;
  Path p;
  p.grid.reserve(static_cast<std::size_t>(steps) + 1);
  p.values.reserve(static_cast<std::size_t>(steps) + 1);
  Vec x = x0;
  Vec xi(m.d);
  p.push(0.0, x);
  for (std::int64_t n = 0; n < steps; ++n) {
    next_xi(xi);
    x = x + inv_sqrt * (m.sigma(x) * xi) + inv * m.b(x, xi);
    if (!x.allFinite()) throw NumericalAbort("slow motion left the finite range", n);
    p.push(static_cast<double>(n + 1) * inv, x);
  }
  return p;
}

inline std::int64_t horizon_steps(double n_per_unit, double horizon) {
  detail::require(n_per_unit >= 1.0, "N must be >= 1");
  detail::require(horizon > 0.0, "horizon must be positive");
  return static_cast<std::int64_t>(std::floor(horizon * n_per_unit + 1e-9));
}

inline Path iterate_discrete(const SlowModel& m, const ProcessHandle& h, double n_per_unit, double horizon,
                             const Vec& x0, std::uint64_t path_index = 0) {
  detail::require(h.dimension() == m.d, "process and model dimensions differ");
  detail::require(x0.size() == m.d, "initial state has the wrong dimension");
  auto cursor = h.cursor(path_index);
  return iterate_discrete_with(m, [&](Vec& xi) { cursor.next(xi); }, n_per_unit,
                               horizon_steps(n_per_unit, horizon), x0);
}

// One step of the transformed recursion:
// Y + N^{-1/2} xi + N^{-1} (Sigma^{-1}(x) b(x, xi) + q(x, xi)), x = r^{-1}(Y).
struct TransformedStepper {
  const TransformHandle* t;
  const SlowModel* m;
  double inv_sqrt;
  double inv;
  Vec x_hint;

  Vec drift(const Vec& y, const Vec& xi) {
    if (t->identity && m->zero_drift) return Vec::Zero(m->d);
    const Vec x = t->r_inv_from(y, x_hint);
    x_hint = x;
    Vec out = t->q(x, xi);
    if (!m->zero_drift) out += t->Dr(x) * m->b(x, xi);
    return out;
  }

  Vec step(const Vec& y, const Vec& xi) { return y + inv_sqrt * xi + inv * drift(y, xi); }
};

template <class NextXi>
Path iterate_transformed_with(const TransformHandle& t, const SlowModel& m, NextXi&& next_xi, double n_per_unit,
                              std::int64_t steps, const Vec& y0) {
  TransformedStepper stepper{&t, &m, 1.0 / std::sqrt(n_per_unit), 1.0 / n_per_unit, t.r_inv(y0)};
  Path p;
  p.grid.reserve(static_cast<std::size_t>(steps) + 1);
  p.values.reserve(static_cast<std::size_t>(steps) + 1);
  Vec y = y0;
  Vec xi(m.d);
  p.push(0.0, y);
  for (std::int64_t n = 0; n < steps; ++n) {
    next_xi(xi);
    try {
      y = stepper.step(y, xi);
    } catch (const NumericalAbort& e) {
      throw NumericalAbort(e.what(), n);
    }
    if (!y.allFinite()) throw NumericalAbort("transformed recursion left the finite range", n);
    p.push(static_cast<double>(n + 1) * stepper.inv, y);
  }
  return p;
}

inline Path iterate_transformed(const TransformHandle& t, const SlowModel& m, const ProcessHandle& h,
                                double n_per_unit, double horizon, const Vec& y0, std::uint64_t path_index = 0) {
  detail::require(h.dimension() == m.d, "process and model dimensions differ");
  auto cursor = h.cursor(path_index);
  return iterate_transformed_with(t, m, [&](Vec& xi) { cursor.next(xi); }, n_per_unit,
                                  horizon_steps(n_per_unit, horizon), y0);
}

// sup_t |r(X(t)) - Y(t)| on a common grid.
inline double transform_gap(const Path& x, const Path& y, const TransformHandle& t) {
  detail::require(x.grid == y.grid, "transform_gap: paths are on different grids");
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, (t.r(x.values[k]) - y.values[k]).norm());
  return worst;
}

// ---- continuous time -----------------------------------------------------

// Roof-integrated drift b_hat(x, omega) = int_0^tau b(x, flow(u)) du for one roof interval.
inline Vec roof_integrated_drift(const SlowModel& model, const RoofStep& step, const Vec& x) {
  if (model.zero_drift) return Vec::Zero(model.d);
  if ((step.start - step.end).cwiseAbs().maxCoeff() == 0.0) return step.tau * model.b(x, step.start);
  Vec acc = Vec::Zero(model.d);
  for (int i = 0; i < model.d; ++i) {
    acc(i) = quad::gauss_legendre10([&](double u) { return model.b(x, step.value(u))(i); }, 0.0, step.tau);
  }
  return acc;
}


struct ContinuousRun {
  Path x;                        // X^eps at the roof times eps^2 Theta_n, and at T
  Path skeleton;                 // Y^eps(n eps^2) on the grid n eps^2
  std::vector<double> gap;       // Q(n) = sup_{Theta_n <= s < Theta_{n+1}} |Z^eps(s eps^2) - Y^eps(n eps^2)|
  std::vector<double> theta;     // Theta_0..Theta_steps
  std::int64_t steps = 0;        // roof intervals entered before T
  double max_gap = 0.0;
  Vec x_final;                   // X^eps(T)
};

// Integrates dX/dt = eps^{-1} Sigma(X) xi(t/eps^2) + b(X, xi(t/eps^2)) by RK4
// with substeps <= eps^2 min(tau)/16 that break at the roof times, and runs
// the skeleton recursion
// Y((n+1) eps^2) = Y + eps eta(n) + eps^2 Dr(r^{-1} Y) b_hat(r^{-1} Y, .)(n)
// alongside, in the coordinates of `t`.
inline ContinuousRun integrate_continuous(const SlowModel& m, const TransformHandle& t, const SuspensionSpec& s,
                                          double eps, double horizon, const Vec& x0, std::uint64_t path_index = 0,
                                          bool track_gap = true) {
  detail::require(eps > 0.0 && eps < 1.0, "integrate_continuous: eps must lie in (0, 1)");
  detail::require(horizon > 0.0, "integrate_continuous: horizon must be positive");
  detail::require(s.dimension() == m.d, "suspension and model dimensions differ");
  const double eps2 = eps * eps;
  const double min_tau = 1.0 / s.l_hat;
  const double max_sub = eps2 * min_tau / 16.0;
  detail::require(max_sub > 1e-300, "integrate_continuous: substep underflow");
  const double inv_eps = 1.0 / eps;
  SuspensionCursor cursor(s, path_index);
  ContinuousRun run;
  Vec x = x0;
  Vec y = t.r(x0);
  Vec hint = x0;
  double time = 0.0;
  run.x.push(0.0, x);
  run.skeleton.push(0.0, y);
  run.theta.push_back(0.0);
  auto rhs = [&](const Vec& state, const Vec& zeta) -> Vec {
    return inv_eps * (m.sigma(state) * zeta) + m.b(state, zeta);
  };
  for (std::int64_t n = 0; time < horizon - 1e-15; ++n) {
    const RoofStep step = cursor.next();
    const double real_len = eps2 * step.tau;
    const double end_time = std::min(horizon, time + real_len);
    const double span = end_time - time;
    const int substeps = std::max(1, static_cast<int>(std::ceil(span / max_sub - 1e-9)));
    const double h = span / substeps;
    double q = 0.0;
    if (track_gap) q = (t.r(x) - y).norm();
    for (int j = 0; j < substeps; ++j) {
      const double local = j * h / eps2;
      const double hs = h / eps2;
      const Vec z0 = step.value(local);
      const Vec zm = step.value(local + 0.5 * hs);
      const Vec z1 = step.value(local + hs);
      const Vec k1 = rhs(x, z0);
      const Vec k2 = rhs(x + 0.5 * h * k1, zm);
      const Vec k3 = rhs(x + 0.5 * h * k2, zm);
      const Vec k4 = rhs(x + h * k3, z1);
      x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite()) throw NumericalAbort("continuous slow motion left the finite range", n);
      if (track_gap && j + 1 < substeps) q = std::max(q, (t.r(x) - y).norm());
    }
    time = end_time;
    run.x.push(time, x);
    run.theta.push_back(step.theta + step.tau);
    if (track_gap) {
      run.gap.push_back(q);
      run.max_gap = std::max(run.max_gap, q);
    }
    // skeleton step
    Vec drift = Vec::Zero(m.d);
    if (!m.zero_drift) {
      const Vec xs = t.r_inv_from(y, hint);
      hint = xs;
      drift = t.Dr(xs) * roof_integrated_drift(m, step, xs);
    }
    y = y + eps * step.eta + eps2 * drift;
    run.skeleton.push(static_cast<double>(n + 1) * eps2, y);
    run.steps = n + 1;
  }
  run.x_final = x;
  return run;
}

}  // namespace fastslow
