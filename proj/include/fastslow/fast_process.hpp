#pragma once

// Stationary mixing fast motions: finite Markov chains (and i.i.d. symbols),
// expanding interval maps in symbolic form, Gaussian i.i.d. noise and
// recorded sample paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fastslow/error.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/quadrature.hpp"
#include "fastslow/rng.hpp"

namespace fastslow {

struct MarkovChainSpec {
  Eigen::MatrixXd transition;  // S x S, row-stochastic
  Eigen::VectorXd stationary;  // length S

  std::size_t states() const { return static_cast<std::size_t>(transition.rows()); }

  // Solves pi P = pi for an irreducible chain.
  static MarkovChainSpec from_transition(const Eigen::MatrixXd& p) {
    detail::require(p.rows() == p.cols() && p.rows() > 0, "transition matrix must be square and non-empty");
    const Eigen::Index s = p.rows();
    Eigen::MatrixXd system = p.transpose() - Eigen::MatrixXd::Identity(s, s);
    system.row(s - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s);
    rhs(s - 1) = 1.0;
    MarkovChainSpec spec;
    spec.transition = p;
    spec.stationary = system.fullPivLu().solve(rhs);
    return spec;
  }

  // Every row equals the law of a single symbol.
  static MarkovChainSpec iid(const Eigen::VectorXd& probabilities) {
    MarkovChainSpec spec;
    spec.stationary = probabilities;
    spec.transition = Eigen::VectorXd::Ones(probabilities.size()) * probabilities.transpose();
    return spec;
  }

  bool is_iid(double tol = 1e-15) const {
    for (Eigen::Index i = 0; i < transition.rows(); ++i) {
      if (max_abs(transition.row(i) - stationary.transpose()) > tol) return false;
    }
    return true;
  }

  void validate() const {
    const Eigen::Index s = transition.rows();
    detail::require(s > 0 && transition.cols() == s, "transition matrix must be square and non-empty");
    detail::require(stationary.size() == s, "stationary vector length must match the number of states");
    for (Eigen::Index i = 0; i < s; ++i) {
      for (Eigen::Index j = 0; j < s; ++j) {
        detail::require(transition(i, j) >= 0.0, "transition matrix has a negative entry in row " + std::to_string(i));
      }
      const double row_sum = transition.row(i).sum();
      detail::require(std::abs(row_sum - 1.0) <= 1e-12,
                      "row " + std::to_string(i) + " of the transition matrix sums to " + std::to_string(row_sum));
      detail::require(stationary(i) >= 0.0, "stationary vector has a negative entry");
    }
    detail::require(std::abs(stationary.sum() - 1.0) <= 1e-10, "stationary vector does not sum to 1");
    const double defect = max_abs(stationary.transpose() * transition - stationary.transpose());
    detail::require(defect <= 1e-10, "stationary vector is not invariant: |pi P - pi| = " + std::to_string(defect));
    // Primitive iff some power with exponent <= S^2 is strictly positive.
    Eigen::MatrixXd support = (transition.array() > 0.0).cast<double>().matrix();
    Eigen::MatrixXd power = support;
    bool primitive = false;
    for (Eigen::Index k = 1; k <= s * s; ++k) {
      if ((power.array() > 0.0).all()) {
        primitive = true;
        break;
      }
      power = ((power * support).array() > 0.0).cast<double>().matrix();
    }
    detail::require(primitive, "chain is reducible or periodic: no power P^k with k <= S^2 is strictly positive");
  }
};

// Observable g on chain states (table) or on the unit interval (function).
struct ObservableSpec {
  Eigen::MatrixXd table;                // row s = g(s); used by chain processes
  std::function<Vec(double)> function;  // used by interval maps
  int dimension = 1;
  double bound = 0.0;  // sup-norm per coordinate; 0 means "compute"
  bool centered = true;

  static ObservableSpec on_states(const Eigen::MatrixXd& table, bool centered = true) {
    ObservableSpec obs;
    obs.table = table;
    obs.dimension = static_cast<int>(table.cols());
    obs.centered = centered;
    return obs;
  }

  static ObservableSpec on_interval(std::function<Vec(double)> g, int dimension, bool centered = true,
                                    double bound = 0.0) {
    ObservableSpec obs;
    obs.function = std::move(g);
    obs.dimension = dimension;
    obs.centered = centered;
    obs.bound = bound;
    return obs;
  }
};

enum class MapKind { doubling, gauss };
enum class InvariantMeasure { lebesgue, gauss_measure };

struct IntervalMapSpec {
  MapKind map_kind = MapKind::doubling;
  InvariantMeasure invariant_measure = InvariantMeasure::lebesgue;
  double holder_exponent = 1.0;
  double holder_constant = 1.0;

  void validate() const {
    detail::require(holder_exponent > 0.0 && holder_exponent <= 1.0, "holder exponent must lie in (0, 1]");
    detail::require(holder_constant >= 0.0, "holder constant must be non-negative");
    const bool matches = (map_kind == MapKind::doubling && invariant_measure == InvariantMeasure::lebesgue) ||
                         (map_kind == MapKind::gauss && invariant_measure == InvariantMeasure::gauss_measure);
    detail::require(matches, "declared invariant measure is not preserved by the map");
  }
};

inline double gauss_density(double x) { return 1.0 / ((1.0 + x) * std::numbers::ln2); }

// Largest |g(x)-g(y)|/|x-y|^alpha over dyadic neighbours down to 2^-levels.
inline double holder_seminorm_estimate(const std::function<Vec(double)>& g, double alpha, int levels = 12) {
  double worst = 0.0;
  for (int k = 1; k <= levels; ++k) {
    const double h = std::ldexp(1.0, -k);
    const int count = 1 << k;
    Vec prev = g(0.0);
    for (int i = 1; i < count; ++i) {
      const Vec cur = g(i * h);
      worst = std::max(worst, (cur - prev).cwiseAbs().maxCoeff() / std::pow(h, alpha));
      prev = cur;
    }
  }
  return worst;
}

enum class ProcessKind { markov, iid, interval_map, gaussian, recorded };

inline const char* to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::markov: return "markov";
    case ProcessKind::iid: return "iid";
    case ProcessKind::interval_map: return "interval_map";
    case ProcessKind::gaussian: return "gaussian";
    case ProcessKind::recorded: return "recorded";
  }
  return "unknown";
}

namespace detail {

struct ProcessData {
  ProcessKind kind = ProcessKind::markov;
  std::uint64_t seed = 0;
  int dimension = 1;
  double bound = 0.0;
  int window = -1;  // >= 0: emits the conditional expectation on that window

  // chain / iid
  MarkovChainSpec chain;
  std::vector<Vec> values;                      // centered g(s)
  std::vector<std::vector<double>> cumulative;  // per-row CDF
  std::vector<double> stationary_cdf;
  std::vector<double> phi_table;                // phi bound for n = 0..size-1

  // interval maps
  IntervalMapSpec map;
  std::function<Vec(double)> g;  // centered

  // recorded
  Eigen::MatrixXd recorded;
};

inline int sample_cdf(const std::vector<double>& cdf, double u) {
  const int last = static_cast<int>(cdf.size()) - 1;
  for (int j = 0; j < last; ++j) {
    if (u < cdf[j]) return j;
  }
  return last;
}

inline std::vector<double> to_cdf(const Eigen::VectorXd& p) {
  std::vector<double> cdf(static_cast<std::size_t>(p.size()));
  double acc = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    acc += p(j);
    cdf[static_cast<std::size_t>(j)] = acc;
  }
  if (!cdf.empty()) cdf.back() = 1.0;
  return cdf;
}

// Max-row total variation bound for P^n: max_i sum_j |P^n_ij - pi_j|.
inline double row_tv_bound(const Eigen::MatrixXd& power, const Eigen::VectorXd& pi) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < power.rows(); ++i) {
    worst = std::max(worst, (power.row(i) - pi.transpose()).cwiseAbs().sum());
  }
  return worst;
}

// Average of g over [lo, lo + width) by a 64-node midpoint rule, optionally
// weighted by the Gauss density.
inline Vec cylinder_average(const std::function<Vec(double)>& g, double lo, double width, bool gauss_weight) {
  constexpr int kNodes = 64;
  const double h = width / kNodes;
  Vec acc = g(lo + 0.5 * h);
  double weight_sum = 1.0;
  if (gauss_weight) {
    const double w0 = 1.0 / (1.0 + lo + 0.5 * h);
    acc *= w0;
    weight_sum = w0;
  }
  for (int j = 1; j < kNodes; ++j) {
    const double x = lo + (j + 0.5) * h;
    const double w = gauss_weight ? 1.0 / (1.0 + x) : 1.0;
    acc += w * g(x);
    weight_sum += w;
  }
  return acc / weight_sum;
}

}  // namespace detail

// Public helper: conditional average of an observable over a cylinder interval.
inline Vec cylinder_average(const std::function<Vec(double)>& g, double lo, double width,
                            InvariantMeasure measure = InvariantMeasure::lebesgue) {
  return detail::cylinder_average(g, lo, width, measure == InvariantMeasure::gauss_measure);
}

// Sequential generator for one trajectory of a process. Obtained from
// ProcessHandle::cursor; the emitted sequence depends only on the handle's
// seed and the path index.
class ProcessCursor {
 public:
  ProcessCursor(std::shared_ptr<const detail::ProcessData> data, std::uint64_t path_index)
      : data_(std::move(data)), rng_(data_->seed, stream_id(StreamTag::process, path_index)) {
    const auto& d = *data_;
    switch (d.kind) {
      case ProcessKind::markov:
      case ProcessKind::iid:
        state_ = detail::sample_cdf(d.stationary_cdf, u32_uniform());
        break;
      case ProcessKind::interval_map:
        if (d.map.map_kind == MapKind::doubling) {
          word_ = rng_.next_u64();
          reservoir_ = rng_.next_u64();
          reservoir_bits_ = 64;
        } else {
          x_ = draw_gauss_point();
        }
        break;
      case ProcessKind::gaussian:
        break;
      case ProcessKind::recorded:
        detail::require(path_index == 0, "recorded processes hold a single path (index 0)");
        break;
    }
  }

  int dimension() const { return data_->dimension; }

  // Emits the next value and advances the underlying system.
  void next(Vec& out) {
    const auto& d = *data_;
    switch (d.kind) {
      case ProcessKind::markov:
      case ProcessKind::iid: {
        last_state_ = state_;
        out = d.values[static_cast<std::size_t>(state_)];
        state_ = detail::sample_cdf(d.cumulative[static_cast<std::size_t>(state_)], u32_uniform());
        break;
      }
      case ProcessKind::interval_map: {
        if (d.map.map_kind == MapKind::doubling) {
          last_word_ = word_;
          out = d.window >= 0 ? smoothed_doubling(d.window) : d.g(doubling_point(word_));
          if (reservoir_bits_ == 0) {
            reservoir_ = rng_.next_u64();
            reservoir_bits_ = 64;
          }
          word_ = (word_ << 1) | (reservoir_ >> 63);
          reservoir_ <<= 1;
          --reservoir_bits_;
        } else {
          last_x_ = x_;
          out = d.window >= 0 ? smoothed_gauss(d.window) : d.g(x_);
          const double inv = 1.0 / x_;
          x_ = inv - std::floor(inv);
          // Floating-point orbits can land on 0 (finite continued fraction); restart from the invariant law.
          if (!(x_ > 1e-300) || x_ >= 1.0) x_ = draw_gauss_point();
        }
        break;
      }
      case ProcessKind::gaussian: {
        out.resize(d.dimension);
        for (int i = 0; i < d.dimension; ++i) out(i) = rng_.normal();
        break;
      }
      case ProcessKind::recorded: {
        detail::require(position_ < d.recorded.rows(), "recorded path exhausted");
        out = d.recorded.row(position_).transpose();
        break;
      }
    }
    ++position_;
  }

  // Conditional expectation of the value just emitted on the window
  // F_{n-m, n+m}. Exact for chains, Gaussian and recorded sources
  // (value is measurable), cylinder average for interval maps.
  void smoothed(int m, Vec& out) const {
    const auto& d = *data_;
    if (d.kind == ProcessKind::interval_map) {
      out = d.map.map_kind == MapKind::doubling ? smoothed_doubling_word(last_word_, m) : smoothed_gauss_at(last_x_, m);
      return;
    }
    if (d.kind == ProcessKind::markov || d.kind == ProcessKind::iid) {
      out = d.values[static_cast<std::size_t>(last_state_)];
      return;
    }
    detail::require(false, "smoothed(): process has no symbolic access");
  }

  // Symbol of the value most recently emitted (chains only).
  int last_state() const { return last_state_; }
  std::int64_t position() const { return position_; }

 private:
  double u32_uniform() { return static_cast<double>(rng_.next_u32()) * 0x1.0p-32; }

  double draw_gauss_point() {
    // inverse CDF of the Gauss measure: F(x) = log2(1 + x)
    return std::exp2(rng_.uniform_open()) - 1.0;
  }

  static double doubling_point(std::uint64_t word) { return static_cast<double>(word >> 11) * 0x1.0p-53; }

  Vec smoothed_doubling(int m) const { return smoothed_doubling_word(word_, m); }
  Vec smoothed_gauss(int m) const { return smoothed_gauss_at(x_, m); }

  // The window F_{n-m,n+m} fixes binary digits n..n+m of the current point.
  Vec smoothed_doubling_word(std::uint64_t word, int m) const {
    const int depth = m + 1;
    if (depth >= 53) return data_->g(doubling_point(word));
    const double lo = std::ldexp(static_cast<double>(word >> (64 - depth)), -depth);
    return detail::cylinder_average(data_->g, lo, std::ldexp(1.0, -depth), false);
  }

  // Continued-fraction digit cylinder of depth m+1 containing x.
  Vec smoothed_gauss_at(double x, int m) const {
    const int depth = m + 1;
    if (depth > 20) return data_->g(x);
    double p_prev = 1.0, q_prev = 0.0, p = 0.0, q = 1.0;
    double y = x;
    for (int k = 0; k < depth; ++k) {
      if (!(y > 1e-12)) return data_->g(x);
      const double inv = 1.0 / y;
      const double a = std::floor(inv);
      if (a > 1e12) return data_->g(x);
      const double p_next = a * p + p_prev;
      const double q_next = a * q + q_prev;
      p_prev = p;
      q_prev = q;
      p = p_next;
      q = q_next;
      y = inv - a;
    }
    const double e1 = p / q;
    const double e2 = (p + p_prev) / (q + q_prev);
    const double lo = std::min(e1, e2);
    return detail::cylinder_average(data_->g, lo, std::abs(e2 - e1), true);
  }

  std::shared_ptr<const detail::ProcessData> data_;
  CounterRng rng_;
  std::int64_t position_ = 0;
  int state_ = 0;
  int last_state_ = 0;
  std::uint64_t word_ = 0;
  std::uint64_t last_word_ = 0;
  std::uint64_t reservoir_ = 0;
  int reservoir_bits_ = 0;
  double x_ = 0.5;
  double last_x_ = 0.5;
};

// Seeded, replayable stationary fast motion. Immutable; cheap to copy.
class ProcessHandle {
 public:
  ProcessHandle() = default;
  explicit ProcessHandle(std::shared_ptr<const detail::ProcessData> data) : data_(std::move(data)) {}

  ProcessKind kind() const { return data_->kind; }
  std::uint64_t seed() const { return data_->seed; }
  int dimension() const { return data_->dimension; }
  double bound() const { return data_->bound; }
  int window() const { return data_->window; }
  bool has_symbolic_access() const { return data_->kind != ProcessKind::recorded; }

  const MarkovChainSpec* chain() const {
    return (data_->kind == ProcessKind::markov || data_->kind == ProcessKind::iid) ? &data_->chain : nullptr;
  }
  const std::vector<Vec>& state_values() const { return data_->values; }
  const IntervalMapSpec* interval_map() const {
    return data_->kind == ProcessKind::interval_map ? &data_->map : nullptr;
  }
  const std::function<Vec(double)>& observable_function() const { return data_->g; }

  ProcessCursor cursor(std::uint64_t path_index = 0) const { return ProcessCursor(data_, path_index); }

  // Same process with a different seed.
  ProcessHandle reseeded(std::uint64_t seed) const {
    auto copy = std::make_shared<detail::ProcessData>(*data_);
    copy->seed = seed;
    return ProcessHandle(copy);
  }

  std::shared_ptr<const detail::ProcessData> data() const { return data_; }

  // Cached phi bound (chains); extends by matrix powers past the cache.
  double phi_bound(int n) const {
    const auto& d = *data_;
    if (d.kind == ProcessKind::iid || d.kind == ProcessKind::gaussian) return n >= 1 ? 0.0 : 1.0;
    if (d.kind == ProcessKind::markov) {
      if (n < static_cast<int>(d.phi_table.size())) return d.phi_table[static_cast<std::size_t>(n)];
      Eigen::MatrixXd power = Eigen::MatrixXd::Identity(d.chain.transition.rows(), d.chain.transition.rows());
      Eigen::MatrixXd base = d.chain.transition;
      for (int e = n; e > 0; e >>= 1) {
        if (e & 1) power = power * base;
        base = base * base;
      }
      return detail::row_tv_bound(power, d.chain.stationary);
    }
    if (d.kind == ProcessKind::interval_map) {
      // Digits of the doubling map are independent. For the Gauss map the
      // declared rate is the Gauss-Kuzmin-Wirsing constant.
      if (d.map.map_kind == MapKind::doubling) return n >= 1 ? 0.0 : 1.0;
      return std::min(1.0, 2.0 * std::pow(0.30366300289873265, n));
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

 private:
  std::shared_ptr<const detail::ProcessData> data_;
};

namespace detail {

inline void fill_chain(ProcessData& data, const MarkovChainSpec& spec, const ObservableSpec& obs) {
  spec.validate();
  detail::require(obs.table.rows() == static_cast<Eigen::Index>(spec.states()),
                  "observable table must have one row per state");
  detail::require(obs.table.cols() >= 1 && obs.table.cols() <= kMaxDim,
                  "observable dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
  data.chain = spec;
  data.dimension = static_cast<int>(obs.table.cols());
  Eigen::MatrixXd table = obs.table;
  if (obs.centered) {
    const Eigen::RowVectorXd mean = spec.stationary.transpose() * table;
    table.rowwise() -= mean;
  }
  data.values.clear();
  for (Eigen::Index s = 0; s < table.rows(); ++s) data.values.emplace_back(table.row(s).transpose());
  data.bound = obs.bound > 0.0 ? obs.bound : table.cwiseAbs().maxCoeff();
  data.cumulative.clear();
  for (Eigen::Index s = 0; s < spec.transition.rows(); ++s) {
    data.cumulative.push_back(to_cdf(spec.transition.row(s).transpose()));
  }
  data.stationary_cdf = to_cdf(spec.stationary);
  data.kind = spec.is_iid() ? ProcessKind::iid : ProcessKind::markov;
  data.phi_table.clear();
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(spec.transition.rows(), spec.transition.rows());
  for (int n = 0; n < 512; ++n) {
    data.phi_table.push_back(row_tv_bound(power, spec.stationary));
    power = power * spec.transition;
  }
}

}  // namespace detail

// Chain (or i.i.d. symbol) process xi(n) = g(state_n).
inline ProcessHandle make_process(const MarkovChainSpec& spec, const ObservableSpec& obs, std::uint64_t seed) {
  auto data = std::make_shared<detail::ProcessData>();
  data->seed = seed;
  detail::fill_chain(*data, spec, obs);
  return ProcessHandle(data);
}

inline ProcessHandle make_iid_process(const Eigen::VectorXd& probabilities, const ObservableSpec& obs,
                                      std::uint64_t seed) {
  return make_process(MarkovChainSpec::iid(probabilities), obs, seed);
}

// Interval map process xi(n) = g(F^n x), x drawn from the invariant law.
inline ProcessHandle make_process(const IntervalMapSpec& spec, const ObservableSpec& obs, std::uint64_t seed) {
  spec.validate();
  detail::require(static_cast<bool>(obs.function), "interval-map observables need a function");
  detail::require(obs.dimension >= 1 && obs.dimension <= kMaxDim,
                  "observable dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
  const double seminorm = holder_seminorm_estimate(obs.function, spec.holder_exponent);
  detail::require(seminorm <= spec.holder_constant * (1.0 + 1e-9),
                  "observable Holder seminorm " + std::to_string(seminorm) + " exceeds the declared constant " +
                      std::to_string(spec.holder_constant));
  auto data = std::make_shared<detail::ProcessData>();
  data->kind = ProcessKind::interval_map;
  data->seed = seed;
  data->dimension = obs.dimension;
  data->map = spec;
  const bool gauss = spec.invariant_measure == InvariantMeasure::gauss_measure;
  Vec mean = Vec::Zero(obs.dimension);
  if (obs.centered) {
    for (int i = 0; i < obs.dimension; ++i) {
      auto component = [&](double x) {
        const double w = gauss ? gauss_density(x) : 1.0;
        return w * obs.function(x)(i);
      };
      mean(i) = quad::adaptive(component, 0.0, 1.0, 1e-13);
    }
  }
  auto raw = obs.function;
  data->g = [raw, mean](double x) -> Vec { return raw(x) - mean; };
  if (obs.bound > 0.0) {
    data->bound = obs.bound;
  } else {
    // grid sup plus the Holder modulus over half a grid cell
    constexpr int kGrid = 1 << 14;
    double sup = 0.0;
    for (int j = 0; j <= kGrid; ++j) sup = std::max(sup, data->g(static_cast<double>(j) / kGrid).cwiseAbs().maxCoeff());
    data->bound = sup + spec.holder_constant * std::pow(0.5 / kGrid, spec.holder_exponent);
  }
  return ProcessHandle(data);
}

// i.i.d. N(0, I_d) noise; used as an all-Gaussian control.
inline ProcessHandle make_gaussian_process(int dimension, std::uint64_t seed) {
  detail::require(dimension >= 1 && dimension <= kMaxDim, "gaussian process dimension out of range");
  auto data = std::make_shared<detail::ProcessData>();
  data->kind = ProcessKind::gaussian;
  data->seed = seed;
  data->dimension = dimension;
  data->bound = std::numeric_limits<double>::infinity();
  return ProcessHandle(data);
}

// Wraps an externally produced sample path (rows = time). No symbolic access.
inline ProcessHandle make_recorded_process(const Eigen::MatrixXd& samples) {
  detail::require(samples.rows() > 0 && samples.cols() >= 1 && samples.cols() <= kMaxDim,
                  "recorded path must be non-empty with 1..4 columns");
  auto data = std::make_shared<detail::ProcessData>();
  data->kind = ProcessKind::recorded;
  data->dimension = static_cast<int>(samples.cols());
  data->recorded = samples;
  data->bound = samples.cwiseAbs().maxCoeff();
  return ProcessHandle(data);
}

// xi(0..n-1) of trajectory `path_index`, one row per time.
inline Eigen::MatrixXd sample_path(const ProcessHandle& h, std::int64_t n, std::uint64_t path_index = 0) {
  detail::require(n >= 1, "sample_path: n must be >= 1");
  Eigen::MatrixXd out(n, h.dimension());
  auto cursor = h.cursor(path_index);
  Vec v(h.dimension());
  for (std::int64_t k = 0; k < n; ++k) {
    cursor.next(v);
    out.row(k) = v.transpose();
  }
  return out;
}

// varsigma(n) = E xi(0) xi(n)^T = G^T diag(pi) P^n G.
inline Eigen::MatrixXd exact_covariance(const MarkovChainSpec& spec, const ObservableSpec& obs, int lag) {
  spec.validate();
  detail::require(lag >= 0, "exact_covariance: lag must be non-negative");
  const Eigen::MatrixXd& g = obs.table;
  detail::require(g.rows() == static_cast<Eigen::Index>(spec.states()), "observable table must have one row per state");
  const double mean_defect = max_abs(spec.stationary.transpose() * g);
  detail::require(mean_defect <= 1e-12,
                  "exact_covariance: observable is not centered (|E g| = " + std::to_string(mean_defect) + ")");
  Eigen::MatrixXd pg = g;
  for (int k = 0; k < lag; ++k) pg = spec.transition * pg;
  return g.transpose() * spec.stationary.asDiagonal() * pg;
}

// Centered copy of an observable table under pi.
inline ObservableSpec centered(const MarkovChainSpec& spec, const ObservableSpec& obs) {
  ObservableSpec out = obs;
  const Eigen::RowVectorXd mean = spec.stationary.transpose() * obs.table;
  out.table.rowwise() -= mean;
  out.centered = true;
  return out;
}

// Upper bound for 2*phi(n): max_i sum_j |P^n_ij - pi_j|.
inline double phi_coefficient(const MarkovChainSpec& spec, int n) {
  spec.validate();
  detail::require(n >= 0, "phi_coefficient: gap must be non-negative");
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(spec.transition.rows(), spec.transition.rows());
  Eigen::MatrixXd base = spec.transition;
  for (int e = n; e > 0; e >>= 1) {
    if (e & 1) power = power * base;
    base = base * base;
  }
  return detail::row_tv_bound(power, spec.stationary);
}

// rho(m) = sup ||xi - E(xi | F_{n-m,n+m})||: exact 0 for state functions,
// cylinder-diameter bound for Holder observables of interval maps.
inline double rho_coefficient(const ProcessHandle& h, int m) {
  detail::require(h.has_symbolic_access(), "rho_coefficient: process has no symbolic access");
  detail::require(m >= 0, "rho_coefficient: window must be non-negative");
  const IntervalMapSpec* map = h.interval_map();
  if (!map) return 0.0;
  if (map->map_kind == MapKind::doubling) {
    return map->holder_constant * std::pow(2.0, -map->holder_exponent * m);
  }
  // Depth m+1 continued-fraction cylinders have diameter <= 1/(F_{m+2} F_{m+3}).
  double f_prev = 1.0, f = 1.0;  // F_1, F_2
  for (int k = 2; k < m + 2; ++k) {
    const double next = f + f_prev;
    f_prev = f;
    f = next;
  }
  const double diameter = 1.0 / (f * (f + f_prev));
  return map->holder_constant * std::pow(diameter, map->holder_exponent);
}

// Handle emitting xi^{(m)}(n) = E(xi(n) | F_{n-m,n+m}).
inline ProcessHandle conditional_smooth(const ProcessHandle& h, int m) {
  detail::require(h.has_symbolic_access(), "conditional_smooth: process has no symbolic access");
  detail::require(m >= 0, "conditional_smooth: window must be non-negative");
  auto copy = std::make_shared<detail::ProcessData>(*h.data());
  copy->window = m;
  return ProcessHandle(copy);
}

}  // namespace fastslow
