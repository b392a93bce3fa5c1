#pragma once

// Block/gap decomposition of the fast sums, a randomized-quantile coupling of
// the block variables to Gaussian increments, Brownian assembly, and coupled
// (X_N, Xi_N) ensembles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fastslow/analysis.hpp"
#include "fastslow/coefficients.hpp"
#include "fastslow/error.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/limit_sde.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/parallel.hpp"
#include "fastslow/path.hpp"
#include "fastslow/rng.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/slow_motion.hpp"
#include "fastslow/stats.hpp"
#include "fastslow/suspension.hpp"

namespace fastslow {

inline constexpr double kDefaultKappa = 0.55;
inline constexpr double kWp = 1.0 / 20.0;

// ---- block scheme ----------------------------------------------------------

// Blocks [n_k, n_{k+1}) of length 3 m_N, each opening with a gap
// [n_k, l_k) of length 3 floor(m_N^{1/4}); k = 0..blocks-1. Steps from
// blocks * block_length up to total form an uncoupled remainder.
struct BlockScheme {
  double N = 0.0;
  double kappa = kDefaultKappa;
  double T = 1.0;
  std::int64_t m = 0;          // m_N
  std::int64_t window = 0;     // floor(m_N^{1/4}), smoothing window of the Q sums
  std::int64_t gap = 0;        // l_k - n_k
  std::int64_t length = 0;     // n_{k+1} - n_k
  std::int64_t total = 0;      // floor(T N)
  std::int64_t blocks = 0;

  std::int64_t start(std::int64_t k) const { return k * length; }
  std::int64_t gap_end(std::int64_t k) const { return k * length + gap; }
  std::int64_t end(std::int64_t k) const { return (k + 1) * length; }
  std::int64_t coupled_length() const { return length - gap; }
  std::int64_t remainder() const { return total - blocks * length; }
  // k_N(n) = max{k : n_k <= n}, capped at the number of complete blocks.
  std::int64_t block_of(std::int64_t n) const { return std::min(n / length, blocks); }
};

inline std::int64_t quarter_root_floor(std::int64_t m) {
  std::int64_t r = static_cast<std::int64_t>(std::floor(std::pow(static_cast<double>(m), 0.25)));
  while ((r + 1) * (r + 1) * (r + 1) * (r + 1) <= m) ++r;
  while (r > 0 && r * r * r * r > m) --r;
  return r;
}

inline std::int64_t block_m(double N, double kappa) {
  std::int64_t m = static_cast<std::int64_t>(std::floor(std::pow(N, 0.5 * (1.0 - kappa)) + 1e-12));
  return m;
}

inline BlockScheme build_scheme(double N, double kappa = kDefaultKappa, double T = 1.0) {
  if (!(kappa > 0.5 && kappa < 2.0 / 3.0)) {
    throw Rejected("kappa must lie in the open interval (1/2, 2/3); got " + std::to_string(kappa));
  }
  detail::require(T > 0.0, "build_scheme: horizon must be positive");
  detail::require(N >= 1.0, "build_scheme: N must be >= 1");
  BlockScheme s;
  s.N = N;
  s.kappa = kappa;
  s.T = T;
  s.m = block_m(N, kappa);
  if (s.m < 2) {
    double minimal = std::ceil(std::pow(2.0, 2.0 / (1.0 - kappa)));
    while (block_m(minimal, kappa) < 2) minimal += 1.0;
    throw Rejected("N = " + std::to_string(static_cast<long long>(N)) + " gives m_N < 2 at kappa = " +
                   std::to_string(kappa) + "; the minimal admissible N is " +
                   std::to_string(static_cast<long long>(minimal)));
  }
  s.window = quarter_root_floor(s.m);
  s.gap = 3 * s.window;
  s.length = 3 * s.m;
  s.total = horizon_steps(N, T);
  s.blocks = s.total / s.length;
  return s;
}

// A scheme with arbitrary block and gap lengths (gap == length gives an
// all-gap scheme). Used for tests and diagnostics.
inline BlockScheme custom_scheme(std::int64_t length, std::int64_t gap, std::int64_t total, double N) {
  detail::require(length >= 1 && gap >= 0 && gap <= length, "custom_scheme: need 0 <= gap <= length, length >= 1");
  detail::require(total >= 0, "custom_scheme: total must be non-negative");
  BlockScheme s;
  s.N = N;
  s.T = static_cast<double>(total) / N;
  s.m = std::max<std::int64_t>(1, length / 3);
  s.window = quarter_root_floor(s.m);
  s.gap = gap;
  s.length = length;
  s.total = total;
  s.blocks = total / length;
  return s;
}

// ---- block sums ------------------------------------------------------------

struct BlockData {
  std::vector<Vec> alpha;  // sum of xi^(m) over [n_k, n_{k+1})
  std::vector<Vec> beta;   // sum of frak_b(Y_{N,k-1}, xi^(m)) over the block
  std::vector<Vec> Q;      // sum of xi^(window) over [l_k, n_{k+1})
  std::vector<Vec> R1;     // block sum of xi^(m) - xi^(window)
  std::vector<Vec> R2;     // gap sum of xi^(m)
  std::vector<Vec> V;      // (n_{k+1} - l_k)^{-1/2} Q
};

using FrakB = std::function<Vec(const Vec& y, const Vec& zeta)>;

// frak_b(y, zeta) = Sigma^{-1} b(r^{-1} y, zeta) + q(r^{-1} y, zeta)
inline FrakB frak_b(const SlowModel& m, const TransformHandle& t) {
  return [&m, &t](const Vec& y, const Vec& zeta) -> Vec {
    if (t.identity && m.zero_drift) return Vec::Zero(m.d);
    const Vec x = t.r_inv(y);
    Vec out = t.q(x, zeta);
    if (!m.zero_drift) out += t.Dr(x) * m.b(x, zeta);
    return out;
  };
}

// xi_m and xi_w hold xi^(m_N)(n) and xi^(window)(n) row by row. frozen[k] is
// Y_{N,k-1} (Y(0) for k = 0).
inline BlockData block_sums(const Eigen::MatrixXd& xi_m, const Eigen::MatrixXd& xi_w, const BlockScheme& s,
                            const std::vector<Vec>& frozen, const FrakB& fb) {
  if (xi_m.rows() < s.total + s.m || xi_w.rows() < s.total + s.m) {
    throw Rejected("block_sums: path length " + std::to_string(std::min(xi_m.rows(), xi_w.rows())) +
                   " is shorter than floor(TN) + m_N = " + std::to_string(s.total + s.m));
  }
  detail::require(xi_m.cols() == xi_w.cols(), "block_sums: arrays have different dimensions");
  detail::require(static_cast<std::int64_t>(frozen.size()) >= s.blocks, "block_sums: one frozen state per block");
  const int d = static_cast<int>(xi_m.cols());
  BlockData out;
  for (std::int64_t k = 0; k < s.blocks; ++k) {
    Vec alpha = Vec::Zero(d), beta = Vec::Zero(d), q = Vec::Zero(d), r1 = Vec::Zero(d), r2 = Vec::Zero(d);
    for (std::int64_t n = s.start(k); n < s.end(k); ++n) {
      const Vec zm = xi_m.row(n).transpose();
      alpha += zm;
      beta += fb(frozen[static_cast<std::size_t>(k)], zm);
      if (n < s.gap_end(k)) {
        r2 += zm;
      } else {
        const Vec zw = xi_w.row(n).transpose();
        q += zw;
        r1 += zm - zw;
      }
    }
    out.alpha.push_back(alpha);
    out.beta.push_back(beta);
    out.Q.push_back(q);
    out.R1.push_back(r1);
    out.R2.push_back(r2);
    out.V.push_back(q / std::sqrt(static_cast<double>(s.coupled_length())));
  }
  return out;
}

struct CheckProcessResult {
  double defect = 0.0;  // sup_n |Y(n) - check(n_{k(n)})|
  double bound = 0.0;   // 6 (L + 6 L2)(1 + T) N^{-(kappa - 1/2)}
  double slack = 10.0;
  bool ok = false;
};

// Compares Y_N^(m) (values at integer steps 0..total) with the check process
// Y(0) + sum_{k < k_N(n)} (N^{-1/2} alpha_k + N^{-1} beta_k).
inline CheckProcessResult check_process(const std::vector<Vec>& y, const BlockData& data, const BlockScheme& s,
                                        double L, double L2, double slack = 10.0) {
  detail::require(static_cast<std::int64_t>(y.size()) >= s.total + 1, "check_process: Y path is too short");
  CheckProcessResult out;
  out.slack = slack;
  out.bound = 6.0 * (L + 6.0 * L2) * (1.0 + s.T) * std::pow(s.N, -(s.kappa - 0.5));
  const double inv_sqrt = 1.0 / std::sqrt(s.N), inv = 1.0 / s.N;
  std::vector<Vec> check;
  check.push_back(y.front());
  for (std::int64_t k = 0; k < s.blocks; ++k) {
    check.push_back(check.back() + inv_sqrt * data.alpha[static_cast<std::size_t>(k)] +
                    inv * data.beta[static_cast<std::size_t>(k)]);
  }
  for (std::int64_t n = 0; n <= s.total; ++n) {
    const Vec& c = check[static_cast<std::size_t>(s.block_of(n))];
    out.defect = std::max(out.defect, (y[static_cast<std::size_t>(n)] - c).norm());
  }
  out.ok = out.defect <= slack * out.bound;
  return out;
}

// L2 for frak_b on the model test grid: max of sup |frak_b| and its
// Lipschitz constant in y, with zeta at the corners of the box |zeta| <= bound.
inline double estimate_l2(const SlowModel& m, const TransformHandle& t, double zeta_bound) {
  const FrakB fb = frak_b(m, t);
  std::vector<Vec> corners;
  for (int mask = 0; mask < (1 << m.d); ++mask) {
    Vec z(m.d);
    for (int i = 0; i < m.d; ++i) z(i) = (mask >> i & 1) ? zeta_bound : -zeta_bound;
    corners.push_back(z);
  }
  double out = 0.0;
  constexpr double h = 1e-4;
  for (const Vec& x : model_test_grid(m.d)) {
    const Vec y = t.r(x);
    for (const Vec& z : corners) {
      const Vec base = fb(y, z);
      out = std::max(out, base.norm());
      for (int i = 0; i < m.d; ++i) {
        Vec yp = y;
        yp(i) += h;
        out = std::max(out, (fb(yp, z) - base).norm() / h);
      }
    }
  }
  return out;
}

// ---- quantile coupling -----------------------------------------------------

inline constexpr std::size_t kMinCouplingEnsemble = 1000;

// Randomized-quantile coupling of one block: coordinates are whitened by
// varsigma^{-1/2} (d >= 2), ranked with random tie-breaking, mapped through
// U = (rank + u) / E to Z = Phi^{-1}(U), and W = varsigma^{1/2} Z.
inline std::vector<Vec> quantile_couple(const std::vector<Vec>& v, const Eigen::MatrixXd& sigma, std::uint64_t seed,
                                        std::uint64_t block = 0) {
  if (v.size() < kMinCouplingEnsemble) {
    throw Rejected("quantile_couple: ensemble size " + std::to_string(v.size()) + " is below " +
                   std::to_string(kMinCouplingEnsemble));
  }
  const int d = static_cast<int>(v.front().size());
  detail::require(sigma.rows() == d && sigma.cols() == d, "quantile_couple: sigma has the wrong shape");
  const std::size_t E = v.size();
  bool degenerate = true;
  for (const Vec& x : v) {
    if ((x - v.front()).cwiseAbs().maxCoeff() != 0.0) {
      degenerate = false;
      break;
    }
  }
  if (degenerate) throw Rejected("quantile_couple: degenerate ensemble (all block variables equal)");
  const Mat root = psd_sqrt(sigma);
  const Mat whiten = d >= 2 ? psd_inverse_sqrt(sigma) : Mat::Identity(1, 1);
  CounterRng rng(seed, stream_id(StreamTag::coupling, block));
  std::vector<Vec> z(E, Vec::Zero(d));
  std::vector<double> value(E), key(E);
  std::vector<std::size_t> order(E);
  for (int i = 0; i < d; ++i) {
    for (std::size_t p = 0; p < E; ++p) {
      value[p] = d >= 2 ? whiten.row(i).dot(v[p]) : v[p](0);
      key[p] = rng.uniform();
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return value[a] < value[b] || (value[a] == value[b] && key[a] < key[b]);
    });
    for (std::size_t rank = 0; rank < E; ++rank) {
      const double u = (static_cast<double>(rank) + rng.uniform_open()) / static_cast<double>(E);
      z[order[rank]](i) = stats::normal_quantile(u);
    }
  }
  std::vector<Vec> w(E);
  for (std::size_t p = 0; p < E; ++p) w[p] = root * z[p];
  return w;
}

// ---- Brownian assembly -----------------------------------------------------

// Unit-variance increments W(n+1) - W(n), n = 0..steps-1 (steps >= total).
// Over [l_k, n_{k+1}) they sum to (n_{k+1} - l_k)^{1/2} varsigma^{-1/2} W_k
// through bridge increments; gaps and the remainder are fresh N(0, I).
inline Eigen::MatrixXd assemble_brownian(const std::vector<Vec>& w_blocks, const BlockScheme& s,
                                         const Eigen::MatrixXd& sigma, std::uint64_t seed,
                                         std::uint64_t path_index = 0, std::int64_t steps = -1) {
  detail::require(static_cast<std::int64_t>(w_blocks.size()) >= s.blocks, "assemble_brownian: missing block values");
  const int d = static_cast<int>(sigma.rows());
  if (steps < 0) steps = s.total;
  detail::require(steps >= s.total, "assemble_brownian: steps below the scheme length");
  CounterRng rng(seed, stream_id(StreamTag::brownian, path_index));
  Eigen::MatrixXd out(steps, d);
  for (Eigen::Index n = 0; n < out.rows(); ++n) {
    for (int i = 0; i < d; ++i) out(n, i) = rng.normal();
  }
  if (s.blocks == 0 || s.coupled_length() == 0) return out;
  const Mat inv_root = psd_inverse_sqrt(sigma);
  const double len = static_cast<double>(s.coupled_length());
  for (std::int64_t k = 0; k < s.blocks; ++k) {
    const Vec target = std::sqrt(len) * (inv_root * w_blocks[static_cast<std::size_t>(k)]);
    const auto rows = out.middleRows(s.gap_end(k), s.coupled_length());
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    for (std::int64_t n = s.gap_end(k); n < s.end(k); ++n) {
      out.row(n) += -mean + target.transpose() / len;
    }
  }
  return out;
}

// W_k = (n_{k+1} - l_k)^{-1/2} varsigma^{1/2} (W(n_{k+1}) - W(l_k))
inline std::vector<Vec> reconstruct_blocks(const Eigen::MatrixXd& increments, const BlockScheme& s,
                                           const Eigen::MatrixXd& sigma) {
  const Mat root = psd_sqrt(sigma);
  const double len = static_cast<double>(s.coupled_length());
  std::vector<Vec> out;
  for (std::int64_t k = 0; k < s.blocks; ++k) {
    const Vec sum = increments.middleRows(s.gap_end(k), s.coupled_length()).colwise().sum().transpose();
    out.push_back(root * sum / std::sqrt(len));
  }
  return out;
}

// ---- coupled ensembles -----------------------------------------------------

struct CouplingConfig {
  double N = 1024.0;
  double kappa = kDefaultKappa;
  int M = 1;
  double T = 1.0;
  std::size_t ensemble = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t keep_paths = 0;  // number of coupled pairs returned in full
};

struct CoupledPair {
  Path x_path;
  Path xi_path;
  std::vector<Vec> w_blocks;
  std::vector<Vec> v_blocks;
};

struct RhoBudget {
  double K = 0.0;      // (n - l)^{wp / (4 d)}
  double nu = 0.0;     // empirical CF gap of the block variables on |w| <= K
  double delta = 0.0;  // Gaussian mass outside |x| >= K / 2
  double rho = 0.0;    // 16 K^{-1} log K + 2 nu^{1/2} K^d + 2 delta^{1/2}
};

struct CouplingReport {
  BlockScheme scheme;
  int M = 1;
  std::size_t ensemble = 0;
  double moment = 0.0;  // E sup |X_N - Xi_N|^{2M}
  stats::Interval ci;
  double prokhorov = 0.0;
  double markov_bound = 0.0;  // moment^{1/(2M+1)}
  RhoBudget budget;
  std::vector<double> block_mean_diff;  // per block, mean over paths of |V_k - W_k|
  double mean_diff = 0.0;
  double max_block_diff = 0.0;
  std::vector<double> sup;    // per path sup distance
  std::vector<double> power;  // per path sup distance^{2M}
  std::vector<Vec> x_final;
  std::vector<Vec> xi_final;
  std::vector<CoupledPair> pairs;
};

namespace detail {

inline RhoBudget rho_budget(const std::vector<Vec>& pooled, const Eigen::MatrixXd& sigma, std::int64_t coupled_length) {
  RhoBudget b;
  const int d = static_cast<int>(sigma.rows());
  b.K = std::pow(static_cast<double>(coupled_length), kWp / (4.0 * d));
  if (!pooled.empty()) b.nu = empirical_cf_gap(pooled, sigma, b.K).gap;
  if (d == 1) {
    b.delta = 2.0 * (1.0 - stats::normal_cdf(0.5 * b.K / std::sqrt(sigma(0, 0))));
  } else {
    b.delta = std::min(1.0, 4.0 * sigma.trace() / (b.K * b.K));
  }
  b.rho = 16.0 / b.K * std::log(b.K) + 2.0 * std::sqrt(b.nu) * std::pow(b.K, d) + 2.0 * std::sqrt(b.delta);
  return b;
}

// Fills per-path block variables (block-major flat layout: (k * E + p) * d + i),
// couples each block, and returns the Gaussian block values in the same layout.
template <class BlockVariables>
std::vector<double> couple_blocks(const BlockScheme& s, std::size_t E, int d, const Eigen::MatrixXd& sigma,
                                  std::uint64_t seed, unsigned threads, BlockVariables&& fill,
                                  CouplingReport& report, std::vector<double>& v) {
  const std::size_t K = static_cast<std::size_t>(s.blocks);
  v.assign(K * E * static_cast<std::size_t>(d), 0.0);
  parallel_for(E, threads, [&](std::size_t p) {
    std::vector<Vec> local = fill(p);
    for (std::size_t k = 0; k < K; ++k) {
      for (int i = 0; i < d; ++i) v[(k * E + p) * d + i] = local[k](i);
    }
  });
  std::vector<double> w(v.size());
  report.block_mean_diff.assign(K, 0.0);
  parallel_for(K, threads, [&](std::size_t k) {
    std::vector<Vec> vb(E, Vec::Zero(d));
    for (std::size_t p = 0; p < E; ++p) {
      for (int i = 0; i < d; ++i) vb[p](i) = v[(k * E + p) * d + i];
    }
    const std::vector<Vec> wb = quantile_couple(vb, sigma, seed, k);
    double acc = 0.0;
    for (std::size_t p = 0; p < E; ++p) {
      acc += (vb[p] - wb[p]).norm();
      for (int i = 0; i < d; ++i) w[(k * E + p) * d + i] = wb[p](i);
    }
    report.block_mean_diff[k] = acc / static_cast<double>(E);
  });
  for (double x : report.block_mean_diff) {
    report.mean_diff += x / static_cast<double>(std::max<std::size_t>(K, 1));
    report.max_block_diff = std::max(report.max_block_diff, x);
  }
  // budget from a pooled subsample of block variables
  std::vector<Vec> pooled;
  const std::size_t stride = std::max<std::size_t>(1, K * E / 200000);
  for (std::size_t j = 0; j < K * E; j += stride) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = v[j * d + i];
    pooled.push_back(x);
  }
  report.budget = rho_budget(pooled, sigma, s.coupled_length());
  return w;
}

inline std::vector<Vec> path_blocks(const std::vector<double>& flat, std::size_t K, std::size_t E, int d,
                                    std::size_t p) {
  std::vector<Vec> out(K, Vec::Zero(d));
  for (std::size_t k = 0; k < K; ++k) {
    for (int i = 0; i < d; ++i) out[k](i) = flat[(k * E + p) * d + i];
  }
  return out;
}

inline void finish_report(CouplingReport& r, std::uint64_t seed) {
  r.power.resize(r.sup.size());
  for (std::size_t p = 0; p < r.sup.size(); ++p) r.power[p] = std::pow(r.sup[p], 2 * r.M);
  r.moment = stats::mean(r.power);
  r.ci = stats::bootstrap_mean_ci(r.power, seed);
  r.prokhorov = stats::strassen_prokhorov(r.sup);
  r.markov_bound = std::pow(r.moment, 1.0 / (2 * r.M + 1));
}

// Psi_{n+1} = Psi_n + varsigma^{1/2} h^{1/2} dW_n + drift(Psi_n) h, recorded on
// the grid n * h * time_scale.
inline Path run_psi(const SdeSpec& spec, const Eigen::MatrixXd& dw, const Vec& psi0, double h, double time_scale) {
  const Mat root = spec.diffusion(psi0);
  const double sq = std::sqrt(h);
  Path out;
  out.grid.reserve(static_cast<std::size_t>(dw.rows()) + 1);
  out.values.reserve(static_cast<std::size_t>(dw.rows()) + 1);
  Vec psi = psi0;
  out.push(0.0, psi);
  for (Eigen::Index n = 0; n < dw.rows(); ++n) {
    Vec next = psi + sq * (root * dw.row(n).transpose());
    if (!spec.driftless) next += h * spec.drift(psi);
    psi = next;
    if (!psi.allFinite()) throw NumericalAbort("coupled SDE left the finite range", n);
    out.push(static_cast<double>(n + 1) * h * time_scale, psi);
  }
  return out;
}

inline Path map_back(const Path& psi, const TransformHandle& t, const Vec& x0) {
  if (t.identity) return psi;
  Path out;
  Vec hint = x0;
  for (std::size_t k = 0; k < psi.size(); ++k) {
    hint = t.r_inv_from(psi.values[k], hint);
    out.push(psi.grid[k], hint);
  }
  return out;
}

}  // namespace detail

// Coupled ensemble for the discrete slow motion: X_N from the fast process
// and Xi_N = r^{-1}(Psi) with Psi driven by the assembled Brownian motion.
inline CouplingReport coupled_pair(const SlowModel& model, const ProcessHandle& h, const DiffusionCoefficients& dc,
                                   const TransformHandle& t, const CouplingConfig& cfg, const Vec& x0) {
  detail::require(h.dimension() == model.d && dc.d == model.d, "coupled_pair: dimensions differ");
  detail::require(x0.size() == model.d, "coupled_pair: initial state has the wrong dimension");
  detail::require(cfg.M >= 1, "coupled_pair: M must be >= 1");
  const BlockScheme s = build_scheme(cfg.N, cfg.kappa, cfg.T);
  const int d = model.d;
  const std::size_t E = cfg.ensemble;
  const std::size_t K = static_cast<std::size_t>(s.blocks);
  CouplingReport report;
  report.scheme = s;
  report.M = cfg.M;
  report.ensemble = E;
  const bool smooth = h.has_symbolic_access() && h.kind() == ProcessKind::interval_map;
  auto fill = [&](std::size_t p) {
    auto cursor = h.cursor(p);
    std::vector<Vec> out(K, Vec::Zero(d));
    Vec xi(d), xw(d);
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(K) * s.length; ++n) {
      cursor.next(xi);
      const std::int64_t k = n / s.length;
      if (n < s.gap_end(k)) continue;
      if (smooth) {
        cursor.smoothed(s.window, xw);
        out[static_cast<std::size_t>(k)] += xw;
      } else {
        out[static_cast<std::size_t>(k)] += xi;
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.coupled_length()));
    for (Vec& v : out) v *= scale;
    return out;
  };
  if (E < kMinCouplingEnsemble && K > 0) {
    throw Rejected("coupled_pair: ensemble size " + std::to_string(E) + " is below " +
                   std::to_string(kMinCouplingEnsemble));
  }
  std::vector<double> v;
  const std::vector<double> w = detail::couple_blocks(s, E, d, dc.sigma, cfg.seed, cfg.threads, fill, report, v);
  report.sup.assign(E, 0.0);
  report.x_final.assign(E, Vec::Zero(d));
  report.xi_final.assign(E, Vec::Zero(d));
  report.pairs.resize(std::min(cfg.keep_paths, E));
  const Vec psi0 = t.r(x0);
  parallel_for(E, cfg.threads, [&](std::size_t p) {
    const std::vector<Vec> wb = detail::path_blocks(w, K, E, d, p);
    const Eigen::MatrixXd dw = assemble_brownian(wb, s, dc.sigma, cfg.seed, p);
    const SdeSpec spec = transformed_sde(dc, model, t, 1.0 / s.N, static_cast<double>(s.total) / s.N);
    const Path xi_path = detail::map_back(detail::run_psi(spec, dw, psi0, 1.0 / s.N, 1.0), t, x0);
    auto cursor = h.cursor(p);
    const Path x_path = iterate_discrete_with(model, [&](Vec& z) { cursor.next(z); }, s.N, s.total, x0);
    double worst = 0.0;
    for (std::size_t n = 0; n < x_path.size(); ++n) worst = std::max(worst, (x_path.values[n] - xi_path.values[n]).norm());
    report.sup[p] = worst;
    report.x_final[p] = x_path.back();
    report.xi_final[p] = xi_path.back();
    if (p < report.pairs.size()) report.pairs[p] = {x_path, xi_path, wb, detail::path_blocks(v, K, E, d, p)};
  });
  detail::finish_report(report, cfg.seed);
  return report;
}

// Coupled ensemble in continuous time: blocks are formed on the skeleton
// sums eta(n) with N = eps^{-2}, X^eps is integrated along the flow, and the
// comparison is sup_{t <= T} |X^eps(t) - Xi(t / tau_bar)|.
inline CouplingReport coupled_pair_continuous(const SlowModel& model, const SuspensionSpec& susp,
                                              const DiffusionCoefficients& dc, const TransformHandle& t, double eps,
                                              const CouplingConfig& cfg, const Vec& x0) {
  detail::require(dc.mode == CoefficientMode::continuous, "coupled_pair_continuous: continuous coefficients required");
  detail::require(eps > 0.0 && eps < 1.0, "coupled_pair_continuous: eps must lie in (0, 1)");
  const double N = 1.0 / (eps * eps);
  const double tau_bar = susp.mean_roof;
  const BlockScheme s = build_scheme(N, cfg.kappa, cfg.T / tau_bar);
  const int d = model.d;
  const std::size_t E = cfg.ensemble;
  const std::size_t K = static_cast<std::size_t>(s.blocks);
  if (E < kMinCouplingEnsemble && K > 0) {
    throw Rejected("coupled_pair_continuous: ensemble size " + std::to_string(E) + " is below " +
                   std::to_string(kMinCouplingEnsemble));
  }
  CouplingReport report;
  report.scheme = s;
  report.M = cfg.M;
  report.ensemble = E;
  auto fill = [&](std::size_t p) {
    SuspensionCursor cursor(susp, p);
    std::vector<Vec> out(K, Vec::Zero(d));
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(K) * s.length; ++n) {
      const RoofStep step = cursor.next();
      const std::int64_t k = n / s.length;
      if (n >= s.gap_end(k)) out[static_cast<std::size_t>(k)] += step.eta;
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.coupled_length()));
    for (Vec& v : out) v *= scale;
    return out;
  };
  std::vector<double> v;
  const std::vector<double> w = detail::couple_blocks(s, E, d, dc.sigma, cfg.seed, cfg.threads, fill, report, v);
  report.sup.assign(E, 0.0);
  report.x_final.assign(E, Vec::Zero(d));
  report.xi_final.assign(E, Vec::Zero(d));
  report.pairs.resize(std::min(cfg.keep_paths, E));
  const Vec psi0 = t.r(x0);
  const std::int64_t steps = static_cast<std::int64_t>(std::ceil(cfg.T / tau_bar * N)) + 1;
  parallel_for(E, cfg.threads, [&](std::size_t p) {
    const std::vector<Vec> wb = detail::path_blocks(w, K, E, d, p);
    const Eigen::MatrixXd dw = assemble_brownian(wb, s, dc.sigma, cfg.seed, p, std::max(steps, s.total));
    const SdeSpec spec = transformed_sde(dc, model, t, 1.0 / N, static_cast<double>(dw.rows()) / N);
    Path xi_path = detail::map_back(detail::run_psi(spec, dw, psi0, 1.0 / N, tau_bar), t, x0);
    while (xi_path.size() > 1 && xi_path.grid[xi_path.size() - 2] >= cfg.T) {
      xi_path.grid.pop_back();
      xi_path.values.pop_back();
    }
    const ContinuousRun run = integrate_continuous(model, t, susp, eps, cfg.T, x0, p, false);
    report.sup[p] = sup_distance(run.x, xi_path);
    report.x_final[p] = run.x_final;
    report.xi_final[p] = xi_path.at(cfg.T);
    if (p < report.pairs.size()) report.pairs[p] = {run.x, xi_path, wb, detail::path_blocks(v, K, E, d, p)};
  });
  detail::finish_report(report, cfg.seed);
  return report;
}

// ---- skeleton gap check ---------------------------------------------------

struct SkeletonGapCheck {
  double worst_ratio = 0.0;  // max over n of max_{n' < n} Q(n') / bound(n)
  std::int64_t worst_n = 0;
  bool ok = true;
};

// bound(n) = eps (1 + eps) L L_hat exp(L^3 (L^2 + 1) L_hat n eps^2)
inline double skeleton_gap_bound(double eps, double L, double l_hat, std::int64_t n) {
  return eps * (1.0 + eps) * L * l_hat * std::exp(L * L * L * (L * L + 1.0) * l_hat * static_cast<double>(n) * eps * eps);
}

inline SkeletonGapCheck skeleton_gap_check(const ContinuousRun& run, double eps, double L, double l_hat,
                                           double slack = 10.0) {
  detail::require(!run.gap.empty(), "skeleton_gap_check: run has no tracked gaps");
  SkeletonGapCheck out;
  double running = 0.0;
  for (std::size_t n = 0; n < run.gap.size(); ++n) {
    running = std::max(running, run.gap[n]);
    const double ratio = running / skeleton_gap_bound(eps, L, l_hat, static_cast<std::int64_t>(n) + 1);
    if (ratio > out.worst_ratio) {
      out.worst_ratio = ratio;
      out.worst_n = static_cast<std::int64_t>(n) + 1;
    }
  }
  out.ok = out.worst_ratio <= slack;
  return out;
}

}  // namespace fastslow
