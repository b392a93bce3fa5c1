#pragma once

// Long-run covariances of the fast process and the diffusion coefficient
// fields of the limiting SDE.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fastslow/error.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/quadrature.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/slow_motion.hpp"
#include "fastslow/suspension.hpp"

namespace fastslow {

enum class Provenance { exact, estimated };

struct CovarianceSummary {
  std::vector<Eigen::MatrixXd> lags;  // varsigma(n) = E xi(0) xi(n)^T, n = 0..n_max
  Eigen::MatrixXd sigma;              // varsigma(0) + sum_{n=1}^{n_max} (varsigma(n) + varsigma(n)^T)
  Eigen::MatrixXd sigma_hat;          // sum_{n=1}^{n_max} varsigma(n)^T = sum_m E xi(m) xi(0)^T
  Eigen::MatrixXd zero_lag;           // E xi(0) xi(0)^T
  Provenance provenance = Provenance::exact;
  int n_max = 0;
  std::int64_t path_length = 0;
  double tail_bound = 0.0;           // bound on the truncation error of sigma (entrywise)
  Eigen::MatrixXd sigma_cesaro;      // Richardson-extrapolated double-sum form
  Eigen::MatrixXd sigma_cesaro_raw;  // plain double-sum form at k = n_max
  Eigen::MatrixXd sigma_se;          // batch-means standard errors (estimated mode)
  Eigen::MatrixXd sigma_hat_se;
  Eigen::MatrixXd zero_lag_se;
  double min_eigenvalue = 0.0;  // of sigma before clamping
  bool flagged = false;         // sigma indefinite beyond tolerance

  int dimension() const { return static_cast<int>(sigma.rows()); }
};

namespace detail {

// Plain double-sum (1/k) sum_{m,n=0}^{k} varsigma(n - m) with varsigma(-j) = varsigma(j)^T.
inline Eigen::MatrixXd cesaro_double_sum(const std::vector<Eigen::MatrixXd>& lags, int k) {
  detail::require(k >= 1 && static_cast<int>(lags.size()) > k, "cesaro_double_sum: not enough lags");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(lags[0].rows(), lags[0].cols());
  for (int m = 0; m <= k; ++m) {
    for (int n = 0; n <= k; ++n) {
      if (n >= m) {
        acc += lags[static_cast<std::size_t>(n - m)];
      } else {
        acc += lags[static_cast<std::size_t>(m - n)].transpose();
      }
    }
  }
  return acc / static_cast<double>(k);
}

// Richardson step 2 F(2k) - F(k) removes the O(1/k) term of the double sum.
inline Eigen::MatrixXd cesaro_extrapolated(const std::vector<Eigen::MatrixXd>& lags, int k) {
  return 2.0 * cesaro_double_sum(lags, 2 * k) - cesaro_double_sum(lags, k);
}

inline void finish_summary(CovarianceSummary& s) {
  const int d = static_cast<int>(s.lags[0].rows());
  s.zero_lag = s.lags[0];
  s.sigma = s.lags[0];
  s.sigma_hat = Eigen::MatrixXd::Zero(d, d);
  for (int n = 1; n <= s.n_max; ++n) {
    const Eigen::MatrixXd& c = s.lags[static_cast<std::size_t>(n)];
    s.sigma += c + c.transpose();
    s.sigma_hat += c.transpose();
  }
}

}  // namespace detail

// Entrywise bound on the truncation tail of sigma for a chain state
// function: |varsigma_ij(n)| <= L^2 max_s sum_t |P^n_st - pi_t|.
inline double chain_tail_bound(const MarkovChainSpec& chain, double l_bound, int n_max) {
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(chain.transition.rows(), chain.transition.rows());
  for (int n = 0; n <= n_max; ++n) power = power * chain.transition;
  double tail = 0.0;
  for (int n = n_max + 1; n < n_max + 20000; ++n) {
    const double term = 2.0 * l_bound * l_bound * detail::row_tv_bound(power, chain.stationary);
    tail += term;
    if (term < 1e-18 * std::max(1.0, tail)) break;
    power = power * chain.transition;
  }
  return tail;
}

// Tail bound from declared decay through |varsigma(n)| <= 2L(L phi(n/3) + rho(n/3)).
inline double declared_tail_bound(const std::function<double(int)>& phi, const std::function<double(int)>& rho,
                                  double l_bound, int n_max) {
  double tail = 0.0;
  for (int n = n_max + 1; n < n_max + 200000; ++n) {
    const int j = n / 3;
    const double term = 2.0 * 2.0 * l_bound * (l_bound * phi(j) + rho(j));
    tail += term;
    if (term < 1e-18 * std::max(1.0, tail)) break;
  }
  return tail;
}

// Exact summary for a centered chain observable.
inline CovarianceSummary covariance_summary(const MarkovChainSpec& chain, const ObservableSpec& obs,
                                            int n_max = 50) {
  detail::require(n_max >= 1, "covariance_summary: n_max must be >= 1");
  chain.validate();
  const Eigen::MatrixXd& g = obs.table;
  const double mean_defect = max_abs(chain.stationary.transpose() * g);
  detail::require(mean_defect <= 1e-12, "covariance_summary: observable is not centered");
  CovarianceSummary s;
  s.provenance = Provenance::exact;
  s.n_max = n_max;
  Eigen::MatrixXd pg = g;
  const Eigen::MatrixXd weighted = g.transpose() * chain.stationary.asDiagonal();
  for (int n = 0; n <= 2 * n_max; ++n) {
    s.lags.push_back(weighted * pg);
    pg = chain.transition * pg;
  }
  // independent symbols: every lag beyond zero vanishes identically
  if (chain.is_iid()) {
    for (std::size_t n = 1; n < s.lags.size(); ++n) s.lags[n].setZero();
  }
  s.sigma_cesaro_raw = detail::cesaro_double_sum(s.lags, n_max);
  s.sigma_cesaro = detail::cesaro_extrapolated(s.lags, n_max);
  s.lags.resize(static_cast<std::size_t>(n_max) + 1);
  detail::finish_summary(s);
  s.tail_bound = chain_tail_bound(chain, std::max(obs.bound, g.cwiseAbs().maxCoeff()), n_max);
  clamp_psd(s.sigma, &s.min_eigenvalue);
  s.flagged = s.min_eigenvalue < -1e-8;
  const int d = s.dimension();
  s.sigma_se = Eigen::MatrixXd::Zero(d, d);
  s.sigma_hat_se = Eigen::MatrixXd::Zero(d, d);
  s.zero_lag_se = Eigen::MatrixXd::Zero(d, d);
  return s;
}

inline CovarianceSummary covariance_summary(const ProcessHandle& h, int n_max = 50) {
  detail::require(h.chain() != nullptr, "exact covariance summary needs a chain process");
  Eigen::MatrixXd table(static_cast<Eigen::Index>(h.state_values().size()), h.dimension());
  for (std::size_t s = 0; s < h.state_values().size(); ++s) {
    table.row(static_cast<Eigen::Index>(s)) = h.state_values()[s].transpose();
  }
  ObservableSpec obs = ObservableSpec::on_states(table, false);
  obs.bound = h.bound();
  return covariance_summary(*h.chain(), obs, n_max);
}

// Closed-form long-run sums for a chain through the fundamental matrix
// Z = (I - P + 1 pi^T)^{-1}: sum_{n>=1} varsigma(n) = G^T D (Z - I) G when E g = 0.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> long_run_exact(const MarkovChainSpec& chain,
                                                                  const ObservableSpec& obs) {
  const Eigen::Index s = chain.transition.rows();
  const Eigen::MatrixXd pi_rows = Eigen::VectorXd::Ones(s) * chain.stationary.transpose();
  const Eigen::MatrixXd z =
      (Eigen::MatrixXd::Identity(s, s) - chain.transition + pi_rows).fullPivLu().inverse();
  const Eigen::MatrixXd& g = obs.table;
  const Eigen::MatrixXd d = chain.stationary.asDiagonal();
  const Eigen::MatrixXd zero = g.transpose() * d * g;
  const Eigen::MatrixXd forward = g.transpose() * d * (z - Eigen::MatrixXd::Identity(s, s)) * g;
  return {zero + forward + forward.transpose(), forward.transpose()};
}

struct DecayDeclaration {
  std::function<double(int)> phi;  // phi(n) bound
  std::function<double(int)> rho;  // rho(n) bound
  double bound = 1.0;              // L
};

// Summary estimated from one sample path (rows = time), no demeaning. Lags use
// all available pairs; standard errors come from `batches` batch means.
inline CovarianceSummary covariance_summary(const Eigen::MatrixXd& path, int n_max = 50,
                                            const std::optional<DecayDeclaration>& decay = std::nullopt,
                                            int batches = 50) {
  const auto len = path.rows();
  const int d = static_cast<int>(path.cols());
  detail::require(n_max >= 1, "covariance_summary: n_max must be >= 1");
  detail::require(len >= 20 * static_cast<Eigen::Index>(n_max) * std::max(1, batches),
                  "covariance_summary: path too short for the requested lag cap");
  auto lag_estimates = [&](Eigen::Index begin, Eigen::Index end, int max_lag) {
    std::vector<Eigen::MatrixXd> lags;
    for (int n = 0; n <= max_lag; ++n) {
      const Eigen::Index pairs = end - begin - n;
      Eigen::MatrixXd c =
          path.middleRows(begin, pairs).transpose() * path.middleRows(begin + n, pairs) / static_cast<double>(pairs);
      lags.push_back(c);
    }
    return lags;
  };
  CovarianceSummary s;
  s.provenance = Provenance::estimated;
  s.n_max = n_max;
  s.path_length = len;
  s.lags = lag_estimates(0, len, 2 * n_max);
  s.sigma_cesaro_raw = detail::cesaro_double_sum(s.lags, n_max);
  s.sigma_cesaro = detail::cesaro_extrapolated(s.lags, n_max);
  s.lags.resize(static_cast<std::size_t>(n_max) + 1);
  detail::finish_summary(s);

  // batch means
  const Eigen::Index batch_len = len / batches;
  Eigen::MatrixXd sum_sigma = Eigen::MatrixXd::Zero(d, d), sq_sigma = sum_sigma;
  Eigen::MatrixXd sum_hat = sum_sigma, sq_hat = sum_sigma, sum_zero = sum_sigma, sq_zero = sum_sigma;
  for (int b = 0; b < batches; ++b) {
    CovarianceSummary part;
    part.n_max = n_max;
    part.lags = lag_estimates(b * batch_len, (b + 1) * batch_len, n_max);
    detail::finish_summary(part);
    sum_sigma += part.sigma;
    sq_sigma += part.sigma.cwiseProduct(part.sigma);
    sum_hat += part.sigma_hat;
    sq_hat += part.sigma_hat.cwiseProduct(part.sigma_hat);
    sum_zero += part.zero_lag;
    sq_zero += part.zero_lag.cwiseProduct(part.zero_lag);
  }
  auto se = [&](const Eigen::MatrixXd& sum, const Eigen::MatrixXd& sq) {
    const double nb = batches;
    Eigen::MatrixXd var = (sq - sum.cwiseProduct(sum) / nb) / (nb - 1.0);
    return Eigen::MatrixXd(var.cwiseMax(0.0).cwiseSqrt() / std::sqrt(nb));
  };
  s.sigma_se = se(sum_sigma, sq_sigma);
  s.sigma_hat_se = se(sum_hat, sq_hat);
  s.zero_lag_se = se(sum_zero, sq_zero);
  if (decay) s.tail_bound = declared_tail_bound(decay->phi, decay->rho, decay->bound, n_max);
  s.sigma = clamp_psd(s.sigma, &s.min_eigenvalue);
  s.flagged = s.min_eigenvalue < -4.0 * s.sigma_se.maxCoeff() - 1e-8;
  return s;
}

// Estimated summary from a process handle: n steps of trajectory `path_index`.
inline CovarianceSummary estimate_covariance_summary(const ProcessHandle& h, std::int64_t n, int n_max = 50,
                                                     std::uint64_t path_index = 0) {
  const Eigen::MatrixXd path = sample_path(h, n, path_index);
  DecayDeclaration decay;
  decay.phi = [h](int j) { return 0.5 * h.phi_bound(j); };
  decay.rho = [h](int j) { return h.has_symbolic_access() ? rho_coefficient(h, j) : 0.0; };
  decay.bound = h.bound();
  return covariance_summary(path, n_max, decay);
}

// ||sigma_hat + sigma_hat^T - sigma + zero_lag||_inf
inline double identity_residual(const CovarianceSummary& s) {
  return max_abs(s.sigma_hat + s.sigma_hat.transpose() - s.sigma + s.zero_lag);
}

inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  if (m.rows() == 1 && m.cols() == 1) return m(0, 0);
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json to_json(const CovarianceSummary& s) {
  nlohmann::json lags = nlohmann::json::array();
  for (const auto& c : s.lags) {
    nlohmann::json flat = nlohmann::json::array();
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      for (Eigen::Index j = 0; j < c.cols(); ++j) flat.push_back(c(i, j));
    }
    lags.push_back(flat);
  }
  nlohmann::json provenance = {{"kind", s.provenance == Provenance::exact ? "exact" : "estimated"},
                               {"n_max", s.n_max}};
  if (s.provenance == Provenance::estimated) provenance["path_length"] = s.path_length;
  nlohmann::json out = {{"sigma", to_json(s.sigma)},
                        {"sigma_hat", to_json(s.sigma_hat)},
                        {"zero_lag", to_json(s.zero_lag)},
                        {"sigma_cesaro", to_json(s.sigma_cesaro)},
                        {"identity_residual", identity_residual(s)},
                        {"tail_bound", s.tail_bound},
                        {"min_eigenvalue", s.min_eigenvalue},
                        {"flagged", s.flagged},
                        {"lags", lags},
                        {"provenance", provenance}};
  if (s.provenance == Provenance::estimated) {
    out["sigma_se"] = to_json(s.sigma_se);
    out["sigma_hat_se"] = to_json(s.sigma_hat_se);
  }
  return out;
}

// ---- marginal laws -------------------------------------------------------

// Discrete stand-in for the law of xi(0): exact atoms for chains, a weighted
// midpoint grid for interval maps, an empirical sample otherwise.
struct MarginalLaw {
  std::vector<double> weight;
  std::vector<Vec> value;

  Eigen::MatrixXd second_moment() const {
    const int d = static_cast<int>(value.front().size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < value.size(); ++i) m += weight[i] * value[i] * value[i].transpose();
    return m;
  }
};

inline MarginalLaw marginal_law(const ProcessHandle& h, int grid = 4096) {
  MarginalLaw law;
  if (const MarkovChainSpec* chain = h.chain()) {
    for (std::size_t s = 0; s < h.state_values().size(); ++s) {
      law.weight.push_back(chain->stationary(static_cast<Eigen::Index>(s)));
      law.value.push_back(h.state_values()[s]);
    }
    return law;
  }
  if (const IntervalMapSpec* map = h.interval_map()) {
    const bool gauss = map->invariant_measure == InvariantMeasure::gauss_measure;
    double total = 0.0;
    for (int j = 0; j < grid; ++j) {
      const double x = (j + 0.5) / grid;
      const double w = gauss ? gauss_density(x) : 1.0;
      law.weight.push_back(w);
      law.value.push_back(h.observable_function()(x));
      total += w;
    }
    for (double& w : law.weight) w /= total;
    return law;
  }
  auto cursor = h.reseeded(h.seed() ^ 0x9e3779b97f4a7c15ull).cursor(0);
  Vec v(h.dimension());
  const std::int64_t n = h.kind() == ProcessKind::recorded ? std::min<std::int64_t>(grid, h.data()->recorded.rows())
                                                            : grid;
  for (std::int64_t k = 0; k < n; ++k) {
    cursor.next(v);
    law.weight.push_back(1.0 / static_cast<double>(n));
    law.value.push_back(v);
  }
  return law;
}

// ---- diffusion fields ----------------------------------------------------

enum class CoefficientMode { discrete, continuous };

struct DiffusionCoefficients {
  CoefficientMode mode = CoefficientMode::discrete;
  int d = 1;
  Eigen::MatrixXd sigma;            // varsigma
  Eigen::MatrixXd sigma_sqrt;       // varsigma^{1/2}
  Eigen::MatrixXd correction;       // sigma_hat, or sigma_hat + E eta eta^T / 2
  Eigen::MatrixXd zero_lag;         // E xi xi^T (or E eta eta^T)
  double mean_roof = 1.0;
  std::function<Mat(const Vec&)> a;
  std::function<Mat(const Vec&)> sigma_field;
  std::function<Vec(const Vec&)> c;
  std::function<Vec(const Vec&)> b_bar;

  Vec drift(const Vec& x) const { return b_bar(x) + c(x); }
};

// c_i(x) = sum_{j,k,l} dSigma_ij/dx_k S_jl Sigma_kl(x) = sum_k [(d_k Sigma) S Sigma^T]_{ik}
inline Vec ito_correction(const SlowModel& model, const Eigen::MatrixXd& s, const Vec& x) {
  const int d = model.d;
  const Mat sig = model.sigma(x);
  const MatGrad grad = model.gradient(x);
  Vec out = Vec::Zero(d);
  const Mat s_fixed = s;
  for (int k = 0; k < d; ++k) {
    const Mat term = grad[static_cast<std::size_t>(k)] * s_fixed * sig.transpose();
    out += term.col(k);
  }
  return out;
}

namespace detail {

inline DiffusionCoefficients make_fields(const SlowModel& model, const Eigen::MatrixXd& sigma,
                                         const Eigen::MatrixXd& correction, const Eigen::MatrixXd& zero_lag,
                                         CoefficientMode mode, std::function<Vec(const Vec&)> b_bar) {
  detail::require(sigma.rows() == model.d, "diffusion_fields: covariance dimension does not match the model");
  DiffusionCoefficients dc;
  dc.mode = mode;
  dc.d = model.d;
  dc.sigma = sigma;
  dc.sigma_sqrt = psd_sqrt(sigma, 1e-8);
  dc.correction = correction;
  dc.zero_lag = zero_lag;
  const Mat root = dc.sigma_sqrt;
  const Mat sig_mat = sigma;
  dc.sigma_field = [model, root](const Vec& x) -> Mat { return model.sigma(x) * root; };
  dc.a = [model, sig_mat](const Vec& x) -> Mat {
    const Mat s = model.sigma(x);
    return s * sig_mat * s.transpose();
  };
  const bool constant = model.constant_sigma;
  const int d = model.d;
  dc.c = [model, correction, constant, d](const Vec& x) -> Vec {
    if (constant) return Vec::Zero(d);
    return ito_correction(model, correction, x);
  };
  dc.b_bar = std::move(b_bar);
  return dc;
}

}  // namespace detail

// Discrete-time fields: a = Sigma varsigma Sigma^T, sigma = Sigma varsigma^{1/2},
// c from sigma_hat, b_bar(x) = E b(x, xi(0)) under `law`.
inline DiffusionCoefficients diffusion_fields(const SlowModel& model, const CovarianceSummary& s,
                                              const MarginalLaw& law) {
  const int d = model.d;
  const bool zero = model.zero_drift;
  auto b_bar = [model, law, zero, d](const Vec& x) -> Vec {
    if (zero) return Vec::Zero(d);
    Vec acc = Vec::Zero(d);
    for (std::size_t i = 0; i < law.value.size(); ++i) acc += law.weight[i] * model.b(x, law.value[i]);
    return acc;
  };
  return detail::make_fields(model, s.sigma, s.sigma_hat, s.zero_lag, CoefficientMode::discrete, b_bar);
}

// Continuous-time fields from the skeleton eta: varsigma and sigma_hat are
// those of eta, the correction uses sigma_hat + E eta eta^T / 2, and
// b_bar(x) = E b_hat(x, .). Requires the zero-lag eta moment.
inline DiffusionCoefficients diffusion_fields(const SlowModel& model, const CovarianceSummary& eta_summary,
                                              const std::optional<Eigen::MatrixXd>& eta_zero_lag,
                                              const SuspensionSpec& suspension) {
  detail::require(eta_zero_lag.has_value(), "continuous mode needs the zero-lag moment E eta eta^T");
  const Eigen::MatrixXd correction = eta_summary.sigma_hat + 0.5 * (*eta_zero_lag);
  const int d = model.d;
  std::function<Vec(const Vec&)> b_bar;
  if (model.zero_drift) {
    b_bar = [d](const Vec&) -> Vec { return Vec::Zero(d); };
  } else {
    detail::require(suspension.exact, "continuous b_bar needs a chain base");
    const EtaChain ec = eta_chain(suspension);
    std::vector<RoofStep> atoms;
    std::vector<double> weights;
    for (std::size_t a = 0; a < ec.roof.size(); ++a) {
      RoofStep st;
      st.tau = ec.roof[a];
      st.start = ec.start[a];
      st.end = ec.end[a];
      atoms.push_back(st);
      weights.push_back(ec.chain.stationary(static_cast<Eigen::Index>(a)));
    }
    b_bar = [model, atoms, weights, d](const Vec& x) -> Vec {
      Vec acc = Vec::Zero(d);
      for (std::size_t a = 0; a < atoms.size(); ++a) acc += weights[a] * roof_integrated_drift(model, atoms[a], x);
      return acc;
    };
  }
  DiffusionCoefficients dc =
      detail::make_fields(model, eta_summary.sigma, correction, *eta_zero_lag, CoefficientMode::continuous, b_bar);
  dc.mean_roof = suspension.mean_roof;
  return dc;
}

// Exact eta summary for a suspension over a chain.
inline CovarianceSummary eta_covariance_summary(const SuspensionSpec& s, int n_max = 50) {
  const EtaChain ec = eta_chain(s);
  ObservableSpec obs = ec.eta;
  obs.bound = obs.table.cwiseAbs().maxCoeff();
  return covariance_summary(ec.chain, obs, n_max);
}

}  // namespace fastslow
