#pragma once

// Experiment configuration: JSON text -> fast process, slow model, transform
// and coefficients, with diagnostics that name the offending field.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastslow/coefficients.hpp"
#include "fastslow/error.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/rng.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/slow_motion.hpp"
#include "fastslow/suspension.hpp"

namespace fastslow {

class ConfigError : public Rejected {
 public:
  using Rejected::Rejected;
};

struct DiagnoseConfig {
  std::vector<int> moments{1, 2};
  std::vector<std::int64_t> n_grid{256, 512, 1024, 2048, 4096};
  std::size_t paths = 2000;
  std::vector<std::int64_t> cf_n{64, 1024};
  std::size_t cf_samples = 100000;
};

struct ExperimentConfig {
  nlohmann::json raw;
  std::string name = "experiment";
  bool continuous = false;
  nlohmann::json process;
  nlohmann::json suspension;
  std::string model_name;
  nlohmann::json model_parameters = nlohmann::json::object();
  std::vector<double> scales;  // N, or eps in continuous mode
  double kappa = 0.55;
  int M = 1;
  double T = 1.0;
  std::size_t ensemble = 1000;
  std::uint64_t seed = 1;
  Vec x0;
  int n_max = 50;
  double dt = 1e-3;
  std::string output_directory = "out";
  bool write_paths = false;
  std::size_t path_count = 4;
  DiagnoseConfig diagnose;
};

namespace detail {

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(byte, text.size()), '\n'));
}

inline const nlohmann::json& field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("config field '" + path + key + "' is missing");
  return j.at(key);
}

template <class T>
T typed(const nlohmann::json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + path + "' has the wrong type");
  }
}

template <class T>
T optional_field(const nlohmann::json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return typed<T>(j.at(key), path + key);
}

inline Eigen::MatrixXd json_matrix(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError("config field '" + path + "' must be a non-empty array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (j.front().is_number()) {
    Eigen::MatrixXd out(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) out(i, 0) = typed<double>(j[static_cast<std::size_t>(i)], path);
    return out;
  }
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError("config field '" + path + "' must be a rectangular array");
    }
    for (Eigen::Index c = 0; c < cols; ++c) out(i, c) = typed<double>(row[static_cast<std::size_t>(c)], path);
  }
  return out;
}

// Named interval-map observables with their Holder data.
struct NamedObservable {
  std::function<Vec(double)> g;
  double exponent = 1.0;
  double constant = 1.0;
};

inline NamedObservable named_observable(const std::string& name, const std::string& path) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (name == "cos2pi") return {[](double x) { return scalar_vec(std::cos(two_pi * x)); }, 1.0, two_pi};
  if (name == "identity") return {[](double x) { return scalar_vec(x); }, 1.0, 1.0};
  if (name == "sqrt_tent") {
    return {[](double x) { return scalar_vec(std::sqrt(std::abs(x - 0.5))); }, 0.5, 1.0};
  }
  throw ConfigError("config field '" + path + "' names an unknown observable '" + name +
                    "' (known: cos2pi, identity, sqrt_tent)");
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  try {
    c.raw = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config is not valid JSON at line " + std::to_string(detail::line_of(text, e.byte)) + ": " +
                      e.what());
  }
  const auto& j = c.raw;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  c.name = detail::optional_field<std::string>(j, "name", "", c.name);
  const std::string mode = detail::optional_field<std::string>(j, "mode", "", "discrete");
  if (mode != "discrete" && mode != "continuous") {
    throw ConfigError("config field 'mode' must be 'discrete' or 'continuous'");
  }
  c.continuous = mode == "continuous";
  c.process = detail::field(j, "process", "");
  if (!c.process.is_object()) throw ConfigError("config field 'process' must be an object");
  detail::typed<std::string>(detail::field(c.process, "kind", "process."), "process.kind");
  if (c.continuous) {
    c.suspension = detail::field(j, "suspension", "");
    if (!c.suspension.is_object()) throw ConfigError("config field 'suspension' must be an object");
  }
  const auto& model = detail::field(j, "model", "");
  c.model_name = detail::typed<std::string>(detail::field(model, "name", "model."), "model.name");
  if (!ModelRegistry::instance().contains(c.model_name)) {
    throw ConfigError("config field 'model.name' names an unregistered model '" + c.model_name + "'");
  }
  if (model.contains("parameters")) {
    c.model_parameters = model.at("parameters");
    if (!c.model_parameters.is_object()) throw ConfigError("config field 'model.parameters' must be an object");
  }
  c.scales = detail::typed<std::vector<double>>(detail::field(j, "scales", ""), "scales");
  if (c.scales.empty()) throw ConfigError("config field 'scales' must be non-empty");
  for (std::size_t i = 0; i < c.scales.size(); ++i) {
    if (!(c.scales[i] > 0.0)) throw ConfigError("config field 'scales' must hold positive values");
    if (i > 0) {
      // N increases; eps decreases (so eps^{-2} increases)
      const bool ordered = c.continuous ? c.scales[i] < c.scales[i - 1] : c.scales[i] > c.scales[i - 1];
      if (!ordered) {
        throw ConfigError(c.continuous ? "config field 'scales' (eps) must be strictly decreasing"
                                       : "config field 'scales' (N) must be strictly increasing");
      }
    }
    if (c.continuous && c.scales[i] >= 1.0) throw ConfigError("config field 'scales' (eps) must lie in (0, 1)");
  }
  c.kappa = detail::optional_field<double>(j, "kappa", "", c.kappa);
  c.M = detail::optional_field<int>(j, "M", "", c.M);
  if (c.M < 1) throw ConfigError("config field 'M' must be >= 1");
  c.T = detail::optional_field<double>(j, "T", "", c.T);
  if (!(c.T > 0.0)) throw ConfigError("config field 'T' must be positive");
  c.ensemble = detail::optional_field<std::size_t>(j, "ensemble", "", c.ensemble);
  if (c.ensemble < 100) throw ConfigError("config field 'ensemble' must be >= 100");
  c.seed = detail::optional_field<std::uint64_t>(j, "seed", "", c.seed);
  c.n_max = detail::optional_field<int>(j, "n_max", "", c.n_max);
  if (c.n_max < 1) throw ConfigError("config field 'n_max' must be >= 1");
  c.dt = detail::optional_field<double>(j, "dt", "", c.dt);
  if (!(c.dt > 0.0)) throw ConfigError("config field 'dt' must be positive");
  if (j.contains("x0")) {
    const auto x = detail::typed<std::vector<double>>(j.at("x0"), "x0");
    if (x.empty() || x.size() > static_cast<std::size_t>(kMaxDim)) throw ConfigError("config field 'x0' has a bad length");
    c.x0 = Vec(static_cast<int>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) c.x0(static_cast<int>(i)) = x[i];
  }
  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    c.output_directory = detail::optional_field<std::string>(o, "directory", "outputs.", c.output_directory);
    c.write_paths = detail::optional_field<bool>(o, "paths", "outputs.", c.write_paths);
    c.path_count = detail::optional_field<std::size_t>(o, "path_count", "outputs.", c.path_count);
  }
  if (j.contains("diagnose")) {
    const auto& d = j.at("diagnose");
    c.diagnose.moments = detail::optional_field<std::vector<int>>(d, "moments", "diagnose.", c.diagnose.moments);
    c.diagnose.n_grid = detail::optional_field<std::vector<std::int64_t>>(d, "n_grid", "diagnose.", c.diagnose.n_grid);
    c.diagnose.paths = detail::optional_field<std::size_t>(d, "paths", "diagnose.", c.diagnose.paths);
    c.diagnose.cf_n = detail::optional_field<std::vector<std::int64_t>>(d, "cf_n", "diagnose.", c.diagnose.cf_n);
    c.diagnose.cf_samples = detail::optional_field<std::size_t>(d, "cf_samples", "diagnose.", c.diagnose.cf_samples);
  }
  return c;
}

// Per-purpose seeds fanned out from the master seed.
inline std::uint64_t derived_seed(std::uint64_t master, std::uint64_t purpose) {
  CounterRng rng(master, stream_id(StreamTag::analysis, purpose));
  return rng.next_u64();
}

enum class SeedPurpose : std::uint64_t { process = 1, coupling = 2, sde = 3 };

inline ProcessHandle build_process(const nlohmann::json& p, std::uint64_t seed) {
  const std::string kind = detail::typed<std::string>(p.at("kind"), "process.kind");
  auto values = [&]() { return detail::json_matrix(detail::field(p, "values", "process."), "process.values"); };
  try {
    if (kind == "markov") {
      const Eigen::MatrixXd P = detail::json_matrix(detail::field(p, "transition", "process."), "process.transition");
      return make_process(MarkovChainSpec::from_transition(P), ObservableSpec::on_states(values()), seed);
    }
    if (kind == "iid") {
      const Eigen::MatrixXd probs =
          detail::json_matrix(detail::field(p, "probabilities", "process."), "process.probabilities");
      return make_iid_process(probs.col(0), ObservableSpec::on_states(values()), seed);
    }
    if (kind == "gaussian") {
      return make_gaussian_process(detail::optional_field<int>(p, "dimension", "process.", 1), seed);
    }
    if (kind == "doubling" || kind == "gauss_map") {
      const std::string obs_name =
          detail::typed<std::string>(detail::field(p, "observable", "process."), "process.observable");
      const detail::NamedObservable obs = detail::named_observable(obs_name, "process.observable");
      IntervalMapSpec spec;
      spec.map_kind = kind == "doubling" ? MapKind::doubling : MapKind::gauss;
      spec.invariant_measure = kind == "doubling" ? InvariantMeasure::lebesgue : InvariantMeasure::gauss_measure;
      spec.holder_exponent = obs.exponent;
      spec.holder_constant = obs.constant;
      return make_process(spec, ObservableSpec::on_interval(obs.g, 1), seed);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Rejected& e) {
    throw ConfigError(std::string("config field 'process' is invalid: ") + e.what());
  }
  throw ConfigError("config field 'process.kind' must be one of markov, iid, gaussian, doubling, gauss_map");
}

inline SuspensionSpec build_suspension_from(const nlohmann::json& s, const ProcessHandle& base) {
  const auto roof = detail::typed<std::vector<double>>(detail::field(s, "roof", "suspension."), "suspension.roof");
  const double l_hat = detail::typed<double>(detail::field(s, "l_hat", "suspension."), "suspension.l_hat");
  const std::string interp = detail::optional_field<std::string>(s, "interpolation", "suspension.", "piecewise_constant");
  if (interp != "piecewise_constant" && interp != "linear") {
    throw ConfigError("config field 'suspension.interpolation' must be piecewise_constant or linear");
  }
  if (!base.chain()) throw ConfigError("config field 'suspension' needs a markov or iid base process");
  const std::vector<Vec>& states = base.state_values();
  if (roof.size() != states.size()) {
    throw ConfigError("config field 'suspension.roof' needs one value per chain state");
  }
  auto roof_fn = [states, roof](const Vec& v) {
    for (std::size_t a = 0; a < states.size(); ++a) {
      if ((states[a] - v).cwiseAbs().maxCoeff() == 0.0) return roof[a];
    }
    throw Rejected("roof queried at a value that is not a chain state");
  };
  try {
    return build_suspension(base, roof_fn, l_hat,
                            interp == "linear" ? FlowInterpolation::linear : FlowInterpolation::piecewise_constant);
  } catch (const Rejected& e) {
    throw ConfigError(std::string("config field 'suspension' is invalid: ") + e.what());
  }
}

// Everything a command needs, built once from a config.
struct Experiment {
  ExperimentConfig config;
  ProcessHandle process;
  std::optional<SuspensionSpec> suspension;
  SlowModel model;
  TransformHandle transform;
  CovarianceSummary summary;  // of xi, or of eta in continuous mode
  DiffusionCoefficients coefficients;
  Vec x0;
};

inline Experiment build_experiment(const ExperimentConfig& c) {
  Experiment e;
  e.config = c;
  e.process = build_process(c.process, derived_seed(c.seed, static_cast<std::uint64_t>(SeedPurpose::process)));
  double zeta_bound = e.process.bound();
  if (c.continuous) {
    e.suspension = build_suspension_from(c.suspension, e.process);
    const EtaChain ec = eta_chain(*e.suspension);
    zeta_bound = ec.eta.table.cwiseAbs().maxCoeff();
    for (const Vec& v : ec.start) zeta_bound = std::max(zeta_bound, v.cwiseAbs().maxCoeff());
  }
  if (!std::isfinite(zeta_bound)) zeta_bound = 4.0;  // Gaussian noise: fit L on a 4-sigma box
  try {
    nlohmann::json params = c.model_parameters;
    if (!params.contains("dimension") && e.process.dimension() > 1) params["dimension"] = e.process.dimension();
    e.model = make_model(c.model_name, params, zeta_bound);
  } catch (const Rejected& err) {
    throw ConfigError(std::string("config field 'model' is invalid: ") + err.what());
  }
  if (e.model.d != e.process.dimension()) {
    throw ConfigError("config field 'model' has dimension " + std::to_string(e.model.d) +
                      " but the process has dimension " + std::to_string(e.process.dimension()));
  }
  e.x0 = c.x0.size() == 0 ? Vec(Vec::Zero(e.model.d)) : c.x0;
  if (e.x0.size() != e.model.d) throw ConfigError("config field 'x0' does not match the model dimension");
  try {
    e.transform = build_transform(e.model);
  } catch (const Rejected& err) {
    throw ConfigError(std::string("config field 'model' admits no transform: ") + err.what());
  }
  if (c.continuous) {
    e.summary = eta_covariance_summary(*e.suspension, c.n_max);
    e.coefficients = diffusion_fields(e.model, e.summary, e.summary.zero_lag, *e.suspension);
  } else {
    if (e.process.chain()) {
      e.summary = covariance_summary(e.process, c.n_max);
    } else if (e.process.kind() == ProcessKind::gaussian) {
      const int d = e.process.dimension();
      e.summary.lags.assign(static_cast<std::size_t>(c.n_max) + 1, Eigen::MatrixXd::Zero(d, d));
      e.summary.lags[0] = Eigen::MatrixXd::Identity(d, d);
      e.summary.n_max = c.n_max;
      detail::finish_summary(e.summary);
      e.summary.sigma_cesaro = e.summary.sigma;
      e.summary.sigma_cesaro_raw = e.summary.sigma;
    } else {
      e.summary = estimate_covariance_summary(e.process, 1 << 20, c.n_max);
    }
    e.coefficients = diffusion_fields(e.model, e.summary, marginal_law(e.process));
  }
  return e;
}

}  // namespace fastslow
