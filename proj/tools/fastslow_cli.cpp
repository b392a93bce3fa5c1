#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "fastslow/analysis.hpp"
#include "fastslow/coupling.hpp"
#include "fastslow/experiment.hpp"
#include "fastslow/limit_sde.hpp"
#include "fastslow/path.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fastslow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::string sha1_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, data.data(), data.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

// Same address git assigns to a blob with this content.
std::string git_blob_address(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  return sha1_hex(blob + content);
}

struct Options {
  std::string config;
  std::string out;
  unsigned threads = default_threads();
  std::optional<std::uint64_t> seed;
  std::string format = "json";
  bool deterministic = false;
};

struct Output {
  std::string command;
  std::string experiment;
  std::string config_hash;
  std::string content_address;
  json rows = json::array();
  json report = json::object();

  void row(double scale, const std::string& statistic, double value, std::optional<double> se = std::nullopt) {
    json r = {{"experiment", experiment}, {"command", command},   {"scale", scale},
              {"statistic", statistic},   {"value", value},       {"config_hash", config_hash},
              {"content_address", content_address}};
    r["se"] = se ? json(*se) : json(nullptr);
    rows.push_back(r);
  }
};

std::string read_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file '" + file + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string output_directory(const Options& o, const ExperimentConfig& c) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("FASTSLOW_OUT_DIR"); env && *env) return env;
  return c.output_directory;
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

void write_output(const Output& out, const Options& o, const std::string& dir) {
  fs::create_directories(dir);
  const std::string base = (fs::path(dir) / out.command).string();
  if (o.format == "csv") {
    std::ofstream f(base + ".csv");
    f << "experiment,command,scale,statistic,value,se,config_hash,content_address\n";
    for (const auto& r : out.rows) {
      f << r["experiment"].get<std::string>() << ',' << out.command << ',' << format_number(r["scale"].get<double>())
        << ',' << r["statistic"].get<std::string>() << ',' << format_number(r["value"].get<double>()) << ','
        << (r["se"].is_null() ? std::string() : format_number(r["se"].get<double>())) << ',' << out.config_hash
        << ',' << out.content_address << '\n';
    }
  } else {
    json doc = {{"command", out.command},
                {"experiment", out.experiment},
                {"config_hash", out.config_hash},
                {"content_address", out.content_address},
                {"rows", out.rows},
                {"report", out.report}};
    if (!o.deterministic) {
      const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::ostringstream ts;
      ts << std::put_time(std::gmtime(&now), "%FT%TZ");
      doc["timestamp"] = ts.str();
    }
    std::ofstream f(base + ".json");
    f << doc.dump(2) << '\n';
  }
  std::cout << out.command << ": wrote " << out.rows.size() << " rows to " << base << '.' << o.format << '\n';
}

json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

std::string coord(const std::string& name, int i, int d) { return d == 1 ? name : name + "_" + std::to_string(i + 1); }

// ---- commands ---------------------------------------------------------------

void cmd_simulate(const Experiment& e, const Options& o, Output& out, const std::string& dir) {
  const auto& c = e.config;
  const int d = e.model.d;
  for (double scale : c.scales) {
    const std::size_t E = c.ensemble;
    std::vector<Vec> x(E), xi(E);
    std::vector<Path> kept(std::min(c.write_paths ? c.path_count : 0, E));
    const double tau_bar = c.continuous ? e.suspension->mean_roof : 1.0;
    const double sde_horizon = c.T / tau_bar;
    const double dt = std::min(c.dt, sde_horizon * 1e-2);
    SdeSpec probe = limit_sde(e.coefficients, e.model, dt, sde_horizon);
    probe.horizon = dt * std::round(sde_horizon / dt);
    const std::uint64_t sde_seed = derived_seed(c.seed, static_cast<std::uint64_t>(SeedPurpose::sde));
    parallel_for(E, o.threads, [&](std::size_t p) {
      Path path;
      if (c.continuous) {
        path = integrate_continuous(e.model, e.transform, *e.suspension, scale, c.T, e.x0, p, false).x;
      } else {
        path = iterate_discrete(e.model, e.process, scale, c.T, e.x0, p);
      }
      x[p] = path.back();
      xi[p] = euler_maruyama(probe, sde_seed, e.x0, p).back();
      if (p < kept.size()) kept[p] = std::move(path);
    });
    for (int i = 0; i < d; ++i) {
      std::vector<double> a(E), b(E), a2(E), b2(E);
      for (std::size_t p = 0; p < E; ++p) {
        a[p] = x[p](i);
        b[p] = xi[p](i);
      }
      const double ma = stats::mean(a), mb = stats::mean(b);
      for (std::size_t p = 0; p < E; ++p) {
        a2[p] = (a[p] - ma) * (a[p] - ma);
        b2[p] = (b[p] - mb) * (b[p] - mb);
      }
      out.row(scale, coord("mean_x", i, d), ma, stats::standard_error(a));
      out.row(scale, coord("var_x", i, d), stats::variance(a), stats::standard_error(a2));
      out.row(scale, coord("mean_xi", i, d), mb, stats::standard_error(b));
      out.row(scale, coord("var_xi", i, d), stats::variance(b), stats::standard_error(b2));
    }
    for (std::size_t p = 0; p < kept.size(); ++p) {
      fs::create_directories(dir);
      const std::string file = (fs::path(dir) / ("path_scale" + format_number(scale) + "_p" + std::to_string(p) + ".avlb")).string();
      write_block_file(file, path_matrix(kept[p]));
    }
  }
}

void cmd_coefficients(const Experiment& e, Output& out) {
  const json summary = to_json(e.summary);
  out.report = summary;
  const auto& dc = e.coefficients;
  out.report["mode"] = e.config.continuous ? "continuous" : "discrete";
  out.report["mean_roof"] = dc.mean_roof;
  out.report["x0"] = vec_json(e.x0);
  out.report["a_x0"] = to_json(Eigen::MatrixXd(dc.a(e.x0)));
  out.report["c_x0"] = vec_json(dc.c(e.x0));
  out.report["b_bar_x0"] = vec_json(dc.b_bar(e.x0));
  const int d = e.model.d;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::string idx = d == 1 ? "" : "_" + std::to_string(i + 1) + std::to_string(j + 1);
      const std::optional<double> se_sigma =
          e.summary.provenance == Provenance::estimated ? std::optional<double>(e.summary.sigma_se(i, j)) : std::nullopt;
      const std::optional<double> se_hat = e.summary.provenance == Provenance::estimated
                                               ? std::optional<double>(e.summary.sigma_hat_se(i, j))
                                               : std::nullopt;
      out.row(0.0, "sigma" + idx, e.summary.sigma(i, j), se_sigma);
      out.row(0.0, "sigma_hat" + idx, e.summary.sigma_hat(i, j), se_hat);
    }
  }
  out.row(0.0, "identity_residual", identity_residual(e.summary));
  out.row(0.0, "tail_bound", e.summary.tail_bound);
}

CouplingReport run_coupling(const Experiment& e, const Options& o, double scale) {
  const auto& c = e.config;
  CouplingConfig cfg;
  cfg.kappa = c.kappa;
  cfg.M = c.M;
  cfg.T = c.T;
  cfg.ensemble = c.ensemble;
  cfg.seed = derived_seed(c.seed, static_cast<std::uint64_t>(SeedPurpose::coupling));
  cfg.threads = o.threads;
  if (c.continuous) return coupled_pair_continuous(e.model, *e.suspension, e.coefficients, e.transform, scale, cfg, e.x0);
  cfg.N = scale;
  return coupled_pair(e.model, e.process, e.coefficients, e.transform, cfg, e.x0);
}

json coupling_json(const CouplingReport& r, double scale, bool continuous) {
  json blocks = json::array();
  for (double v : r.block_mean_diff) blocks.push_back(v);
  json j = {{"N", r.scheme.N},
            {"kappa", r.scheme.kappa},
            {"M", r.M},
            {"blocks", r.scheme.blocks},
            {"block_length", r.scheme.length},
            {"gap", r.scheme.gap},
            {"ensemble", r.ensemble},
            {"E_sup_2M", r.moment},
            {"CI", {r.ci.lo, r.ci.hi}},
            {"prokhorov", r.prokhorov},
            {"markov_bound", r.markov_bound},
            {"rho_m_budget", {{"K", r.budget.K}, {"nu", r.budget.nu}, {"delta", r.budget.delta}, {"rho", r.budget.rho}}},
            {"per_block_stats",
             {{"mean_abs_diff", r.mean_diff}, {"max_block_mean_abs_diff", r.max_block_diff}, {"per_block", blocks}}},
            {"conditional_law", "unconditional ensemble law used in the quantile transform"}};
  if (continuous) j["eps"] = scale;
  return j;
}

void cmd_couple(const Experiment& e, const Options& o, Output& out) {
  out.report["scales"] = json::array();
  for (double scale : e.config.scales) {
    const CouplingReport r = run_coupling(e, o, scale);
    out.report["scales"].push_back(coupling_json(r, scale, e.config.continuous));
    out.row(scale, "E_sup_2M", r.moment);
    out.row(scale, "prokhorov", r.prokhorov);
    out.row(scale, "mean_abs_block_diff", r.mean_diff);
    out.row(scale, "rho_m_budget", r.budget.rho);
  }
}

void cmd_converge(const Experiment& e, const Options& o, Output& out) {
  const auto& c = e.config;
  if (c.scales.size() < 4) throw ConfigError("config field 'scales' needs at least 4 entries for converge");
  std::vector<double> n_values, errors;
  std::vector<std::vector<double>> samples;
  out.report["scales"] = json::array();
  for (double scale : c.scales) {
    const CouplingReport r = run_coupling(e, o, scale);
    const double n = c.continuous ? 1.0 / (scale * scale) : scale;
    n_values.push_back(n);
    errors.push_back(r.moment);
    samples.push_back(r.power);
    out.row(scale, "E_sup_2M", r.moment);
    out.row(scale, "E_sup_2M_ci_lo", r.ci.lo);
    out.row(scale, "E_sup_2M_ci_hi", r.ci.hi);
    out.row(scale, "prokhorov", r.prokhorov);
    out.row(scale, "markov_bound", r.markov_bound);
    out.report["scales"].push_back(coupling_json(r, scale, c.continuous));
  }
  const DecayFit fit = decay_fit(n_values, errors, derived_seed(c.seed, 99), &samples);
  out.row(0.0, "delta_hat", fit.delta);
  out.row(0.0, "delta_ci_lo", fit.delta_ci.lo);
  out.row(0.0, "delta_ci_hi", fit.delta_ci.hi);
  out.report["fit"] = {{"delta_hat", fit.delta},
                       {"CI", {fit.delta_ci.lo, fit.delta_ci.hi}},
                       {"intercept", fit.intercept},
                       {"resamples", fit.resamples},
                       {"scale_unit", c.continuous ? "eps^-2" : "N"}};
}

void cmd_diagnose(const Experiment& e, const Options& o, Output& out) {
  const auto& dcfg = e.config.diagnose;
  const auto growth = moment_growth(e.process, dcfg.moments, dcfg.n_grid, dcfg.paths, o.threads);
  out.report["moment_growth"] = json::array();
  for (const auto& g : growth) {
    for (std::size_t k = 0; k < g.n.size(); ++k) {
      out.row(static_cast<double>(g.n[k]), "moment_ratio_M" + std::to_string(g.M), g.ratio[k], g.se[k]);
    }
    out.report["moment_growth"].push_back(
        {{"M", g.M}, {"spearman_rho", g.trend.rho}, {"p_positive", g.trend.p_positive}, {"bounded", g.bounded}});
  }
  out.report["cf_gap"] = json::array();
  std::uint64_t offset = 1ull << 40;
  for (std::int64_t n : dcfg.cf_n) {
    const CfGap gap = cf_gaussian_gap(e.process, n, e.summary.sigma, dcfg.cf_samples, o.threads, offset);
    offset += dcfg.cf_samples;
    out.row(static_cast<double>(n), "cf_gap", gap.gap, gap.se);
    out.report["cf_gap"].push_back(
        {{"n", n}, {"gap", gap.gap}, {"se", gap.se}, {"radius", gap.radius}, {"inconclusive", gap.inconclusive}});
  }
  const ModelCheck mc = check_model(e.model, std::isfinite(e.process.bound()) ? e.process.bound() : 4.0);
  out.report["model_check"] = {{"sigma_sup", mc.sigma_sup}, {"gradient_sup", mc.grad_sup}, {"inverse_sup", mc.inverse_sup}, {"b_sup", mc.b_sup}, {"symmetry_defect", mc.symmetry_defect}};
}

int run(const std::string& command, const Options& o) {
  try {
    ExperimentConfig c = parse_config(read_file(o.config));
    if (o.seed) {
      c.seed = *o.seed;
      c.raw["seed"] = *o.seed;
    }
    if (o.format != "json" && o.format != "csv") throw ConfigError("--format must be json or csv");
    const Experiment e = build_experiment(c);
    Output out;
    out.command = command;
    out.experiment = c.name;
    out.config_hash = sha1_hex(c.raw.dump());
    out.content_address = git_blob_address(ModelRegistry::instance().entry(c.model_name).description);
    const std::string dir = output_directory(o, c);
    if (command == "simulate") cmd_simulate(e, o, out, dir);
    if (command == "coefficients") cmd_coefficients(e, out);
    if (command == "converge") cmd_converge(e, o, out);
    if (command == "couple") cmd_couple(e, o, out);
    if (command == "diagnose") cmd_diagnose(e, o, out);
    write_output(out, o, dir);
    return kExitOk;
  } catch (const NumericalAbort& err) {
    std::cerr << "numerical abort: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const Rejected& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast-slow averaging experiments"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, CLI::App*>> commands;
  const std::pair<const char*, const char*> described[] = {
      {"simulate", "endpoint moments of X and of the limit SDE, optionally writing sample paths"},
      {"coefficients", "averaged drift and diffusion coefficients of the fast process"},
      {"converge", "coupling error per scale with the fitted decay exponent"},
      {"couple", "coupled pair of X and the limit SDE, with per-block statistics"},
      {"diagnose", "moment growth, characteristic function gaps and model checks"}};
  for (const auto& [name, help] : described) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "experiment config (JSON)")->required();
    sub->add_option("--out", o.out, "output directory (default: $FASTSLOW_OUT_DIR, then the config)");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "master seed, overriding the config");
    sub->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("--deterministic", o.deterministic, "omit the timestamp so reruns are byte-identical");
    commands.emplace_back(name, sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  for (const auto& [name, sub] : commands) {
    if (sub->parsed()) {
      if (sub->count("--seed") > 0) o.seed = seed;
      return run(name, o);
    }
  }
  return kExitConfig;
}
