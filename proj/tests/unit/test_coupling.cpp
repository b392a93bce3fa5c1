#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fastslow/analysis.hpp"
#include "fastslow/coefficients.hpp"
#include "fastslow/coupling.hpp"
#include "fastslow/experiment.hpp"
#include "fastslow/stats.hpp"

using namespace fastslow;

namespace {

ProcessHandle k2(std::uint64_t seed) {
  Eigen::MatrixXd P(2, 2);
  P << 0.75, 0.25, 0.25, 0.75;
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  return make_process(MarkovChainSpec::from_transition(P), ObservableSpec::on_states(g), seed);
}

ProcessHandle rademacher(std::uint64_t seed) {
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  return make_iid_process(Eigen::Vector2d(0.5, 0.5), ObservableSpec::on_states(g), seed);
}

CouplingReport unit_sigma_report(const ProcessHandle& h, double N, std::size_t ensemble, double T = 1.0) {
  const SlowModel m = constant_model(1, 1.0);
  const auto dc = diffusion_fields(m, covariance_summary(h, 60), marginal_law(h));
  CouplingConfig cfg;
  cfg.N = N;
  cfg.T = T;
  cfg.ensemble = ensemble;
  cfg.seed = 17;
  cfg.threads = default_threads();
  return coupled_pair(m, h, dc, build_transform(m), cfg, scalar_vec(0.0));
}

}  // namespace

TEST(BlockScheme, ArithmeticAtTwoToSixteen) {
  const BlockScheme s = build_scheme(65536.0, 0.55, 1.0);
  EXPECT_EQ(s.m, 12);
  EXPECT_EQ(s.length, 36);
  EXPECT_EQ(s.end(0), 36);
  EXPECT_EQ(s.blocks, 1820);
  EXPECT_EQ(s.window, 1);
  EXPECT_EQ(s.gap, 3);
  EXPECT_EQ(s.remainder(), 65536 - 1820 * 36);
}

TEST(BlockScheme, KappaOutsideOpenIntervalRejected) {
  EXPECT_THROW(build_scheme(65536.0, 0.5), Rejected);
  EXPECT_THROW(build_scheme(65536.0, 2.0 / 3.0), Rejected);
}

TEST(BlockScheme, TooSmallNNamesMinimum) {
  try {
    build_scheme(8.0);
    FAIL();
  } catch (const Rejected& e) {
    EXPECT_NE(std::string(e.what()).find("minimal admissible N"), std::string::npos);
  }
}

TEST(BlockSums, K2AlphaAreRawBlockSums) {
  const auto h = k2(3);
  const BlockScheme s = build_scheme(4096.0);
  const Eigen::MatrixXd xi = sample_path(h, s.total + s.m, 1);
  const SlowModel m = constant_model(1, 1.0);
  const TransformHandle t = build_transform(m);
  const std::vector<Vec> frozen(static_cast<std::size_t>(s.blocks), scalar_vec(0.0));
  const BlockData data = block_sums(xi, xi, s, frozen, frak_b(m, t));
  for (std::int64_t k = 0; k < s.blocks; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    EXPECT_EQ(data.alpha[kk](0), xi.middleRows(s.start(k), s.length).sum());
    EXPECT_EQ(data.beta[kk](0), 0.0);
    EXPECT_EQ(data.R1[kk](0), 0.0);
    EXPECT_DOUBLE_EQ(data.R2[kk](0) + data.Q[kk](0), data.alpha[kk](0));
  }
  EXPECT_THROW(block_sums(xi.topRows(s.total), xi, s, frozen, frak_b(m, t)), Rejected);
}

TEST(CheckProcess, K2UnitSigmaIsWithinBound) {
  const auto h = k2(4);
  const BlockScheme s = build_scheme(16384.0);
  const Eigen::MatrixXd xi = sample_path(h, s.total + s.m, 2);
  const SlowModel m = constant_model(1, 1.0);
  const TransformHandle t = build_transform(m);
  std::vector<Vec> y{scalar_vec(0.0)};
  for (std::int64_t n = 0; n < s.total; ++n) y.push_back(y.back() + scalar_vec(xi(n, 0) / std::sqrt(s.N)));
  const std::vector<Vec> frozen(static_cast<std::size_t>(s.blocks), scalar_vec(0.0));
  const BlockData data = block_sums(xi, xi, s, frozen, frak_b(m, t));
  const CheckProcessResult r = check_process(y, data, s, 1.0, 0.0);
  EXPECT_TRUE(r.ok);
  // inside a block the defect is a partial block sum: at most 3 m_N / sqrt(N)
  EXPECT_LE(r.defect, static_cast<double>(s.length + s.remainder()) / std::sqrt(s.N) + 1e-12);
}

TEST(QuantileCouple, GaussianSelfCoupling) {
  CounterRng rng(5, 0);
  const double sigma = 3.0;
  std::vector<Vec> v(10000);
  for (auto& x : v) x = scalar_vec(std::sqrt(sigma) * rng.normal());
  const auto w = quantile_couple(v, Eigen::MatrixXd::Constant(1, 1, sigma), 6);
  double diff = 0.0;
  for (std::size_t p = 0; p < v.size(); ++p) diff += std::abs(v[p](0) - w[p](0));
  EXPECT_LE(diff / v.size(), 0.05 * std::sqrt(sigma));
}

TEST(QuantileCouple, FairCoinAgainstBruteForce) {
  std::vector<Vec> v(20000);
  for (std::size_t p = 0; p < v.size(); ++p) v[p] = scalar_vec(p % 2 ? 1.0 : -1.0);
  const auto w = quantile_couple(v, Eigen::MatrixXd::Identity(1, 1), 7);
  double diff = 0.0;
  for (std::size_t p = 0; p < v.size(); ++p) {
    EXPECT_EQ(w[p](0) > 0.0, v[p](0) > 0.0);
    diff += std::abs(v[p](0) - w[p](0));
  }
  // brute force: E|1 - |Z|| with Z standard normal, 1e7 samples
  CounterRng rng(8, 0);
  double brute = 0.0;
  const int n = 10000000;
  for (int i = 0; i < n; ++i) brute += std::abs(1.0 - std::abs(rng.normal()));
  brute /= n;
  EXPECT_NEAR(diff / v.size(), brute, 4.0 * 0.6 / std::sqrt(20000.0));
}

TEST(QuantileCouple, DiagonalSigmaCouplesCoordinatesIndependently) {
  CounterRng rng(9, 0);
  std::vector<Vec> v(20000);
  for (auto& x : v) {
    x = Vec(2);
    x << (rng.uniform() < 0.5 ? -1.0 : 1.0), 2.0 * rng.normal();
  }
  Eigen::MatrixXd sigma = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  const auto w = quantile_couple(v, sigma, 10);
  std::vector<double> cross(v.size());
  for (std::size_t p = 0; p < v.size(); ++p) cross[p] = w[p](0) * w[p](1);
  EXPECT_NEAR(stats::mean(cross), 0.0, 4.0 * stats::standard_error(cross));
}

TEST(QuantileCouple, RejectsSmallOrDegenerateEnsembles) {
  EXPECT_THROW(quantile_couple(std::vector<Vec>(999, scalar_vec(1.0)), Eigen::MatrixXd::Identity(1, 1), 1), Rejected);
  EXPECT_THROW(quantile_couple(std::vector<Vec>(2000, scalar_vec(1.0)), Eigen::MatrixXd::Identity(1, 1), 1), Rejected);
}

TEST(AssembleBrownian, ReconstructsBlockValues) {
  const BlockScheme s = custom_scheme(40, 0, 40, 40.0);
  const Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(1, 1, 3.0);
  const std::vector<Vec> w{scalar_vec(0.731)};
  const Eigen::MatrixXd inc = assemble_brownian(w, s, sigma, 11);
  // W(n_1) - W(l_1) = (n_1 - l_1)^{1/2} varsigma^{-1/2} W_1
  EXPECT_NEAR(inc.sum(), std::sqrt(40.0) * 0.731 / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(reconstruct_blocks(inc, s, sigma)[0](0), 0.731, 1e-13);

  const BlockScheme g = build_scheme(4096.0);
  CounterRng rng(12, 0);
  std::vector<Vec> many(static_cast<std::size_t>(g.blocks));
  for (auto& x : many) x = scalar_vec(std::sqrt(3.0) * rng.normal());
  const auto back = reconstruct_blocks(assemble_brownian(many, g, sigma, 13), g, sigma);
  for (std::size_t k = 0; k < many.size(); ++k) EXPECT_NEAR(back[k](0), many[k](0), 1e-12);
}

TEST(AssembleBrownian, AllGapSchemeIsPlainBrownian) {
  const std::int64_t total = 100000;
  const BlockScheme s = custom_scheme(50, 50, total, static_cast<double>(total));
  const Eigen::MatrixXd inc =
      assemble_brownian(std::vector<Vec>(static_cast<std::size_t>(s.blocks), scalar_vec(5.0)), s,
                        Eigen::MatrixXd::Identity(1, 1), 14);
  std::vector<double> sq(static_cast<std::size_t>(total));
  for (std::int64_t n = 0; n < total; ++n) sq[static_cast<std::size_t>(n)] = inc(n, 0) * inc(n, 0);
  EXPECT_NEAR(stats::mean(sq), 1.0, 4.0 * stats::standard_error(sq));
}

TEST(AssembleBrownian, DisjointBlocksUncorrelated) {
  const BlockScheme s = custom_scheme(20, 4, 40, 40.0);
  const Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(1, 1);
  std::vector<double> prod(20000);
  for (std::size_t p = 0; p < prod.size(); ++p) {
    CounterRng rng(15, p);
    const std::vector<Vec> w{scalar_vec(rng.normal()), scalar_vec(rng.normal())};
    const Eigen::MatrixXd inc = assemble_brownian(w, s, sigma, 16, p);
    prod[p] = inc.topRows(20).sum() * inc.bottomRows(20).sum();
  }
  EXPECT_NEAR(stats::mean(prod), 0.0, 4.0 * stats::standard_error(prod));
}

TEST(CoupledPair, RademacherErrorsDecrease) {
  const auto h = rademacher(18);
  std::vector<double> scales{1024.0, 4096.0, 16384.0, 65536.0}, errors;
  for (double N : scales) errors.push_back(unit_sigma_report(h, N, 1000).moment);
  for (std::size_t i = 1; i < errors.size(); ++i) EXPECT_LT(errors[i], errors[i - 1]);
  EXPECT_GT(decay_fit(scales, errors).delta, 0.0);
}

TEST(CoupledPair, GaussianControlBeatsK2) {
  nlohmann::json j = {{"process", {{"kind", "gaussian"}}},
                      {"model", {{"name", "constant"}, {"parameters", {{"sigma", 1.0}}}}},
                      {"scales", {4096}}};
  const Experiment gauss_exp = build_experiment(parse_config(j.dump()));
  j["process"] = {{"kind", "markov"}, {"transition", {{0.75, 0.25}, {0.25, 0.75}}}, {"values", {1, -1}}};
  const Experiment k2_exp = build_experiment(parse_config(j.dump()));
  auto report = [](const Experiment& e) {
    CouplingConfig cfg;
    cfg.N = 4096.0;
    cfg.ensemble = 1000;
    cfg.seed = 19;
    cfg.threads = default_threads();
    return coupled_pair(e.model, e.process, e.coefficients, e.transform, cfg, e.x0);
  };
  const CouplingReport gauss = report(gauss_exp);
  const CouplingReport chain = report(k2_exp);
  const double se = std::hypot(stats::standard_error(gauss.power), stats::standard_error(chain.power));
  EXPECT_LT(gauss.moment + 4.0 * se, chain.moment);
}

TEST(CoupledPair, SingleStepHorizon) {
  const double N = 1024.0;
  const CouplingReport r = unit_sigma_report(k2(21), N, 1000, 1.0 / N);
  // N^{-1/2} xi(0) and Xi(1/N) are independent, centered, variances 1/N and 3/N
  EXPECT_LE(r.moment, 2.0 * (3.0 / N + 3.0 / N));
  EXPECT_NEAR(r.moment, 4.0 / N, 4.0 * stats::standard_error(r.power));
}

TEST(CoupledPair, ThreadCountDoesNotChangeResults) {
  const auto h = k2(22);
  const SlowModel m = make_model("sin", {{"a", 2.0}, {"s", 1.0}}, 1.0);
  const auto dc = diffusion_fields(m, covariance_summary(h, 60), marginal_law(h));
  CouplingConfig cfg;
  cfg.N = 1024.0;
  cfg.ensemble = 1000;
  cfg.threads = 1;
  const CouplingReport one = coupled_pair(m, h, dc, build_transform(m), cfg, scalar_vec(0.0));
  cfg.threads = 8;
  const CouplingReport eight = coupled_pair(m, h, dc, build_transform(m), cfg, scalar_vec(0.0));
  EXPECT_EQ(one.sup, eight.sup);
  EXPECT_EQ(one.moment, eight.moment);
}

TEST(SkeletonGap, BoundFormula) {
  EXPECT_NEAR(skeleton_gap_bound(0.5, 1.0, 1.0, 0), 0.75, 1e-15);
  EXPECT_NEAR(skeleton_gap_bound(0.5, 1.0, 1.0, 4), 0.75 * std::exp(2.0), 1e-13);
}
