#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "fastslow/analysis.hpp"

using namespace fastslow;

namespace {

ProcessHandle k2() {
  Eigen::MatrixXd P(2, 2);
  P << 0.75, 0.25, 0.25, 0.75;
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  return make_process(MarkovChainSpec::from_transition(P), ObservableSpec::on_states(g), 21);
}

ProcessHandle rademacher() {
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  return make_iid_process(Eigen::Vector2d(0.5, 0.5), ObservableSpec::on_states(g), 22);
}

// Exact E exp(i w S_n / sqrt(n)) for K2 by the transfer matrix
// M(w)_{ij} = P_ij exp(i w g(j) / sqrt(n)).
double k2_cf(double w, int n) {
  using C = std::complex<double>;
  const double u = w / std::sqrt(static_cast<double>(n));
  const C plus = std::exp(C(0.0, u)), minus = std::exp(C(0.0, -u));
  C v0 = 0.5 * plus, v1 = 0.5 * minus;  // stationary start, first symbol
  for (int k = 1; k < n; ++k) {
    const C n0 = (0.75 * v0 + 0.25 * v1) * plus;
    const C n1 = (0.25 * v0 + 0.75 * v1) * minus;
    v0 = n0;
    v1 = n1;
  }
  return std::real(v0 + v1);
}

}  // namespace

TEST(DecayFit, ExactPowerLaw) {
  const std::vector<double> n{1e2, 1e3, 1e4, 1e5};
  std::vector<double> e;
  for (double v : n) e.push_back(7.0 * std::pow(v, -0.5));
  const DecayFit fit = decay_fit(n, e);
  EXPECT_NEAR(fit.delta, 0.5, 1e-12);
  EXPECT_NEAR(fit.delta_ci.lo, 0.5, 1e-12);
  EXPECT_NEAR(fit.delta_ci.hi, 0.5, 1e-12);
}

TEST(DecayFit, ConstantErrors) {
  const DecayFit fit = decay_fit({1e2, 1e3, 1e4, 1e5}, {0.3, 0.3, 0.3, 0.3});
  EXPECT_NEAR(fit.delta, 0.0, 1e-12);
}

TEST(DecayFit, Preconditions) {
  EXPECT_THROW(decay_fit({1, 2, 3}, {1, 1, 1}), Rejected);
  EXPECT_THROW(decay_fit({1, 2, 3, 4}, {1, 0, 1, 1}), Rejected);
  EXPECT_THROW(decay_fit({1, 2, 3, 4}, {1, 1, 1, 1}, 1, nullptr, 50), Rejected);
}

TEST(DecayFit, PairedBootstrapBracketsSlope) {
  const std::vector<double> n{1e2, 1e3, 1e4, 1e5};
  std::vector<std::vector<double>> samples;
  std::vector<double> means;
  CounterRng rng(3, 0);
  for (double v : n) {
    std::vector<double> s(500);
    for (auto& x : s) x = std::pow(v, -0.4) * std::exp(0.3 * rng.normal());
    means.push_back(stats::mean(s));
    samples.push_back(s);
  }
  const DecayFit fit = decay_fit(n, means, 4, &samples);
  EXPECT_TRUE(fit.paired);
  EXPECT_TRUE(fit.delta_ci.contains(fit.delta));
  EXPECT_NEAR(fit.delta, 0.4, 0.02);
}

TEST(MomentGrowth, RademacherSecondMomentIsOne) {
  const auto g = moment_growth(rademacher(), {1}, {16, 64, 256}, 20000, 2);
  for (std::size_t i = 0; i < g[0].ratio.size(); ++i) EXPECT_NEAR(g[0].ratio[i], 1.0, 4.0 * g[0].se[i]);
}

TEST(MomentGrowth, K2ApproachesGaussianMoments) {
  // E S_n^2 = 3n - 4(1 - 0.5^n) exactly; the fourth moment tends to 3 varsigma^2 = 27
  const auto g = moment_growth(k2(), {1, 2}, {64, 1024, 10000}, 20000, 2);
  const double n = 10000.0;
  EXPECT_NEAR(g[0].ratio[2], 3.0 - 4.0 / n, 4.0 * g[0].se[2]);
  EXPECT_NEAR(g[1].ratio[2], 27.0, 5.0 * g[1].se[2]);
  EXPECT_TRUE(g[0].bounded);
  EXPECT_TRUE(g[1].bounded);
}

TEST(CfGap, RademacherAtOriginIsExact) {
  std::vector<Vec> s;
  for (int i = 0; i < 100; ++i) s.push_back(scalar_vec(i % 2 ? 1.0 : -1.0));
  // radius 0 puts every grid node at w = 0, where both sides equal 1
  const CfGap gap = empirical_cf_gap(s, Eigen::MatrixXd::Identity(1, 1), 0.0);
  EXPECT_NEAR(gap.gap, 0.0, 1e-15);
}

TEST(CfGap, GaussianProcessIsNoiseOnly) {
  const ProcessHandle h = make_gaussian_process(1, 23);
  const CfGap gap = cf_gaussian_gap(h, 16, Eigen::MatrixXd::Identity(1, 1), 100000, 2);
  EXPECT_LT(gap.gap, 5.0 * gap.se + 4.0 / std::sqrt(100000.0));
}

TEST(CfGap, K2MatchesTransferMatrixOracle) {
  const int n = 64;
  const CfGap gap = cf_gaussian_gap(k2(), n, Eigen::MatrixXd::Constant(1, 1, 3.0), 200000, 2);
  const double w = gap.argmax(0);
  const double exact = std::abs(k2_cf(w, n) - std::exp(-1.5 * w * w));
  EXPECT_NEAR(gap.gap, exact, 5.0 * gap.se + 5.0 / std::sqrt(200000.0));
  EXPECT_NEAR(gap.radius, std::pow(64.0, 1.0 / 40.0), 1e-12);
}

TEST(Wasserstein, SlicedShiftInTwoDimensions) {
  CounterRng rng(31, 0);
  std::vector<Vec> a, b;
  for (int i = 0; i < 20000; ++i) {
    Vec x(2), y(2);
    x << rng.normal(), rng.normal();
    y << rng.normal() + 1.0, rng.normal();
    a.push_back(x);
    b.push_back(y);
  }
  // sliced W1 of a unit shift along e1 is E|cos theta| = 2/pi over uniform directions
  EXPECT_NEAR(wasserstein1(a, b, 5), 2.0 / std::numbers::pi, 0.1);
  EXPECT_THROW(wasserstein1(std::vector<Vec>(10, scalar_vec(0.0)), std::vector<Vec>(10, scalar_vec(0.0))), Rejected);
}
