#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fastslow/coefficients.hpp"
#include "fastslow/limit_sde.hpp"
#include "fastslow/parallel.hpp"
#include "fastslow/stats.hpp"

using namespace fastslow;

namespace {

SdeSpec scalar_sde(std::function<Vec(const Vec&)> drift, double diffusion, double dt = 1e-3) {
  SdeSpec s;
  s.d = 1;
  s.dt = dt;
  s.horizon = 1.0;
  s.drift = std::move(drift);
  s.diffusion = [diffusion](const Vec&) -> Mat { return Mat::Constant(1, 1, diffusion); };
  return s;
}

}  // namespace

TEST(EulerMaruyama, SharedNoiseGivesBrownianEndpoint) {
  const SdeSpec s = scalar_sde([](const Vec&) -> Vec { return scalar_vec(0.0); }, 1.0);
  const Eigen::MatrixXd dw = brownian_increments(s, 3, 5);
  const Path p = euler_maruyama(s, dw, scalar_vec(0.0));
  EXPECT_NEAR(p.back()(0), dw.sum(), 1e-12);
  EXPECT_EQ(euler_maruyama(s, 3, scalar_vec(0.0), 5).back()(0), p.back()(0));
}

TEST(EulerMaruyama, DeterministicDecay) {
  const double dt = 1e-4;
  const SdeSpec s = scalar_sde([](const Vec& x) -> Vec { return -x; }, 0.0, dt);
  const Path p = euler_maruyama(s, 1, scalar_vec(1.5), 0);
  // explicit Euler: (1 - dt)^{1/dt}
  EXPECT_NEAR(p.back()(0), 1.5 * std::pow(1.0 - dt, 1.0 / dt), 1e-12);
  EXPECT_NEAR(p.back()(0), 1.5 * std::exp(-1.0), 1.5 * dt);
}

TEST(EulerMaruyama, K2LimitVariance) {
  Eigen::MatrixXd P(2, 2);
  P << 0.75, 0.25, 0.25, 0.75;
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  const auto h = make_process(MarkovChainSpec::from_transition(P), ObservableSpec::on_states(g), 2);
  const SlowModel m = constant_model(1, 1.0);
  const auto dc = diffusion_fields(m, covariance_summary(h, 60), marginal_law(h));
  const SdeSpec s = limit_sde(dc, m, 1e-2, 1.0);
  EXPECT_TRUE(s.driftless);
  std::vector<double> sq(10000);
  parallel_for(sq.size(), default_threads(), [&](std::size_t p) {
    const double v = euler_maruyama(s, 4, scalar_vec(0.0), p).back()(0);
    sq[p] = v * v;
  });
  EXPECT_NEAR(stats::mean(sq), 3.0, 4.0 * stats::standard_error(sq));
}

TEST(SdeSpec, Preconditions) {
  SdeSpec s = scalar_sde([](const Vec& x) -> Vec { return x; }, 1.0, 0.02);
  EXPECT_THROW(euler_maruyama(s, 1, scalar_vec(0.0)), Rejected);
  s.dt = 0.003;
  EXPECT_THROW(euler_maruyama(s, 1, scalar_vec(0.0)), Rejected);
}

TEST(SdeSpec, BlowUpAborts) {
  SdeSpec s = scalar_sde([](const Vec& x) -> Vec { return 1e300 * x * x; }, 0.0, 1e-2);
  EXPECT_THROW(euler_maruyama(s, 1, scalar_vec(1.0)), NumericalAbort);
}
