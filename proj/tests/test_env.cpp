#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "dva/ad/gradcheck.hpp"
#include "dva/ad/ops.hpp"
#include "dva/env/env.hpp"
#include "dva/env/rng.hpp"

namespace dva::env {
namespace {

using ad::Tape;

Tensor row(std::vector<double> v) {
  const int64_t n = static_cast<int64_t>(v.size());
  return Tensor({1, n}, std::move(v));
}

TEST(CartpoleReward, ClosedFormValues) {
  Cartpole env({});
  const Tensor a = row({0.0});
  EXPECT_EQ(env.reward(row({0, 0, 0, 0}), a).item(), 10.0);
  EXPECT_EQ(env.reward(row({0, 1, 0, 0}), a).item(), 9.0);
  EXPECT_NEAR(env.reward(row({1, 0, 2, 3}), a).item(), 8.65, 1e-12);
}

TEST(CartpoleReward, MatchesFormulaOnRandomStates) {
  Cartpole env({});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng), th = u(rng), xd = u(rng), thd = u(rng);
    const double expected =
        10 - th * th - 0.1 * thd * thd - 0.05 * x * x - 0.1 * xd * xd;
    EXPECT_NEAR(env.reward(row({x, th, xd, thd}), row({u(rng)})).item(),
                expected, 1e-12);
  }
}

TEST(Cartpole, EquilibriumIsFixedPoint) {
  auto env = std::make_shared<Cartpole>(EnvConfig{});
  EnvConfig cfg;
  cfg.init_scale = 0.0;
  VecEnv vec(std::make_shared<Cartpole>(cfg), 2, 1);
  const auto before = vec.state().to_vector();
  EXPECT_EQ(before, std::vector<double>(8, 0.0));
  const StepResult r = vec.step(Tensor::zeros({2, 1}));
  EXPECT_EQ(r.next_state.to_vector(), before);
  EXPECT_EQ(r.reward.to_vector(), (std::vector<double>{10.0, 10.0}));
  EXPECT_EQ(vec.step_counts()[0], 1);
}

TEST(Cartpole, LeavingTheTrackTerminates) {
  EnvConfig cfg;
  cfg.init_scale = 0.0;
  VecEnv vec(std::make_shared<Cartpole>(cfg), 2, 1);
  vec.set_state(Tensor({2, 4}, {2.59, 0, 6.0, 0, 0, 0, 0, 0}));
  const StepResult r = vec.step(Tensor::zeros({2, 1}));
  EXPECT_GE(r.next_state[0], 2.5);
  EXPECT_TRUE(r.done[0]);
  EXPECT_TRUE(r.early[0]);
  EXPECT_FALSE(r.done[1]);
  EXPECT_TRUE(Cartpole(cfg).out_of_bounds(std::vector<double>{2.6, 0, 0, 0}));
  EXPECT_TRUE(Cartpole(cfg).out_of_bounds(std::vector<double>{-2.6, 0, 0, 0}));
}

TEST(Cartpole, TimeLimitEndsEpisodeAndResetIsConstant) {
  EnvConfig cfg;
  cfg.episode_length = 3;
  VecEnv vec(std::make_shared<Cartpole>(cfg), 3, 5);
  Tape tape;
  vec.set_state(tape.variable(vec.state()));
  StepResult r;
  for (int t = 0; t < 3; ++t) {
    r = vec.step(Tensor::zeros({3, 1}));
    EXPECT_EQ(r.done[0], t == 2);
    vec.advance(r);
  }
  EXPECT_EQ(vec.step_counts()[0], 0);
  // The reset rows carry no gradient back to the original leaf.
  const Tensor s = vec.state();
  for (double v : s.values()) EXPECT_LE(std::abs(v), 0.05);
  ASSERT_TRUE(s.requires_grad());
}

TEST(Cartpole, ResetDistribution) {
  EnvConfig cfg;
  cfg.init_scale = 0.05;
  auto env = std::make_shared<Cartpole>(cfg);
  VecEnv a(env, 1000, 42), b(env, 1000, 42), c(env, 1000, 43);
  EXPECT_EQ(a.state().to_vector(), b.state().to_vector());
  EXPECT_NE(a.state().to_vector(), c.state().to_vector());
  double max_abs = 0;
  for (double v : a.state().values()) max_abs = std::max(max_abs, std::abs(v));
  EXPECT_LE(max_abs, 0.05);
  EXPECT_GT(max_abs, 0.04);
}

TEST(Cartpole, ResetStreamsDoNotDependOnBatchSize) {
  auto env = std::make_shared<Cartpole>(EnvConfig{});
  VecEnv small(env, 2, 9), large(env, 8, 9);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(small.state()[i], large.state()[i]);
  }
}

// Relative energy error over 240 unforced steps for each row of s0:
// {largest excursion, |mean of last 60 steps - mean of first 60 steps|}.
std::vector<std::pair<double, double>> energy_error(const Cartpole& env,
                                                    Tensor s) {
  const int64_t n = s.dim(0);
  const Tensor zero = Tensor::zeros({n, 1});
  const auto e0 = env.energy(s);
  std::vector<std::pair<double, double>> out(n);
  std::vector<double> head(n, 0.0), tail(n, 0.0);
  for (int t = 0; t < 240; ++t) {
    s = env.dynamics(s, zero);
    const auto e = env.energy(s);
    for (int64_t i = 0; i < n; ++i) {
      out[i].first =
          std::max(out[i].first, std::abs(e[i] - e0[i]) / std::abs(e0[i]));
      if (t < 60) head[i] += e[i] / 60;
      if (t >= 180) tail[i] += e[i] / 60;
    }
  }
  for (int64_t i = 0; i < n; ++i) {
    out[i].second = std::abs(tail[i] - head[i]) / std::abs(e0[i]);
  }
  return out;
}

TEST(Cartpole, EnergyIsConservedForSwingsAboutTheBottom) {
  Cartpole env({});
  const Tensor s({3, 4}, {0, 3.0, 0, 0, 0.5, 2.6, 0.3, -1.0, 0, -2.8, 0, 0.5});
  for (const auto& [excursion, drift] : energy_error(env, s)) {
    EXPECT_LT(excursion, 0.01);
    EXPECT_LT(drift, 0.01);
  }
}

// Falling from upright the pole whips through the bottom at ~7 rad/s and
// semi-implicit Euler shows a bounded O(h) energy oscillation of a couple
// of percent, but no secular drift.
TEST(Cartpole, EnergyDoesNotDriftThroughFullRotations) {
  Cartpole env({});
  const Tensor s({3, 4}, {0, 0.3, 0, 0, 0, 1.0, 0, 0, 0, -0.5, 0.5, 0.5});
  for (const auto& [excursion, drift] : energy_error(env, s)) {
    EXPECT_LT(drift, 0.01);
    EXPECT_LT(excursion, 0.03);
  }
}

TEST(Cartpole, StepIsBitwiseDeterministic) {
  Cartpole env({});
  const Tensor s({2, 4}, {0.1, -0.2, 0.3, 0.4, -1, 0.5, 0.2, -0.3});
  const Tensor a({2, 1}, {3.0, -7.0});
  EXPECT_EQ(env.dynamics(s, a).to_vector(), env.dynamics(s, a).to_vector());
}

TEST(Cartpole, ForceSaturatesSmoothly) {
  Cartpole env({});
  const Tensor s = Tensor::zeros({3, 4});
  const Tensor a({3, 1}, {1e3, 1e4, 10.0});
  const Tensor next = env.dynamics(s, a);
  // Saturated inputs give (almost) the same acceleration.
  EXPECT_NEAR(next[2], next[6], 1e-12);
  EXPECT_LT(next[10], next[2]);
}

TEST(Cartpole, NonFiniteStateNamesEnv) {
  VecEnv vec(std::make_shared<Cartpole>(EnvConfig{}), 3, 1);
  vec.set_state(Tensor({3, 4}, {0, 0, 0, 0, 0, 0, 0, 0, 0,
                                std::numeric_limits<double>::infinity(), 0, 0}));
  try {
    vec.step(Tensor::zeros({3, 1}));
    FAIL();
  } catch (const NonFiniteState& e) {
    EXPECT_EQ(e.env_index(), 2);
    EXPECT_NE(std::string(e.what()).find("env 2"), std::string::npos);
  }
}

TEST(Cartpole, ReturnGradientWrtFirstActionMatchesFiniteDifferences) {
  Cartpole env({});
  const Tensor s0({1, 4}, {0.1, 0.05, -0.2, 0.3});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 2);
  std::vector<double> later(7);
  for (double& v : later) v = n(rng);
  auto ret = [&](ad::Tape&, const Tensor& a0) {
    Tensor s = s0;
    Tensor total = env.reward(s, a0);
    s = env.dynamics(s, a0);
    for (int t = 0; t < 7; ++t) {
      const Tensor a({1, 1}, {later[t]});
      total = total + env.reward(s, a);
      s = env.dynamics(s, a);
    }
    return ad::sum(total);
  };
  const auto report = ad::finite_difference_check(ret, Tensor({1, 1}, {0.7}),
                                                  1e-5, ad::ErrorMeasure::relative);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(Reacher, RewardValuesAndActionGradient) {
  EnvConfig cfg;
  cfg.name = "reacher";
  cfg.goal_x = 0.5;
  cfg.goal_y = -0.25;
  Reacher env(cfg);
  EXPECT_EQ(env.reward(row({0.5, -0.25, 3, 4}), row({0, 0})).item(), 0.0);
  EXPECT_EQ(env.reward(row({1.5, -0.25, 0, 0}), row({0, 0})).item(), -1.0);
  Tape tape;
  const Tensor a = tape.variable({1, 2}, {0.3, -2.0});
  tape.backward(ad::sum(env.reward(row({0.1, 0.2, 0, 0}), a)));
  EXPECT_NEAR(tape.grad(a)[0], -0.02 * 0.3, 1e-15);
  EXPECT_NEAR(tape.grad(a)[1], -0.02 * -2.0, 1e-15);
}

TEST(Reacher, NeverTerminatesEarly) {
  EnvConfig cfg;
  cfg.name = "reacher";
  VecEnv vec(make_env(cfg), 2, 1);
  vec.set_state(Tensor({2, 4}, {100, 100, 0, 0, -50, 3, 0, 0}));
  const StepResult r = vec.step(Tensor::zeros({2, 2}));
  EXPECT_FALSE(r.done[0]);
  EXPECT_FALSE(r.done[1]);
}

TEST(EnvConfig, ValidationNamesField) {
  EnvConfig cfg;
  cfg.dt = 0.0;
  try {
    cfg.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("env.dt"), std::string::npos);
  }
}

}  // namespace
}  // namespace dva::env
