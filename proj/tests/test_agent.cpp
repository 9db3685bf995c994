#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "dva/ad/gradcheck.hpp"
#include "dva/ad/ops.hpp"
#include "dva/agent/agent.hpp"

namespace dva::agent {
namespace {

using ad::Tape;

AgentConfig small_config() {
  AgentConfig c;
  c.encoder_channels = {4, 4};
  c.encoder_strides = {2, 1};
  c.trunk_width = 8;
  c.actor_hidden = {8, 6};
  c.critic_hidden = {8, 8};
  return c;
}

ObsSpec small_pixels() {
  ObsSpec o;
  o.channels = 2;
  o.height = 11;
  o.width = 12;
  return o;
}

Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo = -1,
                     double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

TEST(Orthogonal, RowsOrColumnsAreOrthonormal) {
  std::mt19937_64 rng(1);
  for (auto [r, c] : {std::pair{5, 9}, std::pair{9, 5}, std::pair{6, 6}}) {
    const auto w = orthogonal(rng, r, c, 2.0);
    const int n = std::min(r, c);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double dot = 0;
        for (int k = 0; k < std::max(r, c); ++k) {
          dot += r <= c ? w[i * c + k] * w[j * c + k] : w[k * c + i] * w[k * c + j];
        }
        EXPECT_NEAR(dot, i == j ? 4.0 : 0.0, 1e-12);
      }
    }
  }
}

TEST(Policy, DeskArchitectureParameterCount) {
  ObsSpec obs;  // 3 x 32 x 32
  GaussianPolicy policy(obs, 1, AgentConfig{}, 0);
  // 32 -> 15 -> 13 -> 11 -> 9 spatial, 32 channels
  EXPECT_EQ(policy.encoder_features(), 32 * 9 * 9);
  const int64_t conv = (32 * 3 * 9 + 32) + 3 * (32 * 32 * 9 + 32);
  const int64_t trunk = 2592 * 64 + 64 + 128;
  const int64_t mlp = (64 * 64 + 64 + 128) * 2;
  const int64_t heads = 2 * (64 + 1);
  EXPECT_EQ(policy.params().size(), conv + trunk + mlp + heads);
  EXPECT_EQ(policy.expected_parameter_count(), policy.params().size());
}

TEST(Policy, ParameterCountMatchesFormulaAcrossArchitectures) {
  for (bool pixels : {true, false}) {
    for (auto hidden : {std::vector<int>{}, std::vector<int>{7}, std::vector<int>{5, 3}}) {
      AgentConfig c = small_config();
      c.actor_hidden = hidden;
      ObsSpec o = small_pixels();
      o.pixels = pixels;
      GaussianPolicy p(o, 2, c, 3);
      EXPECT_EQ(p.params().size(), p.expected_parameter_count());
    }
  }
  Critic critic(4, AgentConfig{}, 1);
  EXPECT_EQ(critic.params().size(), critic.expected_parameter_count());
  EXPECT_EQ(critic.params().size(), (4 * 64 + 64 + 128) + (64 * 64 + 64 + 128) + 65);
}

TEST(Policy, FlattenRoundTripAndStableOrdering) {
  GaussianPolicy a(small_pixels(), 1, small_config(), 11);
  GaussianPolicy b(small_pixels(), 1, small_config(), 11);
  const auto flat = a.params().flatten();
  EXPECT_EQ(flat, b.params().flatten());
  for (size_t i = 0; i < a.params().tensors(); ++i) {
    EXPECT_EQ(a.params().name(i), b.params().name(i));
  }
  std::vector<double> shifted = flat;
  for (double& v : shifted) v = v * 0.5 + 1.0;
  a.params().unflatten(shifted);
  EXPECT_EQ(a.params().flatten(), shifted);
  a.params().unflatten(flat);
  EXPECT_EQ(a.params().flatten(), flat);
  EXPECT_THROW(a.params().unflatten(std::vector<double>(3)),
               std::invalid_argument);
}

TEST(Policy, ZeroNoiseGivesMeanAndNoiseEntersLinearly) {
  std::mt19937_64 rng(2);
  GaussianPolicy policy(small_pixels(), 2, small_config(), 5);
  const Tensor obs = random_tensor(rng, {3, 2, 11, 12}, 0, 1);
  const auto p = policy.params().constants();
  const auto zero = policy.forward(p, obs, Tensor::zeros({3, 2}));
  EXPECT_EQ(zero.action.to_vector(), zero.mean.to_vector());
  const Tensor eps = random_tensor(rng, {3, 2});
  const auto out = policy.forward(p, obs, eps);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(out.action[i] - out.mean[i], out.std[i] * eps[i],
                1e-15 * (1 + std::abs(out.mean[i])));
  }
  // Deterministic in (obs, eps, theta).
  EXPECT_EQ(policy.act(p, obs, eps).to_vector(), out.action.to_vector());
}

TEST(Policy, InitialStdIsNearHalfAndClamped) {
  std::mt19937_64 rng(3);
  GaussianPolicy policy(small_pixels(), 1, small_config(), 5);
  const auto p = policy.params().constants();
  const auto out = policy.forward(p, random_tensor(rng, {4, 2, 11, 12}, 0, 1),
                                  Tensor::zeros({4, 1}));
  for (double s : out.std.values()) EXPECT_NEAR(s, 0.5, 0.05);
  auto& params = policy.params();
  params.set(params.index("log_std.bias"), Tensor({1}, {1e3}));
  const auto big = policy.forward(params.constants(),
                                  random_tensor(rng, {2, 2, 11, 12}, 0, 1),
                                  Tensor::zeros({2, 1}));
  for (double l : big.log_std.values()) {
    EXPECT_LE(l, 2.0);
    EXPECT_GT(l, 1.99);
  }
}

TEST(Policy, RejectsMismatchedObservation) {
  GaussianPolicy policy(small_pixels(), 1, small_config(), 5);
  EXPECT_THROW(policy.act(policy.params().constants(),
                          Tensor::zeros({1, 3, 11, 12}), Tensor::zeros({1, 1})),
               std::invalid_argument);
}

TEST(Policy, ActionGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (bool pixels : {true, false}) {
    ObsSpec o = small_pixels();
    o.pixels = pixels;
    GaussianPolicy policy(o, 2, small_config(), 9);
    // Perturb the init so no layer sits in a degenerate regime.
    auto flat = policy.params().flatten();
    std::normal_distribution<double> n(0, 0.3);
    for (double& v : flat) v += n(rng);
    policy.params().unflatten(flat);
    const Tensor obs = pixels ? random_tensor(rng, {2, 2, 11, 12}, 0, 1)
                              : random_tensor(rng, {2, 4});
    const Tensor eps = random_tensor(rng, {2, 2});
    const Tensor weights = random_tensor(rng, {2, 2});
    auto f = [&](std::span<const double> theta) {
      ParameterSet ps = policy.params();
      ps.unflatten(theta);
      return ad::sum(policy.act(ps.constants(), obs, eps) * weights).item();
    };
    Tape tape;
    const auto leaves = policy.params().bind(tape);
    tape.backward(ad::sum(policy.act(leaves, obs, eps) * weights));
    const auto grad = ParameterSet::gradient(tape, leaves);
    const auto report = ad::compare_with_finite_differences(
        f, flat, grad, 1e-5, ad::ErrorMeasure::mixed);
    EXPECT_LT(report.max_rel_err, 1e-6) << "pixels " << pixels;

    const auto obs_report = ad::finite_difference_check(
        [&](Tape&, const Tensor& o2) {
          return ad::sum(policy.act(policy.params().constants(), o2, eps) *
                         weights);
        },
        obs, 1e-5);
    EXPECT_LT(obs_report.max_rel_err, 1e-6);
  }
}

TEST(Policy, ZeroEncoderAndTrunkBlockObservationGradient) {
  std::mt19937_64 rng(5);
  GaussianPolicy policy(small_pixels(), 1, small_config(), 9);
  auto& ps = policy.params();
  for (size_t i = 0; i < ps.tensors(); ++i) {
    const auto& name = ps.name(i);
    if (name.rfind("encoder.", 0) == 0 || name == "trunk.weight") {
      ps.set(i, Tensor::zeros(ps.value(i).shape()));
    }
  }
  Tape tape;
  const Tensor obs = tape.variable(random_tensor(rng, {2, 2, 11, 12}, 0, 1));
  tape.backward(ad::sum(policy.act(ps.constants(), obs, random_tensor(rng, {2, 1}))));
  const Tensor g = tape.grad(obs);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Critic, ZeroOutputLayerGivesZeroValue) {
  std::mt19937_64 rng(6);
  Critic critic(4, AgentConfig{}, 2);
  auto& ps = critic.params();
  ps.set(ps.index("value.weight"), Tensor::zeros({64, 1}));
  const Tensor v = critic.value(ps.constants(), random_tensor(rng, {5, 4}, -3, 3));
  EXPECT_EQ(v.to_vector(), std::vector<double>(5, 0.0));
}

TEST(Critic, BatchEqualsPerSample) {
  std::mt19937_64 rng(7);
  Critic critic(4, AgentConfig{}, 2);
  const Tensor s = random_tensor(rng, {6, 4}, -3, 3);
  const Tensor batch = critic.value(critic.params().constants(), s);
  for (int i = 0; i < 6; ++i) {
    const Tensor one = critic.value(critic.params().constants(),
                                    ad::slice(s, 0, i, 1));
    EXPECT_NEAR(one.item(), batch[i], 1e-14 * (1 + std::abs(batch[i])));
  }
}

TEST(Critic, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  Critic critic(4, small_config(), 2);
  const Tensor s = random_tensor(rng, {3, 4}, -2, 2);
  const auto flat = critic.params().flatten();
  Tape tape;
  const auto leaves = critic.params().bind(tape);
  tape.backward(ad::sum(ad::square(critic.value(leaves, s))));
  const auto grad = ParameterSet::gradient(tape, leaves);
  auto f = [&](std::span<const double> phi) {
    ParameterSet ps = critic.params();
    ps.unflatten(phi);
    return ad::sum(ad::square(critic.value(ps.constants(), s))).item();
  };
  EXPECT_LT(ad::compare_with_finite_differences(f, flat, grad, 1e-5,
                                                ad::ErrorMeasure::mixed)
                .max_rel_err,
            1e-6);
  const auto state_report = ad::finite_difference_check(
      [&](Tape&, const Tensor& x) {
        return ad::sum(critic.value(critic.params().constants(), x));
      },
      s, 1e-5);
  EXPECT_LT(state_report.max_rel_err, 1e-6);
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::string path =
      (std::filesystem::temp_directory_path() / "dva_agent_test.ckpt").string();
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  GaussianPolicy a(small_pixels(), 1, small_config(), 1);
  GaussianPolicy b(small_pixels(), 1, small_config(), 2);
  save_checkpoint(path, a.params(), a.architecture_hash());
  EXPECT_EQ(std::filesystem::file_size(path), 17 + 8 * a.params().size());
  load_checkpoint(path, b.params(), b.architecture_hash());
  EXPECT_EQ(a.params().flatten(), b.params().flatten());
}

TEST_F(CheckpointTest, ArchitectureMismatchIsRejected) {
  GaussianPolicy a(small_pixels(), 1, small_config(), 1);
  AgentConfig other = small_config();
  other.trunk_width = 9;
  GaussianPolicy b(small_pixels(), 1, other, 1);
  EXPECT_NE(a.architecture_hash(), b.architecture_hash());
  save_checkpoint(path, a.params(), a.architecture_hash());
  EXPECT_THROW(load_checkpoint(path, b.params(), b.architecture_hash()),
               CheckpointError);
  std::ofstream(path, std::ios::binary) << "garbage";
  EXPECT_THROW(load_checkpoint(path, a.params(), a.architecture_hash()),
               CheckpointError);
}

}  // namespace
}  // namespace dva::agent
