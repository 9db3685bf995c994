#pragma once

// Reparameterized Gaussian policy a = mu(o) + sigma(o) * eps with a conv
// encoder for pixel observations, and a state-space critic.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dva/agent/params.hpp"

namespace dva::agent {

struct AgentConfig {
  std::vector<int> encoder_channels{32, 32, 32, 32};
  std::vector<int> encoder_strides{2, 1, 1, 1};
  int kernel = 3;
  int trunk_width = 64;
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  double init_std = 0.5;
  double head_gain = 0.01;

  void validate() const;
};

// What the policy sees: stacked frames [C, H, W] or a state vector.
struct ObsSpec {
  bool pixels = true;
  int channels = 3;
  int height = 32;
  int width = 32;
  int state_dim = 4;

  Shape batch_shape(int64_t n) const;
};

// Orthogonal matrix [rows, cols] scaled by gain (rows orthonormal if
// rows <= cols, columns otherwise).
std::vector<double> orthogonal(std::mt19937_64& rng, int rows, int cols,
                               double gain);

class GaussianPolicy {
 public:
  GaussianPolicy(ObsSpec obs, int action_dim, AgentConfig config,
                 uint64_t seed);

  struct Output {
    Tensor mean;     // [N, A]
    Tensor log_std;  // [N, A], smoothly clamped
    Tensor std;      // [N, A]
    Tensor action;   // mean + std * eps
  };

  // p holds the parameters in ParameterSet order (constants or leaves).
  Output forward(std::span<const Tensor> p, const Tensor& obs,
                 const Tensor& eps) const;
  Tensor act(std::span<const Tensor> p, const Tensor& obs,
             const Tensor& eps) const {
    return forward(p, obs, eps).action;
  }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const ObsSpec& obs_spec() const { return obs_; }
  int action_dim() const { return action_dim_; }
  const AgentConfig& config() const { return config_; }

  // Feature count entering the trunk (pixel policies).
  int64_t encoder_features() const;
  // Closed-form parameter count of this architecture.
  int64_t expected_parameter_count() const;
  std::string architecture() const;
  uint64_t architecture_hash() const { return fnv1a(architecture()); }

 private:
  ObsSpec obs_;
  int action_dim_;
  AgentConfig config_;
  ParameterSet params_;
};

class Critic {
 public:
  Critic(int state_dim, AgentConfig config, uint64_t seed);

  // V(s) for s [N, D], shape [N].
  Tensor value(std::span<const Tensor> p, const Tensor& s) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int state_dim() const { return state_dim_; }
  int64_t expected_parameter_count() const;
  std::string architecture() const;
  uint64_t architecture_hash() const { return fnv1a(architecture()); }

 private:
  int state_dim_;
  AgentConfig config_;
  ParameterSet params_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-byte magic, version byte, architecture hash (u64), then the flattened
// parameters as little-endian doubles.
void save_checkpoint(const std::string& path, const ParameterSet& params,
                     uint64_t architecture_hash);
// Throws CheckpointError on bad magic/version, hash mismatch or length
// mismatch.
void load_checkpoint(const std::string& path, ParameterSet& params,
                     uint64_t architecture_hash);

}  // namespace dva::agent
