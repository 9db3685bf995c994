#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dva/ad/tensor.hpp"

namespace dva::env {

using ad::Tensor;

struct EnvConfig {
  std::string name = "cartpole";  // cartpole | reacher
  double dt = 1.0 / 60.0;
  int substeps = 4;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.81;
  double force_limit = 10.0;
  int episode_length = 240;
  double x_limit = 2.5;
  double init_scale = 0.05;
  // reacher only
  double goal_x = 1.0;
  double goal_y = 0.5;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

class NonFiniteState : public std::runtime_error {
 public:
  NonFiniteState(int env_index, const std::string& where);
  int env_index() const { return env_index_; }

 private:
  int env_index_;
};

// A batched, differentiable environment. States are [N, state_dim] and
// actions [N, action_dim] tensors; dynamics and reward are built from tape
// primitives, so they are differentiable whenever their inputs are.
class Env {
 public:
  explicit Env(EnvConfig config) : config_(std::move(config)) {}
  virtual ~Env() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;

  // s_{t+1} = f(s_t, a_t)
  virtual Tensor dynamics(const Tensor& s, const Tensor& a) const = 0;
  // R(s_t, a_t), shape [N]
  virtual Tensor reward(const Tensor& s, const Tensor& a) const = 0;
  // Early termination test on one state row (time limits handled apart).
  virtual bool out_of_bounds(std::span<const double> row) const = 0;
  // Initial state for one env: nominal state plus uniform perturbation.
  virtual void initial_state(std::mt19937_64& rng, std::span<double> row) const;

  const EnvConfig& config() const { return config_; }
  int episode_length() const { return config_.episode_length; }

 protected:
  EnvConfig config_;
};

std::unique_ptr<Env> make_env(const EnvConfig& config);

class Cartpole : public Env {
 public:
  explicit Cartpole(EnvConfig config);
  int state_dim() const override { return 4; }
  int action_dim() const override { return 1; }
  Tensor dynamics(const Tensor& s, const Tensor& a) const override;
  Tensor reward(const Tensor& s, const Tensor& a) const override;
  bool out_of_bounds(std::span<const double> row) const override;

  // Total mechanical energy of each row of s (pole as a uniform rod).
  std::vector<double> energy(const Tensor& s) const;
};

class Reacher : public Env {
 public:
  explicit Reacher(EnvConfig config);
  int state_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  Tensor dynamics(const Tensor& s, const Tensor& a) const override;
  Tensor reward(const Tensor& s, const Tensor& a) const override;
  bool out_of_bounds(std::span<const double>) const override { return false; }
};

struct StepResult {
  Tensor next_state;            // f(s, a) before any reset
  Tensor reward;                // [N]
  std::vector<uint8_t> done;    // terminated or time limit reached
  std::vector<uint8_t> early;   // terminated by the bounds check
};

// N environments with step counters and per-env reset streams derived from
// (seed, env index, reset counter).
class VecEnv {
 public:
  VecEnv(std::shared_ptr<const Env> env, int num_envs, uint64_t seed);

  const Env& env() const { return *env_; }
  int num_envs() const { return num_envs_; }
  const Tensor& state() const { return state_; }
  std::span<const int> step_counts() const { return step_count_; }

  // Resets every env and returns the new (constant) state.
  const Tensor& reset_all();
  // Applies f and R, advances counters and flags finished envs. The state
  // is not advanced; call `advance`.
  StepResult step(const Tensor& action);
  // Sets the state to `next_state`, replacing finished rows by fresh
  // initial states. Replaced rows carry no gradient.
  const Tensor& advance(const StepResult& result);
  // Overrides the current state, e.g. to detach it between windows.
  void set_state(Tensor state) { state_ = std::move(state); }

 private:
  void reset_row(int i, std::span<double> row);

  std::shared_ptr<const Env> env_;
  int num_envs_;
  uint64_t seed_;
  Tensor state_;
  std::vector<int> step_count_;
  std::vector<uint64_t> reset_count_;
};

}  // namespace dva::env
