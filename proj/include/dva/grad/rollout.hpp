#pragma once

// Short-horizon rollouts and the actor objective
//   J = sum_i [ sum_t g_t R(s_t, a_t) + g_h V(s_h) ]
// where g_t is a per-env running discount that restarts at every episode
// boundary. A step that ends an episode by leaving the track contributes no
// terminal value; a time-limit step is bootstrapped with V of the pre-reset
// state. The actor loss is -J / (N h).

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dva/ad/tape.hpp"
#include "dva/agent/agent.hpp"
#include "dva/env/env.hpp"
#include "dva/raster/raster.hpp"

namespace dva::grad {

using ad::Tape;
using ad::Tensor;

enum class Mode {
  coupled,    // observations stay on the tape (APG)
  decoupled,  // observations are detached (DPG)
};

// Everything a rollout reads. The renderer is null for the identity sensor
// (o = s). The critic may be null, meaning V = 0.
struct Setup {
  const env::Env* env = nullptr;
  const raster::Renderer* renderer = nullptr;
  const agent::GaussianPolicy* policy = nullptr;
  const agent::Critic* critic = nullptr;
  std::vector<Tensor> critic_params;
  double gamma = 0.99;
  int frame_stack = 1;

  bool pixels() const { return renderer != nullptr; }
};

// Simulator state carried from one window to the next.
struct Stream {
  Stream(std::shared_ptr<const env::Env> env, int num_envs, uint64_t seed,
         int frame_stack);

  env::VecEnv envs;
  raster::FrameStack frames;
  // Envs whose current state is the first of an episode.
  std::vector<uint8_t> fresh;
  int64_t window = 0;
};

struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  int frame_stack = 1;
  std::vector<Tensor> states;        // s_t, [N, D]
  std::vector<Tensor> observations;  // o_t
  std::vector<Tensor> actions;       // a_t, [N, A]
  std::vector<Tensor> noises;        // eps_t, [N, A]
  std::vector<Tensor> rewards;       // R(s_t, a_t), [N]
  std::vector<Tensor> next_states;   // f(s_t, a_t) before any reset
  std::vector<std::vector<uint8_t>> done;   // episode ended at step t
  std::vector<std::vector<uint8_t>> early;  // ... by leaving the track
  // sources[t][i * k + m]: window step whose frame fills slot m of env i's
  // observation at step t, or -1 for a frame from an earlier window.
  std::vector<std::vector<int>> sources;
  Tensor final_state;  // s_h, after resets
};

struct Rollout {
  RolloutBatch batch;
  Tensor objective;   // J (scalar, on the tape)
  Tensor actor_loss;  // -J / (N h)
  double mean_return = 0.0;  // J / (N h), as a number
};

// Standard normal noises eps_t for one window, one stream per
// (seed, window, step, env).
std::vector<Tensor> sample_noise(uint64_t seed, int64_t window, int horizon,
                                 int num_envs, int action_dim);

// Runs h steps from the stream's current state (detached first), advancing
// the stream. `theta` holds the policy parameters (tape leaves or
// constants). Throws on non-finite objective naming the step.
Rollout rollout(const Setup& setup, Stream& stream,
                std::span<const Tensor> theta, std::span<const Tensor> noises,
                Mode mode);

// Accumulates J step by step; shared by rollouts and open-loop replays.
class Objective {
 public:
  Objective(const Setup& setup, int num_envs);
  // reward [N]; next_state is f(s_t, a_t) before resets.
  void add_step(int step, const Tensor& reward, const Tensor& next_state,
                std::span<const uint8_t> done, std::span<const uint8_t> early);
  // Adds g_h V(s_h) for envs still running and returns J.
  Tensor finish(const Tensor& final_state,
                std::span<const uint8_t> last_done);
  // Running discount of env i for the current step.
  double discount(int i) const { return discount_[i]; }

 private:
  Tensor value_sum(const Tensor& states, const std::vector<double>& weights);

  const Setup& setup_;
  int num_envs_;
  std::vector<double> discount_;
  Tensor total_;
};

}  // namespace dva::grad
