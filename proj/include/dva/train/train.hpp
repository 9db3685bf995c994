#pragma once

// Actor-critic training over short differentiable rollouts: decoupled (dpg on
// pixels), SHAC with a differentiable renderer (apg on pixels) and SHAC on
// states (state).

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dva/agent/agent.hpp"
#include "dva/env/env.hpp"
#include "dva/grad/rollout.hpp"
#include "dva/raster/raster.hpp"

namespace dva::train {

enum class TrainMode { dpg, apg, state };

const char* mode_name(TrainMode mode);
// Throws std::invalid_argument for unknown names.
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
  int horizon = 32;
  int num_envs = 64;
  double actor_lr = 0.002;
  double critic_lr = 0.0002;
  double gamma = 0.99;
  double lambda = 0.95;
  double adam_beta1 = 0.7;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  int critic_iterations = 16;
  int critic_minibatches = 4;
  double target_alpha = 0.2;
  int frame_stack = 3;
  TrainMode mode = TrainMode::dpg;
  bool critic_enabled = true;
  int max_iterations = 500;
  uint64_t seed = 0;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  int eval_every = 10;
  int eval_episodes = 4;
  int checkpoint_every = 0;  // 0: final checkpoint only
  // Computes apg and dpg every iteration and fills the diagnostics table.
  bool diagnostics = false;
  // wall_s column; when false it is written as 0 so reruns match byte for
  // byte.
  bool log_wall_time = true;

  void validate() const;
};

// Desk-scale acceptance profile: N=16, h=16, 32x32 images, k=3.
TrainConfig desk_preset();

struct Experiment {
  TrainConfig train;
  env::EnvConfig env;
  raster::SceneConfig scene;
  agent::AgentConfig agent;

  void validate() const;
};

class Adam {
 public:
  Adam(size_t size, double beta1, double beta2, double eps);
  // params -= lr * mhat / (sqrt(vhat) + eps)
  void step(std::span<double> params, std::span<const double> grad, double lr);
  int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<double> m_, v_;
};

// lr * (1 - iteration / max_iterations); exactly 0 at max_iterations.
double decayed_lr(double lr, int iteration, int max_iterations);

// Scales grad so that its norm is at most max_norm. Returns the norm
// before clipping.
double clip_global_norm(std::span<double> grad, double max_norm);

// TD-lambda targets for a window, [h][N] flattened t-major. next_value[t][i]
// is the delayed critic at f(s_t, a_t) before any reset (ignored where the
// episode ended by leaving the track). Episodes that end inside the window
// truncate their k-step returns there.
std::vector<double> td_lambda_targets(const grad::RolloutBatch& batch,
                                      std::span<const double> next_value,
                                      double gamma, double lambda);

// target <- alpha * target + (1 - alpha) * live
void mix_target(agent::ParameterSet& target, const agent::ParameterSet& live,
                double alpha);

// Environment plus (for pixel modes) the renderer, built from an
// experiment.
struct World {
  explicit World(const Experiment& exp);
  std::shared_ptr<env::Env> env;
  std::unique_ptr<raster::Renderer> renderer;  // null in state mode
  int frame_stack = 1;
  agent::ObsSpec obs_spec() const;
};

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

// Undiscounted returns of `episodes` full-length episodes with mean actions.
// Episodes that leave the track stop accumulating there.
EvalResult evaluate(const World& world, const agent::GaussianPolicy& policy,
                    int episodes, uint64_t seed);

struct IterationRecord {
  int iteration = 0;  // completed iterations
  int64_t env_steps = 0;
  double wall_s = 0.0;
  std::optional<double> eval_return;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double grad_norm = 0.0;
  // diagnostics runs only
  std::optional<double> cosine;
  double apg_norm = 0.0;
  double dpg_norm = 0.0;
  double apg_backward_s = 0.0;
  double dpg_backward_s = 0.0;
  double window_return = 0.0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  explicit Trainer(Experiment exp);

  // One iteration of rollout, actor step, critic fit and target update.
  // Throws TrainingAborted on non-finite values; parameters are left at
  // their last good values.
  IterationRecord iterate();
  int iteration() const { return iteration_; }
  bool finished() const { return iteration_ >= exp_.train.max_iterations; }

  const Experiment& experiment() const { return exp_; }
  const World& world() const { return world_; }
  agent::GaussianPolicy& policy() { return policy_; }
  agent::Critic& critic() { return critic_; }
  const agent::ParameterSet& target_critic() const { return target_; }

  EvalResult evaluate(int episodes) const;
  // Writes policy_<tag>.ckpt and critic_<tag>.ckpt into dir.
  void save(const std::string& dir, const std::string& tag) const;

 private:
  grad::Setup setup() const;
  double fit_critic(const grad::RolloutBatch& batch);

  Experiment exp_;
  World world_;
  agent::GaussianPolicy policy_;
  agent::Critic critic_;
  agent::ParameterSet target_;
  Adam actor_opt_;
  Adam critic_opt_;
  grad::Stream stream_;
  int iteration_ = 0;
  double elapsed_ = 0.0;
};

const char* metrics_header();
std::string metrics_row(const IterationRecord& r);
const char* diagnostics_header();
std::string diagnostics_row(const IterationRecord& r);

struct RunResult {
  double final_return = 0.0;
  int iterations = 0;
  int64_t env_steps = 0;
};

// Runs to max_iterations, streaming CSV rows and writing checkpoints into
// out_dir (created if missing). On abort, the last good parameters are
// saved as *_abort.ckpt before TrainingAborted propagates.
RunResult run(Trainer& trainer, const std::string& out_dir,
              std::ostream* log = nullptr);

}  // namespace dva::train
