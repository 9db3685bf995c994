#include "dva/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

#include "dva/ad/ops.hpp"
#include "dva/env/rng.hpp"
#include "dva/grad/gradients.hpp"

namespace dva::train {

using ad::Tape;
using ad::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw std::invalid_argument("train." + field + ": " + msg);
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::dpg: return "dpg";
    case TrainMode::apg: return "apg";
    case TrainMode::state: return "state";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "dpg") return TrainMode::dpg;
  if (name == "apg") return TrainMode::apg;
  if (name == "state") return TrainMode::state;
  throw std::invalid_argument("train.mode: expected dpg, apg or state, got '" +
                              name + "'");
}

void TrainConfig::validate() const {
  if (horizon < 1) fail("horizon", "must be >= 1");
  if (num_envs < 1) fail("num_envs", "must be >= 1");
  if (!(actor_lr >= 0.0)) fail("actor_lr", "must be >= 0");
  if (!(critic_lr >= 0.0)) fail("critic_lr", "must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma", "must be in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda", "must be in [0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps", "must be > 0");
  if (critic_iterations < 1) fail("critic_iterations", "must be >= 1");
  if (critic_minibatches < 1) fail("critic_minibatches", "must be >= 1");
  if (critic_minibatches > horizon * num_envs) {
    fail("critic_minibatches", "more minibatches than window states");
  }
  if (!(target_alpha >= 0.0 && target_alpha <= 1.0)) {
    fail("target_alpha", "must be in [0, 1]");
  }
  if (frame_stack < 1) fail("frame_stack", "must be >= 1");
  if (max_iterations < 1) fail("max_iterations", "must be >= 1");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (eval_episodes < 1) fail("eval_episodes", "must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.num_envs = 16;
  c.horizon = 16;
  c.frame_stack = 3;
  return c;
}

void Experiment::validate() const {
  train.validate();
  env.validate();
  scene.validate();
  agent.validate();
}

Adam::Adam(size_t size, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad,
                double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("adam: size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double decayed_lr(double lr, int iteration, int max_iterations) {
  if (iteration >= max_iterations) return 0.0;
  return lr * (1.0 - double(iteration) / double(max_iterations));
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  const double n = grad::norm(grad);
  if (max_norm > 0.0 && n > max_norm) {
    const double f = max_norm / n;
    for (double& g : grad) g *= f;
  }
  return n;
}

std::vector<double> td_lambda_targets(const grad::RolloutBatch& batch,
                                      std::span<const double> next_value,
                                      double gamma, double lambda) {
  const int h = batch.horizon, n = batch.num_envs;
  if (next_value.size() != size_t(h) * n) {
    throw std::invalid_argument("td_lambda_targets: next_value size");
  }
  std::vector<double> out(size_t(h) * n);
  for (int i = 0; i < n; ++i) {
    for (int t = h - 1; t >= 0; --t) {
      const size_t k = size_t(t) * n + i;
      const double boot = batch.early[t][i] ? 0.0 : next_value[k];
      const double r = batch.rewards[t][i];
      if (t == h - 1 || batch.done[t][i]) {
        out[k] = r + gamma * boot;
      } else {
        out[k] = r + gamma * ((1.0 - lambda) * boot + lambda * out[k + n]);
      }
    }
  }
  return out;
}

void mix_target(agent::ParameterSet& target, const agent::ParameterSet& live,
                double alpha) {
  auto t = target.flatten();
  const auto l = live.flatten();
  if (t.size() != l.size()) throw std::invalid_argument("mix_target: size mismatch");
  for (size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * l[i];
  target.unflatten(t);
}

World::World(const Experiment& exp) : env(env::make_env(exp.env)) {
  if (exp.train.mode != TrainMode::state) {
    renderer = std::make_unique<raster::Renderer>(*env, exp.scene);
    frame_stack = exp.train.frame_stack;
  }
}

agent::ObsSpec World::obs_spec() const {
  agent::ObsSpec o;
  o.state_dim = env->state_dim();
  if (renderer) {
    o.pixels = true;
    o.channels = frame_stack * renderer->config().channels;
    o.height = renderer->config().height;
    o.width = renderer->config().width;
  } else {
    o.pixels = false;
  }
  return o;
}

EvalResult evaluate(const World& world, const agent::GaussianPolicy& policy,
                    int episodes, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  env::VecEnv envs(world.env, episodes, stream_seed({seed, kEvalStream}));
  raster::FrameStack frames(world.frame_stack, episodes);
  const auto params = policy.params().constants();
  const Tensor zeros = Tensor::zeros({episodes, world.env->action_dim()});
  std::vector<uint8_t> alive(episodes, 1), fresh(episodes, 1);
  EvalResult out;
  out.returns.assign(episodes, 0.0);
  for (int t = 0; t < world.env->episode_length(); ++t) {
    const Tensor& s = envs.state();
    Tensor obs = s;
    if (world.renderer) {
      frames.push(world.renderer->render_detached(s), fresh);
      obs = frames.observation();
    }
    const env::StepResult r = envs.step(policy.act(params, obs, zeros));
    for (int i = 0; i < episodes; ++i) {
      if (!alive[i]) continue;
      out.returns[i] += r.reward[i];
      if (r.done[i]) alive[i] = 0;
    }
    fresh = r.done;
    envs.advance(r);
  }
  double sum = 0.0;
  for (double v : out.returns) sum += v;
  out.mean = sum / episodes;
  double var = 0.0;
  for (double v : out.returns) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / episodes);
  return out;
}

Trainer::Trainer(Experiment exp)
    : exp_((exp.validate(), std::move(exp))),
      world_(exp_),
      policy_(world_.obs_spec(), world_.env->action_dim(), exp_.agent,
              stream_seed({exp_.train.seed, kInitStream, 0})),
      critic_(world_.env->state_dim(), exp_.agent,
              stream_seed({exp_.train.seed, kInitStream, 1})),
      target_(critic_.params()),
      actor_opt_(policy_.params().size(), exp_.train.adam_beta1,
                 exp_.train.adam_beta2, exp_.train.adam_eps),
      critic_opt_(critic_.params().size(), exp_.train.adam_beta1,
                  exp_.train.adam_beta2, exp_.train.adam_eps),
      stream_(world_.env, exp_.train.num_envs, exp_.train.seed,
              world_.frame_stack) {}

grad::Setup Trainer::setup() const {
  grad::Setup s;
  s.env = world_.env.get();
  s.renderer = world_.renderer.get();
  s.policy = &policy_;
  if (exp_.train.critic_enabled) {
    s.critic = &critic_;
    s.critic_params = critic_.params().constants();
  }
  s.gamma = exp_.train.gamma;
  s.frame_stack = world_.frame_stack;
  return s;
}

namespace {

struct ActorPass {
  std::vector<double> grad;  // of J / (N h)
  grad::RolloutBatch batch;
  double actor_loss = 0.0;
  double window_return = 0.0;
  double backward_s = 0.0;
};

ActorPass actor_pass(const grad::Setup& setup, grad::Stream& stream,
                     const agent::ParameterSet& theta,
                     std::span<const Tensor> noises, grad::Mode mode) {
  Tape tape;
  const auto bound = theta.bind(tape);
  grad::Rollout ro = grad::rollout(setup, stream, bound, noises, mode);
  ActorPass out;
  const auto t0 = Clock::now();
  out.grad = grad::tape_gradient(tape, ro, bound, mode, setup);
  out.backward_s = seconds_since(t0);
  out.actor_loss = ro.actor_loss.item();
  out.window_return = ro.mean_return;
  out.batch = std::move(ro.batch);
  return out;
}

}  // namespace

IterationRecord Trainer::iterate() {
  const TrainConfig& c = exp_.train;
  if (finished()) throw std::logic_error("trainer: max_iterations reached");
  const auto t0 = Clock::now();
  const grad::Setup s = setup();
  const auto noises = grad::sample_noise(c.seed, iteration_, c.horizon,
                                         c.num_envs, world_.env->action_dim());
  const grad::Mode mode =
      c.mode == TrainMode::dpg ? grad::Mode::decoupled : grad::Mode::coupled;
  IterationRecord rec;
  ActorPass pass;
  try {
    if (c.diagnostics) {
      grad::Stream coupled = stream_, decoupled = stream_;
      ActorPass a = actor_pass(s, coupled, policy_.params(), noises,
                               grad::Mode::coupled);
      ActorPass d = actor_pass(s, decoupled, policy_.params(), noises,
                               grad::Mode::decoupled);
      rec.cosine = grad::cosine(a.grad, d.grad);
      rec.apg_norm = grad::norm(a.grad);
      rec.dpg_norm = grad::norm(d.grad);
      if (c.log_wall_time) {
        rec.apg_backward_s = a.backward_s;
        rec.dpg_backward_s = d.backward_s;
      }
      if (mode == grad::Mode::coupled) {
        pass = std::move(a);
        stream_ = std::move(coupled);
      } else {
        pass = std::move(d);
        stream_ = std::move(decoupled);
      }
    } else {
      pass = actor_pass(s, stream_, policy_.params(), noises, mode);
    }
  } catch (const env::NonFiniteState& e) {
    throw TrainingAborted(std::string("iteration ") + std::to_string(iteration_ + 1) +
                          ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw TrainingAborted(std::string("iteration ") + std::to_string(iteration_ + 1) +
                          ": " + e.what());
  }
  if (!all_finite(pass.grad)) {
    throw TrainingAborted("iteration " + std::to_string(iteration_ + 1) +
                          ": non-finite policy gradient");
  }
  rec.window_return = pass.window_return;
  rec.actor_loss = pass.actor_loss;

  // Adam descends the actor loss -J / (N h).
  std::vector<double> g = pass.grad;
  for (double& v : g) v = -v;
  rec.grad_norm = clip_global_norm(g, c.grad_clip);
  auto theta = policy_.params().flatten();
  actor_opt_.step(theta, g, decayed_lr(c.actor_lr, iteration_, c.max_iterations));
  if (!all_finite(theta)) {
    throw TrainingAborted("iteration " + std::to_string(iteration_ + 1) +
                          ": non-finite policy parameters");
  }
  policy_.params().unflatten(theta);

  if (c.critic_enabled) {
    rec.critic_loss = fit_critic(pass.batch);
    mix_target(target_, critic_.params(), c.target_alpha);
  }

  ++iteration_;
  rec.iteration = iteration_;
  rec.env_steps = int64_t(iteration_) * c.num_envs * c.horizon;
  if (iteration_ % c.eval_every == 0 || finished()) {
    rec.eval_return = evaluate(c.eval_episodes).mean;
  }
  elapsed_ += seconds_since(t0);
  rec.wall_s = c.log_wall_time ? elapsed_ : 0.0;
  return rec;
}

double Trainer::fit_critic(const grad::RolloutBatch& batch) {
  const TrainConfig& c = exp_.train;
  const int total = batch.horizon * batch.num_envs;
  const int d = world_.env->state_dim();
  const Tensor states = ad::concat(batch.states, 0);
  const Tensor next_value =
      critic_.value(target_.constants(), ad::concat(batch.next_states, 0));
  const auto targets = td_lambda_targets(batch, next_value.values(), c.gamma,
                                         c.lambda);
  const double lr = decayed_lr(c.critic_lr, iteration_, c.max_iterations);
  auto rng = make_stream({c.seed, kCriticStream, uint64_t(iteration_)});
  std::vector<int> order(total);
  double last_pass = 0.0;
  for (int pass = 0; pass < c.critic_iterations; ++pass) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    last_pass = 0.0;
    for (int m = 0; m < c.critic_minibatches; ++m) {
      const int lo = int(int64_t(total) * m / c.critic_minibatches);
      const int hi = int(int64_t(total) * (m + 1) / c.critic_minibatches);
      const int b = hi - lo;
      std::vector<double> xs(size_t(b) * d), ys(b);
      for (int j = 0; j < b; ++j) {
        const int k = order[lo + j];
        std::copy(states.data() + size_t(k) * d, states.data() + size_t(k + 1) * d,
                  xs.begin() + size_t(j) * d);
        ys[j] = targets[k];
      }
      Tape tape;
      const auto bound = critic_.params().bind(tape);
      const Tensor v = critic_.value(bound, Tensor({b, d}, std::move(xs)));
      const Tensor loss = ad::mean(ad::square(v - Tensor({b}, std::move(ys))));
      tape.backward(loss);
      auto g = agent::ParameterSet::gradient(tape, bound);
      if (!std::isfinite(loss.item()) || !all_finite(g)) {
        throw TrainingAborted("iteration " + std::to_string(iteration_ + 1) +
                              ": non-finite critic loss");
      }
      clip_global_norm(g, c.grad_clip);
      auto phi = critic_.params().flatten();
      critic_opt_.step(phi, g, lr);
      critic_.params().unflatten(phi);
      last_pass += loss.item() / c.critic_minibatches;
    }
  }
  return last_pass;
}

EvalResult Trainer::evaluate(int episodes) const {
  return train::evaluate(world_, policy_, episodes, exp_.train.seed);
}

void Trainer::save(const std::string& dir, const std::string& tag) const {
  agent::save_checkpoint(dir + "/policy_" + tag + ".ckpt", policy_.params(),
                         policy_.architecture_hash());
  agent::save_checkpoint(dir + "/critic_" + tag + ".ckpt", critic_.params(),
                         critic_.architecture_hash());
}

const char* metrics_header() {
  return "iteration,env_steps,wall_s,mean_eval_return,actor_loss,critic_loss,"
         "grad_norm,cosine_apg_dpg";
}

std::string metrics_row(const IterationRecord& r) {
  std::string row = std::to_string(r.iteration) + "," +
                    std::to_string(r.env_steps) + "," + num(r.wall_s) + ",";
  if (r.eval_return) row += num(*r.eval_return);
  row += "," + num(r.actor_loss) + "," + num(r.critic_loss) + "," +
         num(r.grad_norm) + ",";
  if (r.cosine) row += num(*r.cosine);
  return row;
}

const char* diagnostics_header() {
  return "iteration,cosine,apg_norm,dpg_norm,window_return,apg_backward_s,"
         "dpg_backward_s";
}

std::string diagnostics_row(const IterationRecord& r) {
  return std::to_string(r.iteration) + "," + num(r.cosine.value_or(0.0)) + "," +
         num(r.apg_norm) + "," + num(r.dpg_norm) + "," + num(r.window_return) +
         "," + num(r.apg_backward_s) + "," + num(r.dpg_backward_s);
}

RunResult run(Trainer& trainer, const std::string& out_dir, std::ostream* log) {
  std::filesystem::create_directories(out_dir);
  const TrainConfig& c = trainer.experiment().train;
  std::ofstream metrics(out_dir + "/metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write " + out_dir + "/metrics.csv");
  metrics << metrics_header() << "\n";
  std::ofstream diag;
  if (c.diagnostics) {
    diag.open(out_dir + "/diagnostics.csv");
    diag << diagnostics_header() << "\n";
  }
  RunResult out;
  while (!trainer.finished()) {
    IterationRecord r;
    try {
      r = trainer.iterate();
    } catch (const TrainingAborted&) {
      trainer.save(out_dir, "abort");
      throw;
    }
    metrics << metrics_row(r) << "\n" << std::flush;
    if (c.diagnostics) diag << diagnostics_row(r) << "\n" << std::flush;
    if (r.eval_return) out.final_return = *r.eval_return;
    if (log && r.eval_return) {
      *log << "iter " << r.iteration << " eval_return " << num(*r.eval_return)
           << " actor_loss " << num(r.actor_loss) << "\n" << std::flush;
    }
    if (c.checkpoint_every > 0 && r.iteration % c.checkpoint_every == 0) {
      trainer.save(out_dir, "iter" + std::to_string(r.iteration));
    }
    out.iterations = r.iteration;
    out.env_steps = r.env_steps;
  }
  trainer.save(out_dir, "final");
  return out;
}

}  // namespace dva::train
