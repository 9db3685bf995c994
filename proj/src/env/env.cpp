#include "dva/env/env.hpp"

#include <cmath>

#include "dva/ad/ops.hpp"
#include "dva/env/rng.hpp"

namespace dva::env {

using namespace dva::ad;

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) {
    throw std::invalid_argument(std::string("env.") + field + ": " + what);
  }
}

Tensor column(const Tensor& s, int i) { return slice(s, 1, i, 1); }

}  // namespace

void EnvConfig::validate() const {
  require(name == "cartpole" || name == "reacher", "name",
          "expected cartpole or reacher");
  require(dt > 0.0, "dt", "must be > 0");
  require(substeps >= 1, "substeps", "must be >= 1");
  require(cart_mass > 0.0, "cart_mass", "must be > 0");
  require(pole_mass > 0.0, "pole_mass", "must be > 0");
  require(pole_half_length > 0.0, "pole_half_length", "must be > 0");
  require(force_limit > 0.0, "force_limit", "must be > 0");
  require(episode_length >= 1, "episode_length", "must be >= 1");
  require(x_limit > 0.0, "x_limit", "must be > 0");
  require(init_scale >= 0.0, "init_scale", "must be >= 0");
}

NonFiniteState::NonFiniteState(int env_index, const std::string& where)
    : std::runtime_error("non-finite state in env " +
                         std::to_string(env_index) + " " + where),
      env_index_(env_index) {}

void Env::initial_state(std::mt19937_64& rng, std::span<double> row) const {
  std::uniform_real_distribution<double> u(-config_.init_scale,
                                           config_.init_scale);
  for (double& v : row) v = config_.init_scale > 0.0 ? u(rng) : 0.0;
}

std::unique_ptr<Env> make_env(const EnvConfig& config) {
  config.validate();
  if (config.name == "reacher") return std::make_unique<Reacher>(config);
  return std::make_unique<Cartpole>(config);
}

// Frictionless cart-pole, state (x, theta, x_dot, theta_dot) with theta = 0
// upright. Semi-implicit Euler over `substeps` substeps.
Cartpole::Cartpole(EnvConfig config) : Env(std::move(config)) {
  config_.validate();
}

Tensor Cartpole::dynamics(const Tensor& s, const Tensor& a) const {
  const double mc = config_.cart_mass, mp = config_.pole_mass;
  const double l = config_.pole_half_length, g = config_.gravity;
  const double total = mc + mp;
  const double h = config_.dt / config_.substeps;
  const double fmax = config_.force_limit;

  Tensor x = column(s, 0), th = column(s, 1);
  Tensor xd = column(s, 2), thd = column(s, 3);
  const Tensor force = smooth_clamp(a, -fmax, fmax);
  for (int k = 0; k < config_.substeps; ++k) {
    const Tensor sin_t = sin(th), cos_t = cos(th);
    const Tensor temp = (force + square(thd) * sin_t * (mp * l)) * (1.0 / total);
    const Tensor denom = (square(cos_t) * (-mp / total) + 4.0 / 3.0) * l;
    const Tensor th_acc = (sin_t * g - cos_t * temp) / denom;
    const Tensor x_acc = temp - th_acc * cos_t * (mp * l / total);
    xd = xd + x_acc * h;
    thd = thd + th_acc * h;
    x = x + xd * h;
    th = th + thd * h;
  }
  return concat({x, th, xd, thd}, 1);
}

Tensor Cartpole::reward(const Tensor& s, const Tensor& a) const {
  // 10 - theta^2 - 0.1 theta_dot^2 - 0.05 x^2 - 0.1 x_dot^2
  static const Tensor weights({4}, {0.05, 1.0, 0.1, 0.1});
  return sum_axis(square(s) * weights, 1) * -1.0 + 10.0;
}

bool Cartpole::out_of_bounds(std::span<const double> row) const {
  return std::abs(row[0]) >= config_.x_limit;
}

std::vector<double> Cartpole::energy(const Tensor& s) const {
  const double mc = config_.cart_mass, mp = config_.pole_mass;
  const double l = config_.pole_half_length, g = config_.gravity;
  std::vector<double> out;
  for (int64_t i = 0; i < s.dim(0); ++i) {
    const double th = s[i * 4 + 1], xd = s[i * 4 + 2], thd = s[i * 4 + 3];
    const double vx = xd + l * thd * std::cos(th);
    const double vy = -l * thd * std::sin(th);
    const double kinetic = 0.5 * mc * xd * xd + 0.5 * mp * (vx * vx + vy * vy) +
                           0.5 * (mp * l * l / 3.0) * thd * thd;
    out.push_back(kinetic + mp * g * l * std::cos(th));
  }
  return out;
}

// Point mass in the plane, state (px, py, vx, vy), force input.
Reacher::Reacher(EnvConfig config) : Env(std::move(config)) {
  config_.validate();
}

Tensor Reacher::dynamics(const Tensor& s, const Tensor& a) const {
  const double h = config_.dt / config_.substeps;
  const Tensor acc =
      smooth_clamp(a, -config_.force_limit, config_.force_limit) *
      (1.0 / config_.cart_mass);
  Tensor p = slice(s, 1, 0, 2), v = slice(s, 1, 2, 2);
  for (int k = 0; k < config_.substeps; ++k) {
    v = v + acc * h;
    p = p + v * h;
  }
  return concat({p, v}, 1);
}

Tensor Reacher::reward(const Tensor& s, const Tensor& a) const {
  const Tensor goal({2}, {config_.goal_x, config_.goal_y});
  const Tensor dist = sum_axis(square(slice(s, 1, 0, 2) - goal), 1);
  return (dist + sum_axis(square(a), 1) * 0.01) * -1.0;
}

VecEnv::VecEnv(std::shared_ptr<const Env> env, int num_envs, uint64_t seed)
    : env_(std::move(env)),
      num_envs_(num_envs),
      seed_(seed),
      step_count_(num_envs, 0),
      reset_count_(num_envs, 0) {
  if (num_envs < 1) throw std::invalid_argument("num_envs must be >= 1");
  reset_all();
}

void VecEnv::reset_row(int i, std::span<double> row) {
  auto rng = make_stream({seed_, kResetStream, uint64_t(i), reset_count_[i]++});
  env_->initial_state(rng, row);
  step_count_[i] = 0;
}

const Tensor& VecEnv::reset_all() {
  const int d = env_->state_dim();
  std::vector<double> values(size_t(num_envs_) * d);
  for (int i = 0; i < num_envs_; ++i) {
    reset_row(i, std::span<double>(values).subspan(size_t(i) * d, d));
  }
  state_ = Tensor({num_envs_, d}, std::move(values));
  return state_;
}

StepResult VecEnv::step(const Tensor& action) {
  if (action.rank() != 2 || action.dim(0) != num_envs_ ||
      action.dim(1) != env_->action_dim()) {
    throw std::invalid_argument("step: action shape " +
                                shape_string(action.shape()) + ", expected [" +
                                std::to_string(num_envs_) + "," +
                                std::to_string(env_->action_dim()) + "]");
  }
  StepResult r;
  r.reward = env_->reward(state_, action);
  r.next_state = env_->dynamics(state_, action);
  const int d = env_->state_dim();
  r.done.assign(num_envs_, 0);
  r.early.assign(num_envs_, 0);
  for (int i = 0; i < num_envs_; ++i) {
    const auto row = r.next_state.values().subspan(size_t(i) * d, d);
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw NonFiniteState(i, "after step " + std::to_string(step_count_[i]));
      }
    }
    ++step_count_[i];
    r.early[i] = env_->out_of_bounds(row);
    r.done[i] = r.early[i] || step_count_[i] >= env_->episode_length();
  }
  return r;
}

const Tensor& VecEnv::advance(const StepResult& result) {
  bool any = false;
  for (uint8_t d : result.done) any = any || d;
  if (!any) {
    state_ = result.next_state;
    return state_;
  }
  const int d = env_->state_dim();
  std::vector<double> keep(num_envs_), fresh(size_t(num_envs_) * d, 0.0);
  for (int i = 0; i < num_envs_; ++i) {
    keep[i] = result.done[i] ? 0.0 : 1.0;
    if (result.done[i]) {
      reset_row(i, std::span<double>(fresh).subspan(size_t(i) * d, d));
    }
  }
  // Masked blend: finished rows take the reset state and pass no gradient.
  state_ = result.next_state * Tensor({num_envs_, 1}, keep) +
           Tensor({num_envs_, d}, fresh);
  return state_;
}

}  // namespace dva::env
