#include "dva/grad/rollout.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "dva/ad/ops.hpp"
#include "dva/env/rng.hpp"

namespace dva::grad {

using namespace dva::ad;

Stream::Stream(std::shared_ptr<const env::Env> env, int num_envs, uint64_t seed,
               int frame_stack)
    : envs(std::move(env), num_envs, seed),
      frames(frame_stack, num_envs),
      fresh(num_envs, 1) {}

std::vector<Tensor> sample_noise(uint64_t seed, int64_t window, int horizon,
                                 int num_envs, int action_dim) {
  std::vector<Tensor> out;
  out.reserve(horizon);
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> v(size_t(num_envs) * action_dim);
    for (int i = 0; i < num_envs; ++i) {
      auto rng = make_stream({seed, kNoiseStream, uint64_t(window), uint64_t(t),
                              uint64_t(i)});
      std::normal_distribution<double> normal(0.0, 1.0);
      for (int j = 0; j < action_dim; ++j) v[size_t(i) * action_dim + j] = normal(rng);
    }
    out.emplace_back(Shape{num_envs, action_dim}, std::move(v));
  }
  return out;
}

Objective::Objective(const Setup& setup, int num_envs)
    : setup_(setup), num_envs_(num_envs), discount_(num_envs, 1.0),
      total_(Tensor::scalar(0.0)) {}

Tensor Objective::value_sum(const Tensor& states,
                            const std::vector<double>& weights) {
  return sum(setup_.critic->value(setup_.critic_params, states) *
             Tensor({num_envs_}, weights));
}

void Objective::add_step(int step, const Tensor& reward,
                         const Tensor& next_state,
                         std::span<const uint8_t> done,
                         std::span<const uint8_t> early) {
  total_ = total_ + sum(reward * Tensor({num_envs_}, discount_));
  std::vector<double> boot(num_envs_, 0.0);
  bool any = false;
  for (int i = 0; i < num_envs_; ++i) {
    if (done[i] && !early[i]) {
      boot[i] = setup_.gamma * discount_[i];
      any = true;
    }
  }
  if (any && setup_.critic != nullptr) total_ = total_ + value_sum(next_state, boot);
  for (int i = 0; i < num_envs_; ++i) {
    discount_[i] = done[i] ? 1.0 : discount_[i] * setup_.gamma;
  }
  if (!std::isfinite(total_.item())) {
    throw std::runtime_error("non-finite objective at step " +
                             std::to_string(step));
  }
}

Tensor Objective::finish(const Tensor& final_state,
                         std::span<const uint8_t> last_done) {
  if (setup_.critic == nullptr) return total_;
  std::vector<double> w(num_envs_, 0.0);
  for (int i = 0; i < num_envs_; ++i) {
    // discount_ already holds gamma * g_{h-1} for envs that kept running.
    if (last_done.empty() || !last_done[i]) w[i] = discount_[i];
  }
  total_ = total_ + value_sum(final_state, w);
  if (!std::isfinite(total_.item())) {
    throw std::runtime_error("non-finite objective at the terminal value");
  }
  return total_;
}

Rollout rollout(const Setup& setup, Stream& stream,
                std::span<const Tensor> theta, std::span<const Tensor> noises,
                Mode mode) {
  const int h = static_cast<int>(noises.size());
  if (h < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  const int n = stream.envs.num_envs();
  const int k = setup.frame_stack;
  if (!setup.pixels() && k != 1) {
    throw std::invalid_argument("rollout: the identity sensor has no frames");
  }
  Rollout out;
  RolloutBatch& b = out.batch;
  b.num_envs = n;
  b.horizon = h;
  b.frame_stack = k;

  stream.envs.set_state(stream.envs.state().detach());
  stream.frames.detach();
  const int64_t t0 = stream.frames.time() + 1;
  Objective objective(setup, n);
  std::vector<uint8_t> last_done;
  for (int t = 0; t < h; ++t) {
    const Tensor s = stream.envs.state();
    Tensor obs;
    if (setup.pixels()) {
      const Tensor frame = mode == Mode::coupled
                               ? setup.renderer->render(s)
                               : setup.renderer->render_detached(s);
      stream.frames.push(frame, stream.fresh);
      obs = stream.frames.observation();
      std::vector<int> src(size_t(n) * k);
      for (int i = 0; i < n; ++i) {
        for (int m = 0; m < k; ++m) {
          const int64_t rel = stream.frames.source(i, m) - t0;
          src[size_t(i) * k + m] = rel < 0 ? -1 : static_cast<int>(rel);
        }
      }
      b.sources.push_back(std::move(src));
    } else {
      obs = mode == Mode::coupled ? s : s.detach();
      b.sources.push_back(std::vector<int>(n, t));
    }
    const Tensor a = setup.policy->act(theta, obs, noises[t]);
    env::StepResult r = stream.envs.step(a);
    objective.add_step(t, r.reward, r.next_state, r.done, r.early);

    b.states.push_back(s.detach());
    b.observations.push_back(obs.detach());
    b.actions.push_back(a.detach());
    b.noises.push_back(noises[t]);
    b.rewards.push_back(r.reward.detach());
    b.next_states.push_back(r.next_state.detach());
    b.done.push_back(r.done);
    b.early.push_back(r.early);
    stream.fresh = r.done;
    last_done = r.done;
    stream.envs.advance(r);
  }
  b.final_state = stream.envs.state().detach();
  out.objective = objective.finish(stream.envs.state(), last_done);
  out.actor_loss = out.objective * (-1.0 / (double(n) * h));
  out.mean_return = out.objective.item() / (double(n) * h);
  ++stream.window;
  return out;
}

}  // namespace dva::grad
