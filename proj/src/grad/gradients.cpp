#include "dva/grad/gradients.hpp"

#include <cmath>
#include <stdexcept>

#include "dva/ad/ops.hpp"

namespace dva::grad {

using namespace dva::ad;

namespace {

// Row i of a batched tensor, as a batch of one.
Tensor row(const Tensor& x, int i) {
  Shape shape = x.shape();
  const int64_t stride = x.size() / shape[0];
  shape[0] = 1;
  const double* p = x.data() + i * stride;
  return Tensor(std::move(shape), std::vector<double>(p, p + stride));
}

struct TapeRun {
  std::vector<double> grad;  // of J / (N h)
  RolloutBatch batch;
  double mean_return = 0.0;
};

TapeRun run_on_tape(const Setup& setup, Stream stream,
                    const agent::ParameterSet& theta,
                    std::span<const Tensor> noises, Mode mode) {
  Tape tape;
  const std::vector<Tensor> bound = theta.bind(tape);
  Rollout ro = rollout(setup, stream, bound, noises, mode);
  TapeRun out;
  out.grad = tape_gradient(tape, ro, bound, mode, setup);
  out.mean_return = ro.mean_return;
  out.batch = std::move(ro.batch);
  return out;
}

// Jacobian rows of `output` (size m) with respect to each of `leaves`.
// result[l] is [m, leaf size] row-major.
std::vector<std::vector<double>> jacobian(Tape& tape, const Tensor& output,
                                          std::span<const Tensor> leaves) {
  const int64_t m = output.size();
  std::vector<std::vector<double>> out(leaves.size());
  for (size_t l = 0; l < leaves.size(); ++l) out[l].resize(m * leaves[l].size());
  std::vector<double> seed(m, 0.0);
  for (int64_t r = 0; r < m; ++r) {
    tape.zero_grad();
    seed.assign(m, 0.0);
    seed[r] = 1.0;
    tape.backward(output, seed);
    for (size_t l = 0; l < leaves.size(); ++l) {
      const Tensor g = tape.grad(leaves[l]);
      const int64_t n = leaves[l].size();
      std::copy(g.data(), g.data() + n, out[l].begin() + r * n);
    }
  }
  tape.zero_grad();
  return out;
}

std::vector<double> value_gradient(const Setup& setup, const Tensor& s_row) {
  Tape tape;
  const Tensor s = tape.variable(s_row);
  tape.backward(setup.critic->value(setup.critic_params, s));
  return tape.grad(s).to_vector();
}

}  // namespace

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
  double dot = 0.0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double d = norm(a) * norm(b);
  return d > 0.0 ? dot / d : 0.0;
}

std::vector<double> tape_gradient(Tape& tape, const Rollout& rollout,
                                  std::span<const Tensor> bound, Mode mode,
                                  const Setup& setup) {
  if (setup.pixels()) {
    const size_t render_nodes = tape.node_count("render");
    // The window's first state is detached, so renderer nodes are expected
    // once some env carries a non-reset state past step 0.
    const auto& b = rollout.batch;
    bool expect_nodes = false;
    for (int t = 1; t < b.horizon && !expect_nodes; ++t) {
      for (uint8_t d : b.done[t - 1]) expect_nodes = expect_nodes || !d;
    }
    if (mode == Mode::coupled && expect_nodes && render_nodes == 0) {
      throw std::logic_error("apg: tape holds no renderer nodes");
    }
    if (mode == Mode::decoupled && render_nodes != 0) {
      throw std::logic_error("dpg: tape holds renderer nodes");
    }
  }
  tape.zero_grad();
  tape.backward(-rollout.actor_loss);
  return agent::ParameterSet::gradient(tape, bound);
}

std::vector<double> apg(const Setup& setup, Stream stream,
                        const agent::ParameterSet& theta,
                        std::span<const Tensor> noises) {
  return run_on_tape(setup, std::move(stream), theta, noises, Mode::coupled).grad;
}

std::vector<double> dpg(const Setup& setup, Stream stream,
                        const agent::ParameterSet& theta,
                        std::span<const Tensor> noises) {
  return run_on_tape(setup, std::move(stream), theta, noises, Mode::decoupled)
      .grad;
}

Decomposition decompose(const Setup& setup, const RolloutBatch& batch,
                        const agent::ParameterSet& theta) {
  const env::Env& env = *setup.env;
  const int n = batch.num_envs;
  const int h = batch.horizon;
  const int k = batch.frame_stack;
  const int ds = env.state_dim();
  const int da = env.action_dim();
  const int64_t np = theta.size();
  const double scale = 1.0 / (double(n) * h);
  const int channels = setup.pixels() ? setup.renderer->config().channels : 0;

  Decomposition out;
  out.apg.assign(np, 0.0);
  out.dpg.assign(np, 0.0);
  out.b.assign(np, 0.0);
  std::vector<std::vector<double>> lambda(h, std::vector<double>(size_t(n) * da));

  std::vector<std::vector<double>> sens(h + 1);       // D_t, [ds, np]
  std::vector<std::vector<double>> j_theta(h);        // [da, np]
  std::vector<std::vector<double>> j_obs_d(h);        // sum_m J_o[m] D, [da, np]
  std::vector<std::vector<double>> f_s(h), f_a(h);    // [ds, ds], [ds, da]
  std::vector<std::vector<double>> r_s(h), r_a(h);    // dR/ds, dR/da

  for (int i = 0; i < n; ++i) {
    for (auto& d : sens) d.assign(size_t(ds) * np, 0.0);
    for (int t = 0; t < h; ++t) {
      // Policy: a_t as a function of theta and of the states feeding o_t.
      {
        Tape tape;
        const std::vector<Tensor> th = theta.bind(tape);
        std::vector<Tensor> leaves;
        std::vector<int> taus;
        Tensor obs;
        if (setup.pixels()) {
          const Tensor stored = row(batch.observations[t], i);
          std::vector<Tensor> parts;
          for (int m = 0; m < k; ++m) {
            const int tau = batch.sources[t][size_t(i) * k + m];
            if (tau >= 0) {
              leaves.push_back(tape.variable(row(batch.states[tau], i)));
              taus.push_back(tau);
              parts.push_back(setup.renderer->render(leaves.back()));
            } else {
              parts.push_back(slice(stored, 1, int64_t(m) * channels, channels));
            }
          }
          obs = concat(parts, 1);
        } else {
          leaves.push_back(tape.variable(row(batch.states[t], i)));
          taus.push_back(t);
          obs = leaves.back();
        }
        const Tensor a = setup.policy->act(th, obs, row(batch.noises[t], i));
        std::vector<Tensor> all = th;
        all.insert(all.end(), leaves.begin(), leaves.end());
        const auto jac = jacobian(tape, a, all);

        auto& jt = j_theta[t];
        jt.assign(size_t(da) * np, 0.0);
        for (int q = 0; q < da; ++q) {
          int64_t off = 0;
          for (size_t l = 0; l < th.size(); ++l) {
            const int64_t sz = th[l].size();
            std::copy(jac[l].begin() + q * sz, jac[l].begin() + (q + 1) * sz,
                      jt.begin() + q * np + off);
            off += sz;
          }
        }
        auto& jd = j_obs_d[t];
        jd.assign(size_t(da) * np, 0.0);
        for (size_t m = 0; m < leaves.size(); ++m) {
          const auto& jo = jac[th.size() + m];  // [da, ds]
          const auto& d = sens[taus[m]];
          for (int q = 0; q < da; ++q) {
            for (int c = 0; c < ds; ++c) {
              const double w = jo[size_t(q) * ds + c];
              if (w == 0.0) continue;
              const double* dr = d.data() + size_t(c) * np;
              double* out_row = jd.data() + size_t(q) * np;
              for (int64_t p = 0; p < np; ++p) out_row[p] += w * dr[p];
            }
          }
        }
      }
      // Dynamics and reward.
      {
        Tape tape;
        const Tensor s = tape.variable(row(batch.states[t], i));
        const Tensor a = tape.variable(row(batch.actions[t], i));
        const Tensor leaves[] = {s, a};
        const auto jf = jacobian(tape, env.dynamics(s, a), leaves);
        f_s[t] = jf[0];
        f_a[t] = jf[1];
        const auto jr = jacobian(tape, env.reward(s, a), leaves);
        r_s[t] = jr[0];
        r_a[t] = jr[1];
      }
      // D_{t+1} = F_s D_t + F_a (J_theta + sum_m J_o D), zero after a reset.
      if (!batch.done[t][i]) {
        auto& next = sens[t + 1];
        for (int r = 0; r < ds; ++r) {
          double* out_row = next.data() + size_t(r) * np;
          for (int c = 0; c < ds; ++c) {
            const double w = f_s[t][size_t(r) * ds + c];
            if (w == 0.0) continue;
            const double* src = sens[t].data() + size_t(c) * np;
            for (int64_t p = 0; p < np; ++p) out_row[p] += w * src[p];
          }
          for (int q = 0; q < da; ++q) {
            const double w = f_a[t][size_t(r) * da + q];
            if (w == 0.0) continue;
            const double* a1 = j_theta[t].data() + size_t(q) * np;
            const double* a2 = j_obs_d[t].data() + size_t(q) * np;
            for (int64_t p = 0; p < np; ++p) out_row[p] += w * (a1[p] + a2[p]);
          }
        }
      }
    }

    // Discount weights, as in Objective.
    std::vector<double> coef(h), boot(h);
    double g = 1.0;
    for (int t = 0; t < h; ++t) {
      coef[t] = g;
      boot[t] = batch.done[t][i] && !batch.early[t][i] ? setup.gamma * g : 0.0;
      g = batch.done[t][i] ? 1.0 : g * setup.gamma;
    }
    const bool critic = setup.critic != nullptr;

    // Adjoint: mu_t = dJ/ds_t, lambda_t = dJ/da_t.
    std::vector<double> mu(ds, 0.0);
    if (critic && !batch.done[h - 1][i]) {
      const auto gv = value_gradient(setup, row(batch.final_state, i));
      for (int c = 0; c < ds; ++c) mu[c] = g * gv[c];
    }
    for (int t = h - 1; t >= 0; --t) {
      std::vector<double> down(ds, 0.0);
      if (!batch.done[t][i]) down = mu;
      if (critic && boot[t] != 0.0) {
        const auto gv = value_gradient(setup, row(batch.next_states[t], i));
        for (int c = 0; c < ds; ++c) down[c] += boot[t] * gv[c];
      }
      for (int q = 0; q < da; ++q) {
        double v = coef[t] * r_a[t][q];
        for (int r = 0; r < ds; ++r) v += f_a[t][size_t(r) * da + q] * down[r];
        lambda[t][size_t(i) * da + q] = v;
      }
      for (int c = 0; c < ds; ++c) {
        double v = coef[t] * r_s[t][c];
        for (int r = 0; r < ds; ++r) v += f_s[t][size_t(r) * ds + c] * down[r];
        mu[c] = v;
      }
    }

    for (int t = 0; t < h; ++t) {
      for (int q = 0; q < da; ++q) {
        const double l = lambda[t][size_t(i) * da + q] * scale;
        if (l == 0.0) continue;
        const double* jt = j_theta[t].data() + size_t(q) * np;
        const double* jd = j_obs_d[t].data() + size_t(q) * np;
        for (int64_t p = 0; p < np; ++p) {
          out.dpg[p] += l * jt[p];
          out.b[p] += l * jd[p];
          out.apg[p] += l * (jt[p] + jd[p]);
        }
      }
    }
  }
  for (int t = 0; t < h; ++t) out.lambda.emplace_back(Shape{n, da}, lambda[t]);
  return out;
}

std::vector<Tensor> openloop_gradient(const Setup& setup, const Tensor& s0,
                                      std::span<const Tensor> actions,
                                      const RolloutBatch* resets) {
  const int h = static_cast<int>(actions.size());
  if (h < 1) throw std::invalid_argument("openloop_gradient: no actions");
  const int n = static_cast<int>(s0.dim(0));
  if (resets != nullptr && (resets->horizon != h || resets->num_envs != n)) {
    throw std::invalid_argument("openloop_gradient: batch does not match");
  }
  Tape tape;
  std::vector<Tensor> leaves;
  for (const Tensor& a : actions) leaves.push_back(tape.variable(a));
  Objective objective(setup, n);
  const std::vector<uint8_t> none(n, 0);
  Tensor s = s0.detach();
  for (int t = 0; t < h; ++t) {
    const Tensor next = setup.env->dynamics(s, leaves[t]);
    const Tensor r = setup.env->reward(s, leaves[t]);
    const auto& done = resets ? resets->done[t] : none;
    const auto& early = resets ? resets->early[t] : none;
    objective.add_step(t, r, next, done, early);
    bool any = false;
    for (uint8_t d : done) any = any || d;
    if (!any) {
      s = next;
      continue;
    }
    const Tensor& after =
        t + 1 < h ? resets->states[t + 1] : resets->final_state;
    std::vector<double> keep(n), swap(n);
    for (int i = 0; i < n; ++i) {
      keep[i] = done[i] ? 0.0 : 1.0;
      swap[i] = 1.0 - keep[i];
    }
    s = next * Tensor({n, 1}, keep) + after * Tensor({n, 1}, swap);
  }
  const Tensor total =
      objective.finish(s, resets ? std::span<const uint8_t>(resets->done[h - 1])
                                 : std::span<const uint8_t>(none));
  tape.backward(total);
  std::vector<Tensor> out;
  for (const Tensor& leaf : leaves) out.push_back(tape.grad(leaf));
  return out;
}

std::vector<Tensor> improve_controls(std::span<const Tensor> actions,
                                     std::span<const Tensor> grads,
                                     double beta) {
  if (!(beta >= 0.0)) {
    throw std::invalid_argument("improve_controls: beta must be >= 0");
  }
  if (actions.size() != grads.size()) {
    throw std::invalid_argument("improve_controls: length mismatch");
  }
  std::vector<Tensor> out;
  for (size_t t = 0; t < actions.size(); ++t) {
    if (actions[t].shape() != grads[t].shape()) {
      throw std::invalid_argument("improve_controls: shape mismatch at step " +
                                  std::to_string(t));
    }
    std::vector<double> v(actions[t].size());
    for (int64_t j = 0; j < actions[t].size(); ++j) {
      v[j] = actions[t][j] + beta * grads[t][j];
    }
    out.emplace_back(actions[t].shape(), std::move(v));
  }
  return out;
}

Tensor bc_loss(const agent::GaussianPolicy& policy,
               std::span<const Tensor> theta,
               std::span<const Tensor> observations,
               std::span<const Tensor> noises,
               std::span<const Tensor> targets, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("bc_loss: beta must be > 0");
  if (observations.size() != targets.size() || noises.size() != targets.size()) {
    throw std::invalid_argument("bc_loss: length mismatch");
  }
  Tensor total = Tensor::scalar(0.0);
  for (size_t t = 0; t < targets.size(); ++t) {
    const Tensor a = policy.act(theta, observations[t].detach(), noises[t]);
    total = total + sum(square(a - targets[t].detach()));
  }
  return total * (0.5 / beta);
}

Theorem1Report verify_theorem1(const Setup& setup, const Stream& stream,
                               const agent::ParameterSet& theta,
                               std::span<const Tensor> noises, double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("verify_theorem1: beta must be > 0");
  }
  Theorem1Report out;
  Stream copy = stream;
  Tape tape;
  const std::vector<Tensor> bound = theta.bind(tape);
  const Rollout ro = rollout(setup, copy, bound, noises, Mode::decoupled);
  tape.backward(ro.objective);
  out.dpg = agent::ParameterSet::gradient(tape, bound);

  const RolloutBatch& b = ro.batch;
  const auto lambda = openloop_gradient(setup, b.states[0], b.actions, &b);
  const auto targets = improve_controls(b.actions, lambda, beta);
  Tape bc_tape;
  const std::vector<Tensor> bc_bound = theta.bind(bc_tape);
  bc_tape.backward(bc_loss(*setup.policy, bc_bound, b.observations, b.noises,
                           targets, beta));
  const auto g = agent::ParameterSet::gradient(bc_tape, bc_bound);

  out.neg_bc_grad.resize(g.size());
  std::vector<double> diff(g.size());
  for (size_t p = 0; p < g.size(); ++p) {
    out.neg_bc_grad[p] = -g[p];
    diff[p] = out.dpg[p] + g[p];
  }
  const double d = norm(out.dpg);
  if (d == 0.0) throw std::runtime_error("verify_theorem1: dpg is zero");
  out.rel_err = norm(diff) / d;
  return out;
}

GradientReport gradient_report(const Setup& setup, const Stream& stream,
                               const agent::ParameterSet& theta,
                               std::span<const Tensor> noises, bool with_b) {
  GradientReport out;
  TapeRun coupled = run_on_tape(setup, stream, theta, noises, Mode::coupled);
  TapeRun decoupled = run_on_tape(setup, stream, theta, noises, Mode::decoupled);
  out.apg = std::move(coupled.grad);
  out.dpg = std::move(decoupled.grad);
  out.mean_return = decoupled.mean_return;
  out.apg_norm = norm(out.apg);
  out.dpg_norm = norm(out.dpg);
  out.cosine = cosine(out.apg, out.dpg);
  if (with_b) {
    out.b = decompose(setup, decoupled.batch, theta).b;
    out.b_norm = norm(out.b);
    std::vector<double> r(out.apg.size());
    for (size_t p = 0; p < r.size(); ++p) r[p] = out.apg[p] - out.dpg[p] - out.b[p];
    out.residual = out.apg_norm > 0.0 ? norm(r) / out.apg_norm : norm(r);
  }
  return out;
}

}  // namespace dva::grad
