#include "dva/cli/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include "dva/ad/fd_suite.hpp"
#include "dva/ad/gradcheck.hpp"
#include "dva/ad/ops.hpp"
#include "dva/env/rng.hpp"
#include "dva/grad/gradients.hpp"
#include "dva/train/train.hpp"

namespace dva::cli {

using ad::Tensor;
using grad::Mode;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string describe(const VerifyRow& r) {
  return "config_id=" + std::to_string(r.config_id) + " h=" + std::to_string(r.h) +
         " sensor=" + r.sensor;
}

// Random policy, perturbed critic and a warmed-up stream for one checked
// configuration. Everything is seeded from (train.seed, sensor, id).
class Probe {
 public:
  Probe(const ExperimentConfig& c, bool pixels, int id) {
    const auto& ex = c.experiment;
    const auto& v = c.verify;
    train::Experiment e = ex;
    e.train.mode = pixels ? train::TrainMode::dpg : train::TrainMode::state;
    world_ = std::make_unique<train::World>(e);
    const uint64_t seed = ex.train.seed;
    const uint64_t tag = pixels ? 1 : 0;
    auto sub = [&](uint64_t k) {
      return stream_seed({seed, kVerifyStream, tag, uint64_t(id), k});
    };
    agent::AgentConfig ac = ex.agent;
    ac.head_gain = v.policy_head_gain;
    policy_ = std::make_unique<agent::GaussianPolicy>(
        world_->obs_spec(), world_->env->action_dim(), ac, sub(0));
    critic_ = std::make_unique<agent::Critic>(world_->env->state_dim(), ac, sub(1));
    // A fresh critic has a zero output layer; perturb every weight so the
    // terminal value has a nonzero state gradient.
    auto flat = critic_->params().flatten();
    std::mt19937_64 rng(sub(2));
    std::normal_distribution<double> normal(0.0, 0.1);
    for (double& w : flat) w += normal(rng);
    critic_->params().unflatten(flat);

    setup.env = world_->env.get();
    setup.renderer = world_->renderer.get();
    setup.policy = policy_.get();
    setup.critic = critic_.get();
    setup.critic_params = critic_->params().constants();
    setup.gamma = ex.train.gamma;
    setup.frame_stack = world_->frame_stack;

    stream = std::make_unique<grad::Stream>(world_->env, v.num_envs, sub(3),
                                            world_->frame_stack);
    if (v.warmup_steps > 0) {
      const auto warm = grad::sample_noise(sub(4), stream->window, v.warmup_steps,
                                           v.num_envs, action_dim());
      grad::rollout(setup, *stream, policy_->params().constants(), warm,
                    Mode::decoupled);
    }
    noise_seed_ = sub(5);
  }
  Probe(const Probe&) = delete;
  Probe& operator=(const Probe&) = delete;

  int action_dim() const { return world_->env->action_dim(); }
  agent::GaussianPolicy& policy() { return *policy_; }

  std::vector<Tensor> noise(int h) const {
    return grad::sample_noise(noise_seed_, stream->window, h,
                              stream->envs.num_envs(), action_dim());
  }

  grad::Setup setup;
  std::unique_ptr<grad::Stream> stream;

 private:
  std::unique_ptr<train::World> world_;
  std::unique_ptr<agent::GaussianPolicy> policy_;
  std::unique_ptr<agent::Critic> critic_;
  uint64_t noise_seed_ = 0;
};

const char* sensor_name(bool pixels) { return pixels ? "pixel" : "state"; }

void progress(std::ostream* log, const std::string& line) {
  if (log) *log << line << "\n" << std::flush;
}

// J of a fixed action sequence, replaying the batch's episode ends and
// reset states.
double replay_return(const grad::Setup& setup, const grad::RolloutBatch& b,
                     std::span<const double> flat) {
  const int n = b.num_envs;
  const int a = static_cast<int>(b.actions[0].dim(1));
  grad::Objective obj(setup, n);
  Tensor st = b.states[0];
  for (int t = 0; t < b.horizon; ++t) {
    const Tensor act({n, a}, {flat.begin() + t * n * a, flat.begin() + (t + 1) * n * a});
    const Tensor next = setup.env->dynamics(st, act);
    obj.add_step(t, setup.env->reward(st, act), next, b.done[t], b.early[t]);
    std::vector<double> keep(n), swap(n);
    for (int i = 0; i < n; ++i) {
      keep[i] = b.done[t][i] ? 0.0 : 1.0;
      swap[i] = 1.0 - keep[i];
    }
    const Tensor& after = t + 1 < b.horizon ? b.states[t + 1] : b.final_state;
    st = next * Tensor({n, 1}, keep) + after * Tensor({n, 1}, swap);
  }
  return obj.finish(st, b.done[b.horizon - 1]).item();
}

std::vector<int64_t> fd_coordinates(std::span<const double> g, int count,
                                    uint64_t seed) {
  const int64_t n = static_cast<int64_t>(g.size());
  if (count >= n) {
    std::vector<int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  // The largest entries plus a uniform sample.
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int top = count * 2 / 5;
  std::partial_sort(order.begin(), order.begin() + top, order.end(),
                    [&](int64_t a, int64_t b) { return std::abs(g[a]) > std::abs(g[b]); });
  std::vector<int64_t> chosen(order.begin(), order.begin() + top);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, n - 1);
  while (static_cast<int>(chosen.size()) < count) chosen.push_back(pick(rng));
  return chosen;
}

// Central differences on the chosen coordinates, measured like
// ErrorMeasure::relative. A coordinate over `tol` whose one-sided slopes
// disagree has a ReLU kink inside its bracket; the step shrinks 4x (up to
// twice) to move the kink out, and the last measurement stands.
struct KinkAwareReport {
  ad::FdReport fd;
  int kinked = 0;
};

KinkAwareReport kink_aware_fd(const std::function<double(std::span<const double>)>& f,
                              std::span<const double> x,
                              std::span<const double> analytic,
                              std::span<const int64_t> coords, double step,
                              double tol) {
  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  std::vector<double> probe(x.begin(), x.end());
  const double f0 = f(x);
  auto eval = [&](int64_t i, double delta) {
    probe[i] = x[i] + delta;
    const double v = f(probe);
    probe[i] = x[i];
    return v;
  };
  KinkAwareReport out;
  for (int64_t i : coords) {
    const double an = analytic[i];
    double s = step, err = 0.0, fd = 0.0;
    for (int attempt = 0;; ++attempt) {
      const double up = eval(i, s), down = eval(i, -s);
      fd = (up - down) / (2 * s);
      err = std::abs(fd - an) / std::max({std::abs(an), std::abs(fd), 1e-3 * scale, 1e-300});
      if (err <= tol || attempt == 2) break;
      const double right = (up - f0) / s, left = (f0 - down) / s;
      const double split = std::abs(right - left) /
                           std::max({std::abs(right), std::abs(left), 1e-3 * scale, 1e-300});
      if (split <= tol) break;  // smooth here: the mismatch is real
      if (attempt == 0) ++out.kinked;
      s /= 4;
    }
    ++out.fd.checked;
    if (err >= out.fd.max_rel_err) {
      out.fd.max_rel_err = err;
      out.fd.worst_index = i;
      out.fd.analytic_at_worst = an;
      out.fd.numeric_at_worst = fd;
    }
  }
  return out;
}

void track_worst(SuiteResult& out, double& worst, double value,
                 const VerifyRow& row, const char* column) {
  if (value >= worst) {
    worst = value;
    out.worst = describe(row) + " " + column + "=" + fmt(value);
  }
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"fd", "decomposition",
                                                 "theorem1", "diagnostics"};
  return names;
}

SuiteResult run_suite(const std::string& suite, const ExperimentConfig& config,
                      std::ostream* log) {
  if (suite == "fd") return verify_fd(config, log);
  if (suite == "decomposition") return verify_decomposition(config, log);
  if (suite == "theorem1") return verify_theorem1(config, log);
  if (suite == "diagnostics") return verify_diagnostics(config, log);
  throw ConfigError("unknown suite '" + suite +
                    "' (expected fd, decomposition, theorem1 or diagnostics)");
}

SuiteResult verify_fd(const ExperimentConfig& config, std::ostream* log) {
  const auto& v = config.verify;
  SuiteResult out;
  out.suite = "fd";
  double worst_op = -1.0, worst_rollout = -1.0;
  std::string worst_op_text;

  const auto& cases = ad::primitive_cases();
  if (v.fd_primitive_trials > 0) {
    for (size_t i = 0; i < cases.size(); ++i) {
      const auto r = ad::check_primitive(cases[i], v.fd_primitive_trials);
      VerifyRow row;
      row.config_id = static_cast<int>(i);
      row.sensor = "op:" + r.name;
      row.rel_err_fd = r.worst;
      if (r.worst > kPrimitiveFdTol || !std::isfinite(r.worst)) {
        out.failures.push_back(describe(row) + " rel_err_fd=" + fmt(r.worst) +
                               " exceeds " + fmt(kPrimitiveFdTol) + " (trial " +
                               std::to_string(r.worst_trial) + ", coordinate " +
                               std::to_string(r.at_worst.worst_index) + ")");
      }
      if (r.worst >= worst_op) {
        worst_op = r.worst;
        worst_op_text = describe(row) + " rel_err_fd=" + fmt(r.worst);
      }
      out.rows.push_back(row);
    }
    progress(log, "fd: " + std::to_string(cases.size()) +
                      " primitives, worst " + worst_op_text);
  }

  const int h = v.fd_horizon;
  for (bool pixels : {false, true}) {
    for (int id = 0; id < v.fd_seeds; ++id) {
      Probe p(config, pixels, id);
      const auto noise = p.noise(h);
      const auto& theta = p.policy().params();
      const auto analytic = grad::apg(p.setup, *p.stream, theta, noise);
      agent::ParameterSet probe = theta;
      auto f = [&](std::span<const double> x) {
        probe.unflatten(x);
        grad::Stream c = *p.stream;
        return grad::rollout(p.setup, c, probe.constants(), noise, Mode::coupled)
            .mean_return;
      };
      const auto coords = fd_coordinates(
          analytic, v.fd_coordinates,
          stream_seed({config.experiment.train.seed, kVerifyStream, 7, uint64_t(id)}));
      const auto x = theta.flatten();
      const auto kink_rep = kink_aware_fd(f, x, analytic, coords, 1e-6, kRolloutFdTol);
      const auto& policy_rep = kink_rep.fd;

      // dJ/dA on the same window, with its episode ends replayed.
      grad::Stream c = *p.stream;
      const auto ro = grad::rollout(p.setup, c, theta.constants(), noise,
                                    Mode::decoupled);
      const auto& b = ro.batch;
      const auto lambda =
          grad::openloop_gradient(p.setup, b.states[0], b.actions, &b);
      std::vector<double> acts, grad_a;
      for (int t = 0; t < h; ++t) {
        for (double a : b.actions[t].values()) acts.push_back(a);
        for (double g : lambda[t].values()) grad_a.push_back(g);
      }
      const auto action_rep = ad::compare_with_finite_differences(
          [&](std::span<const double> a) { return replay_return(p.setup, b, a); },
          acts, grad_a, 1e-6, ad::ErrorMeasure::relative);

      VerifyRow row;
      row.config_id = id;
      row.h = h;
      row.sensor = sensor_name(pixels);
      const double err = std::max(policy_rep.max_rel_err, action_rep.max_rel_err);
      row.rel_err_fd = err;
      row.apg_norm = grad::norm(analytic);
      if (!(err < kRolloutFdTol)) {
        const bool policy_worse = policy_rep.max_rel_err >= action_rep.max_rel_err;
        const auto& r = policy_worse ? policy_rep : action_rep;
        out.failures.push_back(
            describe(row) + " rel_err_fd=" + fmt(err) + " exceeds " +
            fmt(kRolloutFdTol) + " (" + (policy_worse ? "policy" : "action") +
            " coordinate " + std::to_string(r.worst_index) + ": analytic " +
            fmt(r.analytic_at_worst) + ", numeric " + fmt(r.numeric_at_worst) + ")");
      }
      track_worst(out, worst_rollout, err, row, "rel_err_fd");
      out.rows.push_back(row);
      progress(log, "fd: " + describe(row) + " policy " +
                        fmt(policy_rep.max_rel_err) + " actions " +
                        fmt(action_rep.max_rel_err) + " kinked " +
                        std::to_string(kink_rep.kinked));
    }
  }
  out.summary = {{"primitive_worst", worst_op}, {"rollout_worst", worst_rollout}};
  // Report whichever is closer to its tolerance.
  if (worst_op / kPrimitiveFdTol > worst_rollout / kRolloutFdTol) {
    out.worst = worst_op_text;
  }
  return out;
}

SuiteResult verify_decomposition(const ExperimentConfig& config,
                                 std::ostream* log) {
  const auto& v = config.verify;
  SuiteResult out;
  out.suite = "decomposition";
  double worst = -1.0;
  for (bool pixels : {false, true}) {
    for (int h : v.horizons) {
      double local = 0.0;
      for (int id = 0; id < v.seeds; ++id) {
        Probe p(config, pixels, id);
        const auto rep = grad::gradient_report(p.setup, *p.stream,
                                               p.policy().params(), p.noise(h), true);
        VerifyRow row;
        row.config_id = id;
        row.h = h;
        row.sensor = sensor_name(pixels);
        row.rel_err_decomposition = rep.residual;
        row.apg_norm = rep.apg_norm;
        row.dpg_norm = rep.dpg_norm;
        row.cosine = rep.cosine;
        if (!(rep.residual < kDecompositionTol)) {
          out.failures.push_back(describe(row) + " rel_err_decomposition=" +
                                 fmt(rep.residual) + " exceeds " +
                                 fmt(kDecompositionTol));
        }
        if (h == 1 && rep.b_norm != 0.0) {
          out.failures.push_back(describe(row) + " B is not exactly zero at h=1 (|B|=" +
                                 fmt(rep.b_norm) + ")");
        }
        track_worst(out, worst, rep.residual, row, "rel_err_decomposition");
        local = std::max(local, rep.residual);
        out.rows.push_back(row);
      }
      progress(log, std::string("decomposition: sensor=") + sensor_name(pixels) +
                        " h=" + std::to_string(h) + " worst " + fmt(local));
    }
  }

  // With a zero encoder the action no longer depends on the observation.
  const int h = *std::max_element(v.horizons.begin(), v.horizons.end());
  for (int id = 0; id < std::min(v.seeds, 3); ++id) {
    Probe p(config, true, id);
    auto& params = p.policy().params();
    for (size_t i = 0; i < params.tensors(); ++i) {
      if (params.name(i).rfind("encoder.", 0) == 0) {
        params.set(i, Tensor::zeros(params.value(i).shape()));
      }
    }
    const auto rep = grad::gradient_report(p.setup, *p.stream, params, p.noise(h), true);
    VerifyRow row;
    row.config_id = id;
    row.h = h;
    row.sensor = "pixel_zero_encoder";
    row.rel_err_decomposition = rep.residual;
    row.apg_norm = rep.apg_norm;
    row.dpg_norm = rep.dpg_norm;
    row.cosine = rep.cosine;
    if (rep.b_norm != 0.0) {
      out.failures.push_back(describe(row) + " B is not exactly zero (|B|=" +
                             fmt(rep.b_norm) + ")");
    }
    out.rows.push_back(row);
  }
  out.summary = {{"worst_residual", worst}};
  return out;
}

SuiteResult verify_theorem1(const ExperimentConfig& config, std::ostream* log) {
  const auto& v = config.verify;
  SuiteResult out;
  out.suite = "theorem1";
  const auto start = std::chrono::steady_clock::now();
  double worst = -1.0;
  for (bool pixels : {false, true}) {
    for (int h : v.horizons) {
      double local = 0.0;
      for (int id = 0; id < v.seeds; ++id) {
        Probe p(config, pixels, id);
        const auto noise = p.noise(h);
        VerifyRow row;
        row.config_id = id;
        row.h = h;
        row.sensor = sensor_name(pixels);
        double err = 0.0;
        for (double beta : v.betas) {
          const auto rep = grad::verify_theorem1(p.setup, *p.stream,
                                                 p.policy().params(), noise, beta);
          if (!(rep.rel_err < kTheorem1Tol)) {
            out.failures.push_back(describe(row) + " beta=" + fmt(beta) +
                                   " rel_err_theorem1=" + fmt(rep.rel_err) +
                                   " exceeds " + fmt(kTheorem1Tol));
          }
          err = std::max(err, std::isfinite(rep.rel_err) ? rep.rel_err : INFINITY);
          row.dpg_norm = grad::norm(rep.dpg);
        }
        row.rel_err_theorem1 = err;
        track_worst(out, worst, err, row, "rel_err_theorem1");
        local = std::max(local, err);
        out.rows.push_back(row);
      }
      progress(log, std::string("theorem1: sensor=") + sensor_name(pixels) +
                        " h=" + std::to_string(h) + " worst " + fmt(local));
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.summary = {{"worst_rel_err", worst}, {"seconds", seconds}};
  return out;
}

SuiteResult verify_diagnostics(const ExperimentConfig& config,
                               std::ostream* log) {
  const auto& v = config.verify;
  SuiteResult out;
  out.suite = "diagnostics";

  struct Run {
    std::vector<double> apg, dpg, cosine, apg_s, dpg_s;
  };
  auto sample = [&](bool pixels, int iterations) {
    train::Experiment e = config.experiment;
    e.train.mode = pixels ? train::TrainMode::dpg : train::TrainMode::state;
    e.train.diagnostics = true;
    e.train.max_iterations = iterations;
    e.train.eval_every = iterations;
    train::Trainer trainer(e);
    Run run;
    while (!trainer.finished()) {
      const auto r = trainer.iterate();
      VerifyRow row;
      row.config_id = r.iteration;
      row.h = e.train.horizon;
      row.sensor = sensor_name(pixels);
      row.apg_norm = r.apg_norm;
      row.dpg_norm = r.dpg_norm;
      row.cosine = r.cosine;
      out.rows.push_back(row);
      run.apg.push_back(r.apg_norm);
      run.dpg.push_back(r.dpg_norm);
      run.cosine.push_back(r.cosine.value_or(0.0));
      run.apg_s.push_back(r.apg_backward_s);
      run.dpg_s.push_back(r.dpg_backward_s);
    }
    progress(log, std::string("diagnostics: ") + sensor_name(pixels) + " run, " +
                      std::to_string(iterations) + " samples");
    return run;
  };

  const Run state = sample(false, v.diagnostic_iterations);
  const double positive =
      double(std::count_if(state.cosine.begin(), state.cosine.end(),
                           [](double c) { return c > 0.0; })) /
      double(state.cosine.size());
  const double state_apg = median(state.apg), state_dpg = median(state.dpg);

  const Run pix = sample(true, v.diagnostic_pixel_iterations);
  const double pix_apg = median(pix.apg), pix_dpg = median(pix.dpg);
  const double ratio = pix_dpg > 0.0 ? pix_apg / pix_dpg : INFINITY;

  out.summary = {{"state_cosine_positive_share", positive},
                 {"state_median_apg_norm", state_apg},
                 {"state_median_dpg_norm", state_dpg},
                 {"pixel_median_apg_norm", pix_apg},
                 {"pixel_median_dpg_norm", pix_dpg},
                 {"pixel_norm_ratio", ratio},
                 {"pixel_median_apg_backward_s", median(pix.apg_s)},
                 {"pixel_median_dpg_backward_s", median(pix.dpg_s)}};
  if (positive < kCosinePositiveShare) {
    out.failures.push_back("state: cosine(apg, dpg) > 0 on " + fmt(positive) +
                           " of samples, below " + fmt(kCosinePositiveShare));
  }
  if (state_apg > state_dpg) {
    out.failures.push_back("state: median |apg| " + fmt(state_apg) +
                           " exceeds median |dpg| " + fmt(state_dpg));
  }
  if (ratio < 1.0) {
    out.failures.push_back("pixel: median |apg| / median |dpg| = " + fmt(ratio) +
                           ", below 1");
  }
  out.worst = "state cosine share " + fmt(positive) + ", state norm ratio " +
              fmt(state_apg / state_dpg) + ", pixel norm ratio " + fmt(ratio);
  return out;
}

const char* verify_csv_header() {
  return "config_id,h,sensor,rel_err_decomposition,rel_err_theorem1,rel_err_fd,"
         "apg_norm,dpg_norm,cosine";
}

std::string verify_csv_row(const VerifyRow& r) {
  auto cell = [](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return buf;
  };
  std::ostringstream s;
  s << r.config_id << "," << r.h << "," << r.sensor << ","
    << cell(r.rel_err_decomposition) << "," << cell(r.rel_err_theorem1) << ","
    << cell(r.rel_err_fd) << "," << cell(r.apg_norm) << "," << cell(r.dpg_norm)
    << "," << cell(r.cosine);
  return s.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace dva::cli
