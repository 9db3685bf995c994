#pragma once

// Policy gradients of the short-horizon objective.
//
//   apg: gradient of J with observations on the tape
//   dpg: gradient of J with observations detached
//   B:   the control-regularization term apg - dpg, computed on its own
//        from local Jacobians (forward sensitivities D_t = ds_t/dtheta and
//        the open-loop adjoint lambda_t = dJ/da_t).
//
// All gradients here are of J / (N h), the negated actor loss.

#include <cstdint>
#include <span>
#include <vector>

#include "dva/agent/params.hpp"
#include "dva/grad/rollout.hpp"

namespace dva::grad {

std::vector<double> apg(const Setup& setup, Stream stream,
                        const agent::ParameterSet& theta,
                        std::span<const Tensor> noises);
std::vector<double> dpg(const Setup& setup, Stream stream,
                        const agent::ParameterSet& theta,
                        std::span<const Tensor> noises);

// Gradient of the objective recorded on `tape`, with checks that the tape
// matches the mode: an apg tape of a pixel setup must contain renderer
// nodes, a dpg tape must not.
std::vector<double> tape_gradient(Tape& tape, const Rollout& rollout,
                                  std::span<const Tensor> bound, Mode mode,
                                  const Setup& setup);

struct Decomposition {
  std::vector<double> apg;  // sum_t lambda_t^T G_t
  std::vector<double> dpg;  // sum_t lambda_t^T da_t/dtheta
  std::vector<double> b;    // sum_t lambda_t^T (da_t/do_t)(do_t/ds) D
  // lambda[t] = dJ/da_t for the whole batch, [N, A]
  std::vector<Tensor> lambda;
};

// Explicit recursion over a recorded batch. Cost grows with N h times the
// parameter count; meant for verification, not training.
Decomposition decompose(const Setup& setup, const RolloutBatch& batch,
                        const agent::ParameterSet& theta);

// dJ/da_t for fixed actions A (one [N, A] tensor per step) starting from
// s0. With `resets`, episode ends and reset states are replayed from the
// batch; without, the chain runs h steps with no termination.
std::vector<Tensor> openloop_gradient(const Setup& setup, const Tensor& s0,
                                      std::span<const Tensor> actions,
                                      const RolloutBatch* resets = nullptr);

// A + beta * grad, step by step. beta must be >= 0.
std::vector<Tensor> improve_controls(std::span<const Tensor> actions,
                                     std::span<const Tensor> grads,
                                     double beta);

// (1 / 2 beta) sum_t || mu(o_t) + sigma(o_t) eps_t - target_t ||^2 on the
// stored (detached) observations. beta must be > 0.
Tensor bc_loss(const agent::GaussianPolicy& policy,
               std::span<const Tensor> theta,
               std::span<const Tensor> observations,
               std::span<const Tensor> noises,
               std::span<const Tensor> targets, double beta);

struct Theorem1Report {
  std::vector<double> dpg;          // of the undivided return
  std::vector<double> neg_bc_grad;  // -dL_BC/dtheta
  double rel_err = 0.0;             // |dpg + dL_BC| / |dpg|
};

// dpg against the behavior-cloning gradient toward improved controls.
Theorem1Report verify_theorem1(const Setup& setup, const Stream& stream,
                               const agent::ParameterSet& theta,
                               std::span<const Tensor> noises, double beta);

struct GradientReport {
  std::vector<double> apg, dpg, b;
  double apg_norm = 0.0;
  double dpg_norm = 0.0;
  double b_norm = 0.0;
  double cosine = 0.0;    // between apg and dpg
  double residual = 0.0;  // |apg - dpg - b| / |apg|, when b was computed
  double mean_return = 0.0;
};

// apg and dpg from the same start state and noise; b (and the residual)
// only when `with_b`.
GradientReport gradient_report(const Setup& setup, const Stream& stream,
                               const agent::ParameterSet& theta,
                               std::span<const Tensor> noises, bool with_b);

double norm(std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace dva::grad
