#pragma once

// JSON experiment configuration. Every field has a default; unknown keys
// and ill-typed values are rejected with the dotted field name.

#include <stdexcept>
#include <string>
#include <vector>

#include "dva/train/train.hpp"

namespace dva::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Options of the verify-gradients suites.
struct VerifyConfig {
  int seeds = 20;
  std::vector<int> horizons{1, 4, 16};
  std::vector<double> betas{1e-3, 1e-1};
  int num_envs = 2;
  int warmup_steps = 6;  // steps taken before the checked window
  int fd_horizon = 8;
  int fd_seeds = 3;
  int fd_coordinates = 120;  // policy coordinates probed per seed
  int fd_primitive_trials = 100;
  int diagnostic_iterations = 200;        // state-sensor run
  int diagnostic_pixel_iterations = 60;   // pixel-sensor run
  // Output-head gain of the policies under test; larger than the training
  // init so that actions depend visibly on observations.
  double policy_head_gain = 1.0;

  void validate() const;
};

struct ExperimentConfig {
  train::Experiment experiment;
  VerifyConfig verify;

  void validate() const;
};

// Desk preset as the default profile of the CLI.
ExperimentConfig default_config();

std::string to_json(const ExperimentConfig& config, int indent = 2);
// Parses a document over the defaults. Throws ConfigError.
ExperimentConfig from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Applies "key=value" overrides to a JSON document. Keys are dotted
// (train.seed) or bare when exactly one section has the key (seed).
// Values are parsed as JSON, falling back to a plain string.
std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides);

}  // namespace dva::cli
