#pragma once

// The `dva` command line: train, verify-gradients, render-preview, eval.

#include <ostream>
#include <string>
#include <vector>

#include "dva/cli/config.hpp"

namespace dva::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitUsage = 2,
  kExitAborted = 3,
};

const char* version();

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

// One state per line, comma separated; blank lines and lines starting with
// '#' are skipped. Throws ConfigError naming the line of a malformed row.
std::vector<std::vector<double>> parse_states(const std::string& text,
                                              int state_dim);

// Resolved config, seed, code version and command line, as JSON.
std::string manifest_json(const std::string& command,
                          const ExperimentConfig& config,
                          const std::vector<std::string>& args);

}  // namespace dva::cli
