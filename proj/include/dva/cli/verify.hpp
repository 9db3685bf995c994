#pragma once

// Gradient verification suites behind `dva verify-gradients`.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dva/cli/config.hpp"

namespace dva::cli {

// Tolerances of the suites.
inline constexpr double kDecompositionTol = 1e-8;
inline constexpr double kTheorem1Tol = 1e-10;
inline constexpr double kRolloutFdTol = 1e-4;
inline constexpr double kPrimitiveFdTol = 1e-6;
inline constexpr double kCosinePositiveShare = 0.8;

struct VerifyRow {
  int config_id = 0;
  int h = 0;
  std::string sensor;  // state, pixel, or op:<primitive> in the fd suite
  std::optional<double> rel_err_decomposition;
  std::optional<double> rel_err_theorem1;
  std::optional<double> rel_err_fd;
  std::optional<double> apg_norm;
  std::optional<double> dpg_norm;
  std::optional<double> cosine;
};

struct SuiteResult {
  std::string suite;
  std::vector<VerifyRow> rows;
  // One line per violated tolerance; empty when the suite passed.
  std::vector<std::string> failures;
  // Aggregates (diagnostics suite: cosine share, norm medians, ...).
  std::vector<std::pair<std::string, double>> summary;
  // Worst case of the suite, whether or not it failed.
  std::string worst;

  bool passed() const { return failures.empty(); }
};

const std::vector<std::string>& suite_names();

// Throws ConfigError for an unknown suite. Progress lines go to `log`.
SuiteResult run_suite(const std::string& suite, const ExperimentConfig& config,
                      std::ostream* log = nullptr);

SuiteResult verify_fd(const ExperimentConfig& config, std::ostream* log);
SuiteResult verify_decomposition(const ExperimentConfig& config,
                                 std::ostream* log);
SuiteResult verify_theorem1(const ExperimentConfig& config, std::ostream* log);
SuiteResult verify_diagnostics(const ExperimentConfig& config,
                               std::ostream* log);

const char* verify_csv_header();
std::string verify_csv_row(const VerifyRow& row);

double median(std::vector<double> v);

}  // namespace dva::cli
