#include "dva/cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dva/ad/tape.hpp"
#include "dva/cli/verify.hpp"
#include "dva/raster/raster.hpp"
#include "dva/train/train.hpp"

#ifndef DVA_VERSION
#define DVA_VERSION "unknown"
#endif

namespace dva::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string fault;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config (defaults: desk preset)");
  sub->add_option("--set", c.sets, "Override key=value (repeatable)")
      ->allow_extra_args(false);
  sub->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  c.seed_opt = sub->add_option("--seed", c.seed, "Seed (overrides train.seed)");
  // Scales one primitive's backward pass: op or op:factor. For testing the
  // verification suites.
  sub->add_option("--inject-fault", c.fault)->group("");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig resolve(const Common& c) {
  const std::string text = c.config_path.empty() ? "{}" : read_file(c.config_path);
  ExperimentConfig cfg = from_json(apply_overrides(text, c.sets));
  if (c.seed_opt->count() > 0) cfg.experiment.train.seed = c.seed;
  cfg.validate();
  return cfg;
}

void inject_fault(const std::string& spec) {
  if (spec.empty()) return;
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  double factor = 2.0;
  if (colon != std::string::npos) {
    try {
      size_t used = 0;
      factor = std::stod(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError("--inject-fault: bad factor in '" + spec + "'");
    }
  }
  for (int i = 0; i <= static_cast<int>(ad::Op::custom); ++i) {
    const auto op = static_cast<ad::Op>(i);
    if (name == ad::op_name(op)) {
      ad::testing::set_backward_fault(op, factor);
      return;
    }
  }
  throw ConfigError("--inject-fault: unknown op '" + name + "'");
}

struct FaultGuard {
  ~FaultGuard() { ad::testing::clear_backward_faults(); }
};

void write_manifest(const std::string& dir, const std::string& command,
                    const ExperimentConfig& cfg,
                    const std::vector<std::string>& args) {
  fs::create_directories(dir);
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  out << manifest_json(command, cfg, args) << "\n";
}

std::string num(double v, const char* format = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

int cmd_train(const Common& c, const std::vector<std::string>& args,
              std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = resolve(c);
  write_manifest(c.out_dir, "train", cfg, args);
  train::Trainer trainer(cfg.experiment);
  const auto r = train::run(trainer, c.out_dir, &err);
  out << "final_return=" << num(r.final_return) << " iters=" << r.iterations
      << " steps=" << r.env_steps << "\n";
  return kExitOk;
}

int cmd_verify(const Common& c, const std::string& suite,
               const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  const ExperimentConfig cfg = resolve(c);
  bool known = false;
  for (const auto& s : suite_names()) known = known || s == suite;
  if (!known) {
    throw ConfigError("unknown suite '" + suite +
                      "' (expected fd, decomposition, theorem1 or diagnostics)");
  }
  write_manifest(c.out_dir, "verify-gradients " + suite, cfg, args);
  const SuiteResult r = run_suite(suite, cfg, &err);
  const std::string csv_path = c.out_dir + "/verify_" + suite + ".csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << verify_csv_header() << "\n";
  for (const auto& row : r.rows) csv << verify_csv_row(row) << "\n";
  csv.close();

  for (const auto& [key, value] : r.summary) {
    out << suite << ": " << key << "=" << num(value, "%.6g") << "\n";
  }
  out << suite << ": rows=" << r.rows.size() << " csv=" << csv_path << "\n";
  if (r.passed()) {
    out << "PASS " << suite << " (worst: " << r.worst << ")\n";
    return kExitOk;
  }
  out << "FAIL " << suite << ": " << r.failures.size()
      << " violation(s); worst: " << r.worst << "\n";
  const size_t shown = std::min<size_t>(r.failures.size(), 20);
  for (size_t i = 0; i < shown; ++i) out << "  " << r.failures[i] << "\n";
  if (shown < r.failures.size()) {
    out << "  ... " << r.failures.size() - shown << " more\n";
  }
  return kExitVerifyFailed;
}

int cmd_render(const Common& c, const std::string& states_path,
               const std::vector<std::string>& args, std::ostream& out) {
  const ExperimentConfig cfg = resolve(c);
  const auto env = env::make_env(cfg.experiment.env);
  const raster::Renderer renderer(*env, cfg.experiment.scene);
  const auto states = parse_states(read_file(states_path), env->state_dim());
  write_manifest(c.out_dir, "render-preview", cfg, args);
  for (size_t i = 0; i < states.size(); ++i) {
    const ad::Tensor s({1, env->state_dim()}, states[i]);
    raster::write_pgm(c.out_dir + "/frame_" + std::to_string(i) + ".ppm",
                      renderer.render_detached(s), 0);
  }
  out << "wrote " << states.size() << " frame(s) to " << c.out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, int episodes,
             bool episodes_set, const std::vector<std::string>& args,
             std::ostream& out) {
  const ExperimentConfig cfg = resolve(c);
  const auto& ex = cfg.experiment;
  if (!episodes_set) episodes = ex.train.eval_episodes;
  if (episodes < 1) throw ConfigError("--episodes must be >= 1");
  train::World world(ex);
  agent::GaussianPolicy policy(world.obs_spec(), world.env->action_dim(),
                               ex.agent, 0);
  try {
    agent::load_checkpoint(checkpoint, policy.params(), policy.architecture_hash());
  } catch (const agent::CheckpointError& e) {
    throw ConfigError(e.what());
  }
  write_manifest(c.out_dir, "eval", cfg, args);
  const auto r = train::evaluate(world, policy, episodes, ex.train.seed);
  out << "mean_return=" << num(r.mean) << " ± " << num(r.std)
      << " episodes=" << episodes << "\n";
  return kExitOk;
}

}  // namespace

const char* version() { return DVA_VERSION; }

std::vector<std::vector<double>> parse_states(const std::string& text,
                                              int state_dim) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        size_t used = 0;
        const double v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t", used) != std::string::npos) {
          throw std::invalid_argument(cell);
        }
        row.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError("states line " + std::to_string(number) +
                          ": not a number: '" + cell + "'");
      }
    }
    if (static_cast<int>(row.size()) != state_dim) {
      throw ConfigError("states line " + std::to_string(number) + ": expected " +
                        std::to_string(state_dim) + " values, got " +
                        std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string manifest_json(const std::string& command,
                          const ExperimentConfig& config,
                          const std::vector<std::string>& args) {
  nlohmann::json m;
  m["command"] = command;
  m["version"] = version();
  m["seed"] = config.experiment.train.seed;
  m["args"] = args;
  m["config"] = nlohmann::json::parse(to_json(config));
  return m.dump(2);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Decoupled visual policy gradients on a differentiable cartpole"};
  app.name("dva");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  Common train_opts, verify_opts, render_opts, eval_opts;
  auto* train = app.add_subcommand("train", "Train a policy");
  add_common(train, train_opts);

  std::string suite;
  auto* verify = app.add_subcommand("verify-gradients", "Run a gradient verification suite");
  add_common(verify, verify_opts);
  verify->add_option("suite", suite, "fd, decomposition, theorem1 or diagnostics")
      ->required();

  std::string states_path;
  auto* render = app.add_subcommand("render-preview", "Render states to PPM frames");
  add_common(render, render_opts);
  render->add_option("--states", states_path, "CSV file, one state per line")
      ->required();

  std::string checkpoint;
  int episodes = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a policy checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "Policy checkpoint")->required();
  auto* episodes_opt =
      eval->add_option("--episodes", episodes, "Episodes (default: train.eval_episodes)");

  // CLI11 wants argv order with the program name dropped, reversed.
  std::vector<std::string> rest(args.rbegin(), args.rend());
  if (!rest.empty()) rest.pop_back();
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  FaultGuard guard;
  try {
    if (train->parsed()) {
      inject_fault(train_opts.fault);
      return cmd_train(train_opts, args, out, err);
    }
    if (verify->parsed()) {
      inject_fault(verify_opts.fault);
      return cmd_verify(verify_opts, suite, args, out, err);
    }
    if (render->parsed()) {
      inject_fault(render_opts.fault);
      return cmd_render(render_opts, states_path, args, out);
    }
    inject_fault(eval_opts.fault);
    return cmd_eval(eval_opts, checkpoint, episodes, episodes_opt->count() > 0,
                    args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const train::TrainingAborted& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitAborted;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitAborted;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  return run_cli(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace dva::cli
