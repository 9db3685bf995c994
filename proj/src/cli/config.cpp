#include "dva/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dva::cli {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and remembers which keys were used.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (!doc.contains(name_)) return;
    obj_ = &doc.at(name_);
    if (!obj_->is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    try {
      field = obj_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" +
                        obj_->at(key).dump() + ")");
    }
  }

  void get(const char* key, uint64_t& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number_unsigned()) {
      throw ConfigError(name_ + "." + key + ": expected a non-negative integer");
    }
    field = v.get<uint64_t>();
  }

  void get(const char* key, int& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number_integer()) {
      throw ConfigError(name_ + "." + key + ": expected an integer, got " + v.dump());
    }
    field = v.get<int>();
  }

  void get(const char* key, double& field) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number()) {
      throw ConfigError(name_ + "." + key + ": expected a number, got " + v.dump());
    }
    field = v.get<double>();
  }

  void finish() const {
    if (obj_ == nullptr) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown key '" + name_ + "." + it.key() + "'");
      }
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

json to_doc(const ExperimentConfig& c) {
  const auto& t = c.experiment.train;
  const auto& e = c.experiment.env;
  const auto& s = c.experiment.scene;
  const auto& a = c.experiment.agent;
  const auto& v = c.verify;
  json doc;
  doc["train"] = {
      {"horizon", t.horizon},
      {"num_envs", t.num_envs},
      {"actor_lr", t.actor_lr},
      {"critic_lr", t.critic_lr},
      {"gamma", t.gamma},
      {"lambda", t.lambda},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"adam_eps", t.adam_eps},
      {"critic_iterations", t.critic_iterations},
      {"critic_minibatches", t.critic_minibatches},
      {"target_alpha", t.target_alpha},
      {"frame_stack", t.frame_stack},
      {"mode", train::mode_name(t.mode)},
      {"critic_enabled", t.critic_enabled},
      {"max_iterations", t.max_iterations},
      {"seed", t.seed},
      {"grad_clip", t.grad_clip},
      {"eval_every", t.eval_every},
      {"eval_episodes", t.eval_episodes},
      {"checkpoint_every", t.checkpoint_every},
      {"diagnostics", t.diagnostics},
      {"log_wall_time", t.log_wall_time},
  };
  doc["env"] = {
      {"name", e.name},
      {"dt", e.dt},
      {"substeps", e.substeps},
      {"cart_mass", e.cart_mass},
      {"pole_mass", e.pole_mass},
      {"pole_half_length", e.pole_half_length},
      {"gravity", e.gravity},
      {"force_limit", e.force_limit},
      {"episode_length", e.episode_length},
      {"x_limit", e.x_limit},
      {"init_scale", e.init_scale},
      {"goal_x", e.goal_x},
      {"goal_y", e.goal_y},
  };
  doc["scene"] = {
      {"width", s.width},
      {"height", s.height},
      {"x_min", s.x_min},
      {"x_max", s.x_max},
      {"y_min", s.y_min},
      {"y_max", s.y_max},
      {"sharpness", s.sharpness},
      {"channels", s.channels},
      {"cart_half_width", s.cart_half_width},
      {"cart_half_height", s.cart_half_height},
      {"pole_radius", s.pole_radius},
      {"body_radius", s.body_radius},
  };
  doc["agent"] = {
      {"encoder_channels", a.encoder_channels},
      {"encoder_strides", a.encoder_strides},
      {"kernel", a.kernel},
      {"trunk_width", a.trunk_width},
      {"actor_hidden", a.actor_hidden},
      {"critic_hidden", a.critic_hidden},
      {"log_std_min", a.log_std_min},
      {"log_std_max", a.log_std_max},
      {"init_std", a.init_std},
      {"head_gain", a.head_gain},
  };
  doc["verify"] = {
      {"seeds", v.seeds},
      {"horizons", v.horizons},
      {"betas", v.betas},
      {"num_envs", v.num_envs},
      {"warmup_steps", v.warmup_steps},
      {"fd_horizon", v.fd_horizon},
      {"fd_seeds", v.fd_seeds},
      {"fd_coordinates", v.fd_coordinates},
      {"fd_primitive_trials", v.fd_primitive_trials},
      {"diagnostic_iterations", v.diagnostic_iterations},
      {"diagnostic_pixel_iterations", v.diagnostic_pixel_iterations},
      {"policy_head_gain", v.policy_head_gain},
  };
  return doc;
}

const char* const kSections[] = {"train", "env", "scene", "agent", "verify"};

}  // namespace

void VerifyConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& m) {
    throw std::invalid_argument("verify." + f + ": " + m);
  };
  if (seeds < 1) fail("seeds", "must be >= 1");
  if (horizons.empty()) fail("horizons", "must not be empty");
  for (int h : horizons) {
    if (h < 1) fail("horizons", "entries must be >= 1");
  }
  if (betas.empty()) fail("betas", "must not be empty");
  for (double b : betas) {
    if (!(b > 0.0)) fail("betas", "entries must be > 0");
  }
  if (num_envs < 1) fail("num_envs", "must be >= 1");
  if (warmup_steps < 0) fail("warmup_steps", "must be >= 0");
  if (fd_horizon < 1) fail("fd_horizon", "must be >= 1");
  if (fd_seeds < 1) fail("fd_seeds", "must be >= 1");
  if (fd_coordinates < 1) fail("fd_coordinates", "must be >= 1");
  if (fd_primitive_trials < 0) fail("fd_primitive_trials", "must be >= 0");
  if (diagnostic_iterations < 1) fail("diagnostic_iterations", "must be >= 1");
  if (diagnostic_pixel_iterations < 1) {
    fail("diagnostic_pixel_iterations", "must be >= 1");
  }
  if (!(policy_head_gain > 0.0)) fail("policy_head_gain", "must be > 0");
}

void ExperimentConfig::validate() const {
  try {
    experiment.validate();
    verify.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.experiment.train = train::desk_preset();
  return c;
}

std::string to_json(const ExperimentConfig& config, int indent) {
  return to_doc(config).dump(indent);
}

ExperimentConfig from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool known = false;
    for (const char* s : kSections) known = known || it.key() == s;
    if (!known) throw ConfigError("unknown section '" + it.key() + "'");
  }
  ExperimentConfig c = default_config();
  auto& t = c.experiment.train;
  auto& e = c.experiment.env;
  auto& s = c.experiment.scene;
  auto& a = c.experiment.agent;
  auto& v = c.verify;
  {
    Section r(doc, "train");
    std::string mode = train::mode_name(t.mode);
    r.get("horizon", t.horizon);
    r.get("num_envs", t.num_envs);
    r.get("actor_lr", t.actor_lr);
    r.get("critic_lr", t.critic_lr);
    r.get("gamma", t.gamma);
    r.get("lambda", t.lambda);
    r.get("adam_beta1", t.adam_beta1);
    r.get("adam_beta2", t.adam_beta2);
    r.get("adam_eps", t.adam_eps);
    r.get("critic_iterations", t.critic_iterations);
    r.get("critic_minibatches", t.critic_minibatches);
    r.get("target_alpha", t.target_alpha);
    r.get("frame_stack", t.frame_stack);
    r.get("mode", mode);
    r.get("critic_enabled", t.critic_enabled);
    r.get("max_iterations", t.max_iterations);
    r.get("seed", t.seed);
    r.get("grad_clip", t.grad_clip);
    r.get("eval_every", t.eval_every);
    r.get("eval_episodes", t.eval_episodes);
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("diagnostics", t.diagnostics);
    r.get("log_wall_time", t.log_wall_time);
    r.finish();
    try {
      t.mode = train::parse_mode(mode);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }
  {
    Section r(doc, "env");
    r.get("name", e.name);
    r.get("dt", e.dt);
    r.get("substeps", e.substeps);
    r.get("cart_mass", e.cart_mass);
    r.get("pole_mass", e.pole_mass);
    r.get("pole_half_length", e.pole_half_length);
    r.get("gravity", e.gravity);
    r.get("force_limit", e.force_limit);
    r.get("episode_length", e.episode_length);
    r.get("x_limit", e.x_limit);
    r.get("init_scale", e.init_scale);
    r.get("goal_x", e.goal_x);
    r.get("goal_y", e.goal_y);
    r.finish();
  }
  {
    Section r(doc, "scene");
    r.get("width", s.width);
    r.get("height", s.height);
    r.get("x_min", s.x_min);
    r.get("x_max", s.x_max);
    r.get("y_min", s.y_min);
    r.get("y_max", s.y_max);
    r.get("sharpness", s.sharpness);
    r.get("channels", s.channels);
    r.get("cart_half_width", s.cart_half_width);
    r.get("cart_half_height", s.cart_half_height);
    r.get("pole_radius", s.pole_radius);
    r.get("body_radius", s.body_radius);
    r.finish();
  }
  {
    Section r(doc, "agent");
    r.get("encoder_channels", a.encoder_channels);
    r.get("encoder_strides", a.encoder_strides);
    r.get("kernel", a.kernel);
    r.get("trunk_width", a.trunk_width);
    r.get("actor_hidden", a.actor_hidden);
    r.get("critic_hidden", a.critic_hidden);
    r.get("log_std_min", a.log_std_min);
    r.get("log_std_max", a.log_std_max);
    r.get("init_std", a.init_std);
    r.get("head_gain", a.head_gain);
    r.finish();
  }
  {
    Section r(doc, "verify");
    r.get("seeds", v.seeds);
    r.get("horizons", v.horizons);
    r.get("betas", v.betas);
    r.get("num_envs", v.num_envs);
    r.get("warmup_steps", v.warmup_steps);
    r.get("fd_horizon", v.fd_horizon);
    r.get("fd_seeds", v.fd_seeds);
    r.get("fd_coordinates", v.fd_coordinates);
    r.get("fd_primitive_trials", v.fd_primitive_trials);
    r.get("diagnostic_iterations", v.diagnostic_iterations);
    r.get("diagnostic_pixel_iterations", v.diagnostic_pixel_iterations);
    r.get("policy_head_gain", v.policy_head_gain);
    r.finish();
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  const json defaults = to_doc(default_config());
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "': expected key=value");
    }
    std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    std::string section, field;
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      section = key.substr(0, dot);
      field = key.substr(dot + 1);
    } else {
      for (const char* s : kSections) {
        if (defaults.at(s).contains(key)) {
          if (!section.empty()) {
            throw ConfigError("override '" + key + "' is ambiguous; use " +
                              section + "." + key + " or " + s + "." + key);
          }
          section = s;
        }
      }
      if (section.empty()) throw ConfigError("unknown key '" + key + "'");
      field = key;
    }
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    doc[section][field] = value;
  }
  return doc.dump();
}

}  // namespace dva::cli
