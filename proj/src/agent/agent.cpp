#include "dva/agent/agent.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dva/ad/ops.hpp"

namespace dva::agent {

using namespace dva::ad;

namespace {

constexpr char kMagic[8] = {'D', 'V', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr uint8_t kVersion = 1;

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

// Linear layer with weight [in, out] (orthogonal init) and zero bias.
void add_linear(ParameterSet& p, const std::string& name, int in, int out,
                double gain, std::mt19937_64& rng) {
  const auto w = orthogonal(rng, out, in, gain);  // [out, in]
  std::vector<double> wt(w.size());
  for (int o = 0; o < out; ++o) {
    for (int i = 0; i < in; ++i) wt[size_t(i) * out + o] = w[size_t(o) * in + i];
  }
  p.add(name + ".weight", Tensor({in, out}, std::move(wt)));
  p.add(name + ".bias", Tensor::zeros({out}));
}

void add_layer_norm(ParameterSet& p, const std::string& name, int width) {
  p.add(name + ".gain", Tensor::full({width}, 1.0));
  p.add(name + ".bias", Tensor::zeros({width}));
}

// Sequential reader over bound parameters.
class Cursor {
 public:
  explicit Cursor(std::span<const Tensor> p) : p_(p) {}
  const Tensor& next() {
    if (i_ >= p_.size()) throw std::invalid_argument("too few parameters");
    return p_[i_++];
  }
  void finish() const {
    if (i_ != p_.size()) throw std::invalid_argument("too many parameters");
  }

 private:
  std::span<const Tensor> p_;
  size_t i_ = 0;
};

Tensor linear(Cursor& c, const Tensor& x) {
  const Tensor& w = c.next();
  const Tensor& b = c.next();
  return matmul(x, w) + b;
}

Tensor affine_layer_norm(Cursor& c, const Tensor& x) {
  const Tensor& gain = c.next();
  const Tensor& bias = c.next();
  return layer_norm(x) * gain + bias;
}

// Linear -> ELU -> LayerNorm blocks.
Tensor mlp(Cursor& c, Tensor x, size_t layers) {
  for (size_t i = 0; i < layers; ++i) {
    x = affine_layer_norm(c, elu(linear(c, x)));
  }
  return x;
}

int64_t mlp_count(int in, const std::vector<int>& hidden) {
  int64_t n = 0;
  for (int h : hidden) {
    n += int64_t{in} * h + h + 2 * h;
    in = h;
  }
  return n;
}

}  // namespace

void AgentConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("agent." + msg);
  };
  if (encoder_channels.size() != encoder_strides.size()) {
    fail("encoder_strides: need one stride per encoder layer");
  }
  for (int c : encoder_channels) {
    if (c < 1) fail("encoder_channels: must be >= 1");
  }
  for (int s : encoder_strides) {
    if (s < 1) fail("encoder_strides: must be >= 1");
  }
  if (kernel < 1) fail("kernel: must be >= 1");
  if (trunk_width < 1) fail("trunk_width: must be >= 1");
  for (int h : actor_hidden) {
    if (h < 1) fail("actor_hidden: widths must be >= 1");
  }
  for (int h : critic_hidden) {
    if (h < 1) fail("critic_hidden: widths must be >= 1");
  }
  if (!(log_std_max > log_std_min)) fail("log_std_max: must exceed log_std_min");
  if (!(init_std > 0.0) || std::log(init_std) <= log_std_min ||
      std::log(init_std) >= log_std_max) {
    fail("init_std: log must lie inside the log-std range");
  }
}

Shape ObsSpec::batch_shape(int64_t n) const {
  if (pixels) return {n, channels, height, width};
  return {n, state_dim};
}

std::vector<double> orthogonal(std::mt19937_64& rng, int rows, int cols,
                               double gain) {
  // Orthonormalize the columns of a tall Gaussian matrix with modified
  // Gram-Schmidt, then transpose if the requested shape is wide.
  const int tall = std::max(rows, cols), narrow = std::min(rows, cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> q(size_t(tall) * narrow);  // column-major [tall, narrow]
  for (double& v : q) v = normal(rng);
  for (int j = 0; j < narrow; ++j) {
    double* col = &q[size_t(j) * tall];
    for (int k = 0; k < j; ++k) {
      const double* prev = &q[size_t(k) * tall];
      double dot = 0.0;
      for (int i = 0; i < tall; ++i) dot += prev[i] * col[i];
      for (int i = 0; i < tall; ++i) col[i] -= dot * prev[i];
    }
    double norm = 0.0;
    for (int i = 0; i < tall; ++i) norm += col[i] * col[i];
    norm = std::sqrt(norm);
    for (int i = 0; i < tall; ++i) col[i] /= norm;
  }
  std::vector<double> out(size_t(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = rows >= cols ? q[size_t(c) * tall + r]
                                    : q[size_t(r) * tall + c];
      out[size_t(r) * cols + c] = gain * v;
    }
  }
  return out;
}

GaussianPolicy::GaussianPolicy(ObsSpec obs, int action_dim, AgentConfig config,
                               uint64_t seed)
    : obs_(obs), action_dim_(action_dim), config_(std::move(config)) {
  config_.validate();
  if (action_dim < 1) throw std::invalid_argument("action_dim must be >= 1");
  std::mt19937_64 rng(seed);
  int width;
  if (obs_.pixels) {
    int c = obs_.channels, h = obs_.height, w = obs_.width;
    for (size_t i = 0; i < config_.encoder_channels.size(); ++i) {
      const int o = config_.encoder_channels[i], k = config_.kernel;
      const int s = config_.encoder_strides[i];
      if (h < k || w < k) {
        throw std::invalid_argument("agent: encoder shrinks the image below "
                                    "the kernel size at layer " +
                                    std::to_string(i));
      }
      const std::string name = "encoder." + std::to_string(i);
      params_.add(name + ".weight",
                  Tensor({o, c, k, k}, orthogonal(rng, o, c * k * k, 1.0)));
      params_.add(name + ".bias", Tensor::zeros({o}));
      c = o;
      h = (h - k) / s + 1;
      w = (w - k) / s + 1;
    }
    add_linear(params_, "trunk", static_cast<int>(encoder_features()),
               config_.trunk_width, 1.0, rng);
    add_layer_norm(params_, "trunk.norm", config_.trunk_width);
    width = config_.trunk_width;
  } else {
    width = obs_.state_dim;
  }
  for (size_t i = 0; i < config_.actor_hidden.size(); ++i) {
    const std::string name = "actor." + std::to_string(i);
    add_linear(params_, name, width, config_.actor_hidden[i], 1.0, rng);
    add_layer_norm(params_, name + ".norm", config_.actor_hidden[i]);
    width = config_.actor_hidden[i];
  }
  add_linear(params_, "mean", width, action_dim, config_.head_gain, rng);
  add_linear(params_, "log_std", width, action_dim, config_.head_gain, rng);
  // Bias so that the clamped log-std starts at log(init_std).
  const double mid = 0.5 * (config_.log_std_min + config_.log_std_max);
  const double half = 0.5 * (config_.log_std_max - config_.log_std_min);
  const double b0 = mid + half * std::atanh((std::log(config_.init_std) - mid) / half);
  params_.set(params_.index("log_std.bias"), Tensor::full({action_dim}, b0));
}

int64_t GaussianPolicy::encoder_features() const {
  if (!obs_.pixels) return obs_.state_dim;
  int h = obs_.height, w = obs_.width;
  for (size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    h = (h - config_.kernel) / config_.encoder_strides[i] + 1;
    w = (w - config_.kernel) / config_.encoder_strides[i] + 1;
  }
  const int c = config_.encoder_channels.empty()
                    ? obs_.channels
                    : config_.encoder_channels.back();
  return int64_t{c} * h * w;
}

int64_t GaussianPolicy::expected_parameter_count() const {
  int64_t n = 0;
  int width = obs_.state_dim;
  if (obs_.pixels) {
    int c = obs_.channels;
    const int64_t k2 = int64_t{config_.kernel} * config_.kernel;
    for (int o : config_.encoder_channels) {
      n += o * c * k2 + o;
      c = o;
    }
    const int64_t f = encoder_features(), t = config_.trunk_width;
    n += f * t + t + 2 * t;
    width = config_.trunk_width;
  }
  n += mlp_count(width, config_.actor_hidden);
  const int h = config_.actor_hidden.empty() ? width : config_.actor_hidden.back();
  n += 2 * (int64_t{h} * action_dim_ + action_dim_);
  return n;
}

std::string GaussianPolicy::architecture() const {
  std::ostringstream os;
  os << "policy/v1;";
  if (obs_.pixels) {
    os << "pixels=" << obs_.channels << "x" << obs_.height << "x" << obs_.width
       << ";encoder=" << join(config_.encoder_channels)
       << ";strides=" << join(config_.encoder_strides)
       << ";kernel=" << config_.kernel << ";trunk=" << config_.trunk_width;
  } else {
    os << "state=" << obs_.state_dim;
  }
  os << ";hidden=" << join(config_.actor_hidden) << ";actions=" << action_dim_;
  return os.str();
}

GaussianPolicy::Output GaussianPolicy::forward(std::span<const Tensor> p,
                                               const Tensor& obs,
                                               const Tensor& eps) const {
  const int64_t n = obs.rank() > 0 ? obs.dim(0) : 0;
  if (obs.shape() != obs_.batch_shape(n)) {
    throw std::invalid_argument("policy: observation shape " +
                                shape_string(obs.shape()) +
                                " does not match encoder input " +
                                shape_string(obs_.batch_shape(n)));
  }
  if (eps.shape() != Shape{n, action_dim_}) {
    throw std::invalid_argument("policy: noise shape " +
                                shape_string(eps.shape()));
  }
  Cursor c(p);
  Tensor h;
  if (obs_.pixels) {
    h = obs - 0.5;
    for (size_t i = 0; i < config_.encoder_channels.size(); ++i) {
      const Tensor& w = c.next();
      const Tensor& b = c.next();
      h = relu(conv2d(h, w, b, config_.encoder_strides[i]));
    }
    h = reshape(h, {n, encoder_features()});
    h = affine_layer_norm(c, linear(c, h));
  } else {
    h = obs;
  }
  h = mlp(c, h, config_.actor_hidden.size());
  Output out;
  out.mean = linear(c, h);
  out.log_std =
      smooth_clamp(linear(c, h), config_.log_std_min, config_.log_std_max);
  c.finish();
  out.std = exp(out.log_std);
  out.action = out.mean + out.std * eps;
  return out;
}

Critic::Critic(int state_dim, AgentConfig config, uint64_t seed)
    : state_dim_(state_dim), config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  int width = state_dim;
  for (size_t i = 0; i < config_.critic_hidden.size(); ++i) {
    const std::string name = "critic." + std::to_string(i);
    add_linear(params_, name, width, config_.critic_hidden[i], 1.0, rng);
    add_layer_norm(params_, name + ".norm", config_.critic_hidden[i]);
    width = config_.critic_hidden[i];
  }
  add_linear(params_, "value", width, 1, 1.0, rng);
}

Tensor Critic::value(std::span<const Tensor> p, const Tensor& s) const {
  if (s.rank() != 2 || s.dim(1) != state_dim_) {
    throw std::invalid_argument("critic: state shape " +
                                shape_string(s.shape()));
  }
  Cursor c(p);
  const Tensor h = mlp(c, s, config_.critic_hidden.size());
  const Tensor v = linear(c, h);
  c.finish();
  return reshape(v, {s.dim(0)});
}

int64_t Critic::expected_parameter_count() const {
  const int h = config_.critic_hidden.empty() ? state_dim_
                                              : config_.critic_hidden.back();
  return mlp_count(state_dim_, config_.critic_hidden) + h + 1;
}

std::string Critic::architecture() const {
  return "critic/v1;state=" + std::to_string(state_dim_) +
         ";hidden=" + join(config_.critic_hidden);
}

void save_checkpoint(const std::string& path, const ParameterSet& params,
                     uint64_t architecture_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  out.put(static_cast<char>(kVersion));
  auto put_u64 = [&](uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u64(architecture_hash);
  for (double v : params.flatten()) put_u64(std::bit_cast<uint64_t>(v));
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

void load_checkpoint(const std::string& path, ParameterSet& params,
                     uint64_t architecture_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  constexpr size_t kHeader = sizeof(kMagic) + 1 + 8;
  if (bytes.size() < kHeader || bytes.compare(0, 8, kMagic, 8) != 0) {
    throw CheckpointError(path + ": not a checkpoint");
  }
  if (static_cast<uint8_t>(bytes[8]) != kVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version");
  }
  auto get_u64 = [&](size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= uint64_t{static_cast<uint8_t>(bytes[at + i])} << (8 * i);
    }
    return v;
  };
  if (get_u64(9) != architecture_hash) {
    throw CheckpointError(path + ": architecture hash mismatch");
  }
  const size_t count = (bytes.size() - kHeader) / 8;
  if ((bytes.size() - kHeader) % 8 != 0 ||
      static_cast<int64_t>(count) != params.size()) {
    throw CheckpointError(path + ": parameter count mismatch");
  }
  std::vector<double> flat(count);
  for (size_t i = 0; i < count; ++i) {
    flat[i] = std::bit_cast<double>(get_u64(kHeader + 8 * i));
  }
  params.unflatten(flat);
}

}  // namespace dva::agent
