#include "dva/raster/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>

#include "dva/ad/ops.hpp"
#include "dva/ad/tape.hpp"

namespace dva::raster {

using namespace dva::ad;

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) {
    throw std::invalid_argument(std::string("scene.") + field + ": " + what);
  }
}

void check_primitive(PrimitiveKind kind, const double* p, int64_t n, int k) {
  bool ok = true;
  const char* what = "";
  switch (kind) {
    case PrimitiveKind::rectangle:
      ok = p[3] > 0.0 && p[4] > 0.0;
      what = "rectangle with non-positive half size";
      break;
    case PrimitiveKind::capsule:
      ok = (p[2] - p[0]) * (p[2] - p[0]) + (p[3] - p[1]) * (p[3] - p[1]) >
               0.0 &&
           p[4] > 0.0;
      what = "capsule with zero length or radius";
      break;
    case PrimitiveKind::disk:
      ok = p[2] > 0.0;
      what = "disk with non-positive radius";
      break;
  }
  if (!ok) {
    throw std::invalid_argument("rasterize: degenerate primitive " +
                                std::to_string(k) + " of image " +
                                std::to_string(n) + ": " + what);
  }
}

}  // namespace

void SceneConfig::validate() const {
  require(width >= 8 && height >= 8, "width/height", "must be >= 8");
  require(x_max > x_min && y_max > y_min, "window", "empty camera window");
  require(sharpness > 0.0, "sharpness", "must be > 0");
  require(channels >= 1, "channels", "must be >= 1");
  require(cart_half_width > 0.0 && cart_half_height > 0.0, "cart_half_width",
          "cart half sizes must be > 0");
  require(pole_radius > 0.0, "pole_radius", "must be > 0");
  require(body_radius > 0.0, "body_radius", "must be > 0");
}

Tensor rasterize(const Tensor& params, std::span<const PrimitiveKind> kinds,
                 const kernels::RasterShape& shape) {
  if (params.rank() != 3 || params.dim(1) != shape.primitives ||
      params.dim(2) != kernels::kPrimitiveParams ||
      params.dim(0) != shape.batch ||
      static_cast<int>(kinds.size()) != shape.primitives) {
    throw std::invalid_argument("rasterize: params shape " +
                                shape_string(params.shape()) +
                                " does not match the scene");
  }
  const double* p = params.data();
  for (int64_t n = 0; n < shape.batch; ++n) {
    for (int k = 0; k < shape.primitives; ++k) {
      check_primitive(kinds[k], p + (n * shape.primitives + k) * 5, n, k);
    }
  }
  const int64_t pixels = int64_t{shape.batch} * shape.height * shape.width;
  std::vector<double> image(pixels, 0.0);
  const Shape out_shape{shape.batch, shape.height, shape.width};
  if (params.tape() == nullptr) {
    kernels::raster_forward(shape, kinds.data(), p, image.data(), nullptr);
    return Tensor(out_shape, std::move(image));
  }
  auto distances =
      std::make_shared<std::vector<double>>(pixels * shape.primitives);
  kernels::raster_forward(shape, kinds.data(), p, image.data(),
                          distances->data());
  std::vector<PrimitiveKind> kind_copy(kinds.begin(), kinds.end());
  const Tensor saved_params = params;
  const Tensor* inputs[] = {&params};
  return params.tape()->record(
      Op::custom, inputs, out_shape, std::move(image),
      [shape, kind_copy, saved_params, distances](
          const double* g, std::span<double* const> gi) {
        kernels::raster_backward(shape, kind_copy.data(), saved_params.data(),
                                 distances->data(), g, gi[0]);
      },
      static_cast<int64_t>(distances->size()) + params.size(), "rasterize");
}

Renderer::Renderer(const env::Env& env, SceneConfig config)
    : env_name_(env.config().name),
      env_config_(env.config()),
      config_(config) {
  config_.validate();
  if (env_name_ == "cartpole") {
    kinds_ = {PrimitiveKind::rectangle, PrimitiveKind::capsule};
  } else if (env_name_ == "reacher") {
    kinds_ = {PrimitiveKind::disk, PrimitiveKind::disk};
  } else {
    throw std::invalid_argument("no scene registered for env " + env_name_);
  }
}

Shape Renderer::frame_shape() const {
  return {config_.channels, config_.height, config_.width};
}

kernels::RasterShape Renderer::raster_shape(int batch) const {
  kernels::RasterShape s;
  s.batch = batch;
  s.primitives = primitives();
  s.height = config_.height;
  s.width = config_.width;
  s.x_min = config_.x_min;
  s.x_max = config_.x_max;
  s.y_min = config_.y_min;
  s.y_max = config_.y_max;
  s.sharpness = config_.sharpness;
  return s;
}

Tensor Renderer::kinematics(const Tensor& s) const {
  const int64_t n = s.dim(0);
  auto constant = [n](double v) { return Tensor::full({n, 1}, v); };
  std::vector<Tensor> cols;
  if (env_name_ == "cartpole") {
    // Cart box centered at (x, 0); pole from the pivot (x, 0) to its tip.
    const double len = 2.0 * env_config_.pole_half_length;
    const Tensor x = slice(s, 1, 0, 1), th = slice(s, 1, 1, 1);
    cols = {x,
            constant(0.0),
            constant(0.0),
            constant(config_.cart_half_width),
            constant(config_.cart_half_height),
            x,
            constant(0.0),
            x + sin(th) * len,
            cos(th) * len,
            constant(config_.pole_radius)};
  } else {
    // Point mass, then the fixed goal marker.
    cols = {slice(s, 1, 0, 1),      slice(s, 1, 1, 1),
            constant(config_.body_radius), constant(0.0),
            constant(0.0),          constant(env_config_.goal_x),
            constant(env_config_.goal_y), constant(0.5 * config_.body_radius),
            constant(0.0),          constant(0.0)};
  }
  return reshape(concat(cols, 1), {n, primitives(), kernels::kPrimitiveParams});
}

Tensor Renderer::render(const Tensor& s) const {
  if (s.rank() != 2) {
    throw std::invalid_argument("render: state must be [N, D], got " +
                                shape_string(s.shape()));
  }
  std::optional<Tape::Scope> scope;
  if (s.tape() != nullptr) scope.emplace(*s.tape(), "render");
  const int n = static_cast<int>(s.dim(0));
  const Tensor gray = rasterize(kinematics(s), kinds_, raster_shape(n));
  const Tensor frame = reshape(gray, {n, 1, config_.height, config_.width});
  if (config_.channels == 1) return frame;
  return concat(std::vector<Tensor>(config_.channels, frame), 1);
}

Tensor Renderer::render_detached(const Tensor& s) const {
  return render(s.detach());
}

Tensor stack_frames(std::span<const Tensor> history, int k) {
  if (k < 1) throw std::invalid_argument("stack_frames: k must be >= 1");
  if (history.empty()) throw std::invalid_argument("stack_frames: no frames");
  const int64_t last = static_cast<int64_t>(history.size()) - 1;
  std::vector<Tensor> parts;
  for (int m = 0; m < k; ++m) {
    parts.push_back(history[std::max<int64_t>(last - (k - 1 - m), 0)]);
  }
  return concat(parts, history.front().rank() == 3 ? 0 : 1);
}

FrameStack::FrameStack(int k, int num_envs)
    : k_(k), num_envs_(num_envs), episode_start_(num_envs, 0) {
  if (k < 1) throw std::invalid_argument("frame stack: k must be >= 1");
}

void FrameStack::push(const Tensor& frames, std::span<const uint8_t> fresh) {
  if (frames.rank() != 4 || frames.dim(0) != num_envs_) {
    throw std::invalid_argument("frame stack: frames shape " +
                                shape_string(frames.shape()));
  }
  ++time_;
  for (int i = 0; i < num_envs_; ++i) {
    if (time_ == 0 || (!fresh.empty() && fresh[i])) episode_start_[i] = time_;
  }
  frames_.push_back(frames);
  while (static_cast<int>(frames_.size()) > k_) frames_.pop_front();
}

int64_t FrameStack::source(int env, int slot) const {
  return std::max(time_ - (k_ - 1 - slot), episode_start_[env]);
}

const Tensor& FrameStack::frame_at(int64_t time) const {
  const int64_t first = time_ - static_cast<int64_t>(frames_.size()) + 1;
  if (time < first || time > time_) {
    throw std::out_of_range("frame stack: time " + std::to_string(time) +
                            " not held");
  }
  return frames_[time - first];
}

Tensor FrameStack::observation() const {
  if (time_ < 0) throw std::logic_error("frame stack: no frames pushed");
  std::vector<Tensor> slots;
  for (int m = 0; m < k_; ++m) {
    std::map<int64_t, std::vector<double>> masks;
    for (int i = 0; i < num_envs_; ++i) {
      auto& mask = masks[source(i, m)];
      mask.resize(num_envs_, 0.0);
      mask[i] = 1.0;
    }
    if (masks.size() == 1) {
      slots.push_back(frame_at(masks.begin()->first));
      continue;
    }
    // Envs disagree on the source frame: select rows with exact 0/1 masks.
    Tensor slot;
    for (auto& [time, mask] : masks) {
      const Tensor part =
          frame_at(time) * Tensor({num_envs_, 1, 1, 1}, std::move(mask));
      slot = slot.defined() ? slot + part : part;
    }
    slots.push_back(slot);
  }
  return k_ == 1 ? slots[0] : concat(slots, 1);
}

void FrameStack::detach() {
  for (Tensor& f : frames_) f = f.detach();
}

void write_pgm(const std::string& path, const Tensor& images, int n) {
  if (images.rank() != 4) {
    throw std::invalid_argument("write_pgm: expected [N, C, H, W]");
  }
  const int64_t h = images.dim(2), w = images.dim(3);
  const double* px = images.data() + n * images.dim(1) * h * w;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (int64_t i = 0; i < h * w; ++i) {
    const double v = std::clamp(px[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace dva::raster
