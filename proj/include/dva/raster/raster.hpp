#pragma once

// Differentiable sensor model: state -> primitive poses (kinematics, built
// from tape primitives) -> soft signed-distance rasterization (one fused
// tape node). Images are [N, C, H, W], white background (1) and dark ink (0).

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "dva/ad/tensor.hpp"
#include "dva/env/env.hpp"
#include "dva/kernels/kernels.hpp"

namespace dva::raster {

using ad::Tensor;
using kernels::PrimitiveKind;

struct SceneConfig {
  int width = 32;
  int height = 32;
  double x_min = -2.5;
  double x_max = 2.5;
  double y_min = -1.25;
  double y_max = 1.25;
  double sharpness = 40.0;  // 1/m
  int channels = 1;         // grayscale replicated per channel
  double cart_half_width = 0.25;
  double cart_half_height = 0.125;
  double pole_radius = 0.08;
  double body_radius = 0.15;  // reacher point mass and goal marker

  void validate() const;
};

// Rasterizes params [N, K, 5] into [N, H, W]; records a "rasterize" node
// that keeps every pixel-primitive distance for the backward pass.
// Throws on degenerate primitives.
Tensor rasterize(const Tensor& params, std::span<const PrimitiveKind> kinds,
                 const kernels::RasterShape& shape);

class Renderer {
 public:
  Renderer(const env::Env& env, SceneConfig config);

  const SceneConfig& config() const { return config_; }
  int primitives() const { return static_cast<int>(kinds_.size()); }
  std::span<const PrimitiveKind> kinds() const { return kinds_; }
  // Shape of one frame: {C, H, W}.
  ad::Shape frame_shape() const;

  // Primitive parameters [N, K, 5] as a differentiable function of s.
  Tensor kinematics(const Tensor& s) const;
  // Images [N, C, H, W]; nodes are tagged "render".
  Tensor render(const Tensor& s) const;
  // Same values, computed on a detached copy of s: no tape nodes.
  Tensor render_detached(const Tensor& s) const;

 private:
  kernels::RasterShape raster_shape(int batch) const;

  std::string env_name_;
  env::EnvConfig env_config_;
  SceneConfig config_;
  std::vector<PrimitiveKind> kinds_;
};

// Concatenates the k most recent frames of one episode ([C, H, W] or
// [N, C, H, W] each, oldest first in `history`) along the channel axis,
// old -> new, repeating the first frame while fewer than k exist.
Tensor stack_frames(std::span<const Tensor> history, int k);

// Rolling frame history for N envs whose episodes start at different times.
class FrameStack {
 public:
  FrameStack(int k, int num_envs);

  int k() const { return k_; }
  // Appends frames [N, C, H, W]. fresh[i] marks envs whose current state is
  // the first of an episode; on the first push every env counts as fresh.
  void push(const Tensor& frames, std::span<const uint8_t> fresh);
  // [N, k*C, H, W] for the last pushed time, old -> new.
  Tensor observation() const;
  // Push index feeding channel block `slot` of env i's observation.
  int64_t source(int env, int slot) const;
  int64_t time() const { return time_; }
  const Tensor& frame_at(int64_t time) const;
  // Replaces stored frames by detached copies (window boundary).
  void detach();

 private:
  int k_;
  int num_envs_;
  int64_t time_ = -1;
  std::vector<int64_t> episode_start_;
  std::deque<Tensor> frames_;  // times time_-size+1 .. time_
};

// Writes channel 0 of image n of [N, C, H, W] as binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, const Tensor& images, int n);

}  // namespace dva::raster
