// Reference vs OpenMP kernels on desk-preset shapes (N=16, 32x32 frames,
// 32-channel encoder). Run with --benchmark_filter=... to pick a kernel.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "dva/kernels/kernels.hpp"

using namespace dva::kernels;

namespace {

std::vector<double> random_vector(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

Backend backend_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Backend::reference : Backend::parallel;
}

void label(benchmark::State& state) {
  state.SetLabel(state.range(0) == 0 ? "reference" : "parallel");
}

// Trunk layer: [N*h, features] x [features, 64].
void BM_GemmNN(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  const int M = 256, N = 64, K = 2592;
  const auto a = random_vector(size_t(M) * K, 1), b = random_vector(size_t(K) * N, 2);
  std::vector<double> c(size_t(M) * N);
  for (auto _ : state) {
    gemm_nn(M, N, K, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(M) * N * K);
  label(state);
}

// Weight gradient of the same layer.
void BM_GemmTN(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  const int M = 2592, N = 64, K = 256;
  const auto a = random_vector(size_t(K) * M, 1), b = random_vector(size_t(K) * N, 2);
  std::vector<double> c(size_t(M) * N);
  for (auto _ : state) {
    gemm_tn(M, N, K, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(M) * N * K);
  label(state);
}

ConvShape second_conv() {
  ConvShape s;
  s.batch = 16;
  s.in_channels = 32;
  s.in_height = s.in_width = 15;
  s.out_channels = 32;
  s.kernel = 3;
  s.stride = 1;
  return s;
}

void BM_ConvForward(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  const ConvShape s = second_conv();
  const auto x = random_vector(s.in_size(), 1), w = random_vector(s.weight_size(), 2);
  const auto b = random_vector(s.out_channels, 3);
  std::vector<double> y(s.out_size());
  for (auto _ : state) {
    conv2d_forward(s, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  label(state);
}

void BM_ConvBackwardInput(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  const ConvShape s = second_conv();
  const auto w = random_vector(s.weight_size(), 2), gy = random_vector(s.out_size(), 4);
  std::vector<double> gx(s.in_size());
  for (auto _ : state) {
    conv2d_backward_input(s, w.data(), gy.data(), gx.data());
    benchmark::DoNotOptimize(gx.data());
  }
  label(state);
}

void BM_ConvBackwardWeight(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  const ConvShape s = second_conv();
  const auto x = random_vector(s.in_size(), 1), gy = random_vector(s.out_size(), 4);
  std::vector<double> gw(s.weight_size()), gb(s.out_channels);
  for (auto _ : state) {
    conv2d_backward_weight(s, x.data(), gy.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gw.data());
  }
  label(state);
}

// Cart rectangle and pole capsule over 16 envs.
struct RasterCase {
  RasterShape shape;
  std::vector<PrimitiveKind> kinds{PrimitiveKind::rectangle, PrimitiveKind::capsule};
  std::vector<double> params;

  RasterCase() {
    shape.batch = 16;
    shape.primitives = 2;
    shape.height = shape.width = 32;
    shape.x_min = -2.5;
    shape.x_max = 2.5;
    shape.y_min = -1.25;
    shape.y_max = 1.25;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int n = 0; n < shape.batch; ++n) {
      const double x = u(rng), th = u(rng);
      params.insert(params.end(), {x, 0.0, 0.0, 0.25, 0.125});
      params.insert(params.end(),
                    {x, 0.0, x + std::sin(th), std::cos(th), 0.08});
    }
  }
  int64_t pixels() const { return int64_t{shape.batch} * shape.height * shape.width; }
};

void BM_RasterForward(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  RasterCase rc;
  std::vector<double> image(rc.pixels()), dist(rc.pixels() * rc.shape.primitives);
  for (auto _ : state) {
    raster_forward(rc.shape, rc.kinds.data(), rc.params.data(), image.data(),
                   dist.data());
    benchmark::DoNotOptimize(image.data());
  }
  label(state);
}

void BM_RasterBackward(benchmark::State& state) {
  ScopedBackend scope(backend_of(state));
  RasterCase rc;
  std::vector<double> image(rc.pixels()), dist(rc.pixels() * rc.shape.primitives);
  raster_forward(rc.shape, rc.kinds.data(), rc.params.data(), image.data(), dist.data());
  const auto gimage = random_vector(rc.pixels(), 6);
  std::vector<double> gparams(rc.params.size());
  for (auto _ : state) {
    raster_backward(rc.shape, rc.kinds.data(), rc.params.data(), dist.data(),
                    gimage.data(), gparams.data());
    benchmark::DoNotOptimize(gparams.data());
  }
  label(state);
}

}  // namespace

BENCHMARK(BM_GemmNN)->Arg(0)->Arg(1);
BENCHMARK(BM_GemmTN)->Arg(0)->Arg(1);
BENCHMARK(BM_ConvForward)->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardInput)->Arg(0)->Arg(1);
BENCHMARK(BM_ConvBackwardWeight)->Arg(0)->Arg(1);
BENCHMARK(BM_RasterForward)->Arg(0)->Arg(1);
BENCHMARK(BM_RasterBackward)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
