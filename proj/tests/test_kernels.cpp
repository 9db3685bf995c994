#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dva/kernels/kernels.hpp"

namespace dva::kernels {
namespace {

std::vector<double> random_vector(std::mt19937_64& rng, size_t n,
                                  double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b,
                  double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    ASSERT_NEAR(a[i], b[i], tol * (1.0 + std::abs(a[i]))) << "index " << i;
  }
}

TEST(Gemm, ParallelMatchesReference) {
  std::mt19937_64 rng(1);
  for (auto [M, N, K] : {std::tuple{1, 1, 1}, std::tuple{7, 5, 3},
                         std::tuple{64, 33, 129}, std::tuple{200, 64, 90}}) {
    const auto a = random_vector(rng, M * K);
    const auto at = random_vector(rng, K * M);
    const auto b = random_vector(rng, K * N);
    const auto bt = random_vector(rng, N * K);
    const auto c0 = random_vector(rng, M * N);
    auto r = c0, p = c0;
    reference::gemm_nn(M, N, K, a.data(), b.data(), r.data());
    parallel::gemm_nn(M, N, K, a.data(), b.data(), p.data());
    expect_close(r, p, 1e-13);
    r = p = c0;
    reference::gemm_tn(M, N, K, at.data(), b.data(), r.data());
    parallel::gemm_tn(M, N, K, at.data(), b.data(), p.data());
    expect_close(r, p, 1e-13);
    r = p = c0;
    reference::gemm_nt(M, N, K, a.data(), bt.data(), r.data());
    parallel::gemm_nt(M, N, K, a.data(), bt.data(), p.data());
    expect_close(r, p, 1e-13);
  }
}

TEST(Gemm, SmallProductByHand) {
  // [1 2; 3 4] [5; 6] = [17; 39]
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6};
  for (Backend be : {Backend::reference, Backend::parallel}) {
    ScopedBackend scope(be);
    double c[2] = {0, 0};
    gemm_nn(2, 1, 2, a, b, c);
    EXPECT_EQ(c[0], 17.0);
    EXPECT_EQ(c[1], 39.0);
  }
}

class ConvTest : public ::testing::TestWithParam<ConvShape> {};

TEST_P(ConvTest, ParallelMatchesReference) {
  const ConvShape s = GetParam();
  std::mt19937_64 rng(7);
  const auto x = random_vector(rng, s.in_size());
  const auto w = random_vector(rng, s.weight_size());
  const auto bias = random_vector(rng, s.out_channels);
  const auto gy = random_vector(rng, s.out_size());

  std::vector<double> yr(s.out_size(), 0.0), yp = yr;
  reference::conv2d_forward(s, x.data(), w.data(), bias.data(), yr.data());
  parallel::conv2d_forward(s, x.data(), w.data(), bias.data(), yp.data());
  expect_close(yr, yp, 1e-13);

  std::vector<double> gxr(s.in_size(), 0.0), gxp = gxr;
  reference::conv2d_backward_input(s, w.data(), gy.data(), gxr.data());
  parallel::conv2d_backward_input(s, w.data(), gy.data(), gxp.data());
  expect_close(gxr, gxp, 1e-13);

  std::vector<double> gwr(s.weight_size(), 0.0), gwp = gwr;
  std::vector<double> gbr(s.out_channels, 0.0), gbp = gbr;
  reference::conv2d_backward_weight(s, x.data(), gy.data(), gwr.data(),
                                    gbr.data());
  parallel::conv2d_backward_weight(s, x.data(), gy.data(), gwp.data(),
                                   gbp.data());
  expect_close(gwr, gwp, 1e-13);
  expect_close(gbr, gbp, 1e-13);
}

// Adjoint identity <conv(x), gy> = <x, conv^T(gy)> = <w, dW(x, gy)>.
TEST_P(ConvTest, BackwardIsAdjointOfForward) {
  const ConvShape s = GetParam();
  std::mt19937_64 rng(11);
  const auto x = random_vector(rng, s.in_size());
  const auto w = random_vector(rng, s.weight_size());
  const auto gy = random_vector(rng, s.out_size());
  std::vector<double> y(s.out_size(), 0.0), gx(s.in_size(), 0.0),
      gw(s.weight_size(), 0.0);
  conv2d_forward(s, x.data(), w.data(), nullptr, y.data());
  conv2d_backward_input(s, w.data(), gy.data(), gx.data());
  conv2d_backward_weight(s, x.data(), gy.data(), gw.data(), nullptr);
  double lhs = 0, rx = 0, rw = 0;
  for (size_t i = 0; i < y.size(); ++i) lhs += y[i] * gy[i];
  for (size_t i = 0; i < x.size(); ++i) rx += x[i] * gx[i];
  for (size_t i = 0; i < w.size(); ++i) rw += w[i] * gw[i];
  EXPECT_NEAR(lhs, rx, 1e-10 * (1 + std::abs(lhs)));
  EXPECT_NEAR(lhs, rw, 1e-10 * (1 + std::abs(lhs)));
}

ConvShape conv(int n, int c, int h, int w, int o, int k, int stride) {
  ConvShape s;
  s.batch = n;
  s.in_channels = c;
  s.in_height = h;
  s.in_width = w;
  s.out_channels = o;
  s.kernel = k;
  s.stride = stride;
  return s;
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(conv(1, 1, 5, 5, 1, 3, 1),
                                           conv(2, 3, 9, 7, 4, 3, 2),
                                           conv(3, 3, 32, 32, 8, 3, 2),
                                           conv(2, 5, 6, 11, 3, 1, 1),
                                           conv(1, 4, 10, 10, 6, 3, 3)));

TEST(SignedDistance, KnownValues) {
  const double rect[5] = {0, 0, 0, 1.0, 0.5};
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::rectangle, rect, 0, 0), -0.5);
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::rectangle, rect, 2, 0), 1.0);
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::rectangle, rect, 4, 4.5),
                   5.0);
  const double rot[5] = {0, 0, M_PI / 2, 1.0, 0.5};
  EXPECT_NEAR(signed_distance(PrimitiveKind::rectangle, rot, 0, 2), 1.0, 1e-12);
  const double cap[5] = {0, 0, 2, 0, 0.25};
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::capsule, cap, 1, 0), -0.25);
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::capsule, cap, 3, 0), 0.75);
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::capsule, cap, 1, -1), 0.75);
  const double disk[5] = {1, 1, 0.5, 0, 0};
  EXPECT_DOUBLE_EQ(signed_distance(PrimitiveKind::disk, disk, 1, 3), 1.5);
}

TEST(SignedDistance, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5), pos(0.2, 0.8);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto kind = static_cast<PrimitiveKind>(trial % 3);
    double p[5] = {u(rng), u(rng), u(rng), pos(rng), pos(rng)};
    if (kind == PrimitiveKind::capsule) p[4] = 0.5 * pos(rng);
    if (kind == PrimitiveKind::disk) p[2] = pos(rng);
    const double px = u(rng), py = u(rng);
    double g[5] = {0, 0, 0, 0, 0};
    signed_distance_grad(kind, p, px, py, g);
    for (int i = 0; i < kPrimitiveParams; ++i) {
      double q[5];
      std::copy(p, p + 5, q);
      q[i] = p[i] + h;
      const double fp = signed_distance(kind, q, px, py);
      q[i] = p[i] - h;
      const double fm = signed_distance(kind, q, px, py);
      const double fd = (fp - fm) / (2 * h);
      // Skip the measure-zero ridges where the distance is not smooth.
      if (std::abs(fd - g[i]) > 1e-5 && std::abs(fp + fm - 2 * signed_distance(kind, p, px, py)) > 1e-9) {
        continue;
      }
      EXPECT_NEAR(fd, g[i], 1e-6) << "kind " << trial % 3 << " param " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 1200);
}

RasterShape raster_shape(int batch, int prims, int h, int w) {
  RasterShape s;
  s.batch = batch;
  s.primitives = prims;
  s.height = h;
  s.width = w;
  s.x_min = -2.5;
  s.x_max = 2.5;
  s.y_min = -1.25;
  s.y_max = 1.25;
  s.sharpness = 40.0;
  return s;
}

TEST(Raster, ParallelMatchesReference) {
  const RasterShape s = raster_shape(3, 3, 16, 24);
  const PrimitiveKind kinds[3] = {PrimitiveKind::rectangle,
                                  PrimitiveKind::capsule, PrimitiveKind::disk};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.1, 0.5);
  std::vector<double> params(s.batch * s.primitives * kPrimitiveParams);
  for (int n = 0; n < s.batch; ++n) {
    double* p = &params[n * 15];
    p[0] = u(rng); p[1] = u(rng); p[2] = u(rng); p[3] = pos(rng); p[4] = pos(rng);
    p[5] = u(rng); p[6] = u(rng); p[7] = u(rng); p[8] = u(rng); p[9] = pos(rng);
    p[10] = u(rng); p[11] = u(rng); p[12] = pos(rng); p[13] = 0; p[14] = 0;
  }
  const size_t pixels = size_t(s.batch) * s.height * s.width;
  std::vector<double> ir(pixels, 0.0), ip = ir;
  std::vector<double> dr(pixels * s.primitives), dp = dr;
  reference::raster_forward(s, kinds, params.data(), ir.data(), dr.data());
  parallel::raster_forward(s, kinds, params.data(), ip.data(), dp.data());
  EXPECT_EQ(ir, ip);
  EXPECT_EQ(dr, dp);
  for (double v : ir) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto gimage = random_vector(rng, pixels);
  std::vector<double> gr(params.size(), 0.0), gp = gr;
  reference::raster_backward(s, kinds, params.data(), dr.data(), gimage.data(),
                             gr.data());
  parallel::raster_backward(s, kinds, params.data(), dp.data(), gimage.data(),
                            gp.data());
  expect_close(gr, gp, 1e-12);

  // Directional finite-difference check of the backward kernel.
  const double h = 1e-6;
  for (size_t i = 0; i < params.size(); ++i) {
    if (i % 5 >= 3 && i % 15 >= 10) continue;  // unused disk slots
    auto q = params;
    auto image_dot = [&](double delta) {
      q[i] = params[i] + delta;
      std::vector<double> img(pixels, 0.0), d(pixels * s.primitives);
      reference::raster_forward(s, kinds, q.data(), img.data(), d.data());
      double acc = 0;
      for (size_t k = 0; k < pixels; ++k) acc += img[k] * gimage[k];
      return acc;
    };
    const double fd = (image_dot(h) - image_dot(-h)) / (2 * h);
    EXPECT_NEAR(fd, gr[i], 1e-5 * (1 + std::abs(fd))) << "param " << i;
  }
}

}  // namespace
}  // namespace dva::kernels
