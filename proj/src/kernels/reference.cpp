// Serial reference kernels. Written for clarity, not speed; the tests check
// the parallel kernels against these.

#include <cmath>
#include <vector>

#include "dva/kernels/kernels.hpp"

namespace dva::kernels::reference {

void gemm_nn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] += acc;
    }
  }
}

void gemm_tn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += A[k * M + i] * B[k * N + j];
      C[i * N + j] += acc;
    }
  }
}

void gemm_nt(int M, int N, int K, const double* A, const double* B,
             double* C) {
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
      C[i * N + j] += acc;
    }
  }
}

void conv2d_forward(const ConvShape& s, const double* x, const double* w,
                    const double* bias, double* y) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out_channels; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          double acc = bias != nullptr ? bias[o] : 0.0;
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int kr = 0; kr < s.kernel; ++kr) {
              for (int kc = 0; kc < s.kernel; ++kc) {
                const int ir = r * s.stride + kr;
                const int ic = c * s.stride + kc;
                acc += w[((o * s.in_channels + ci) * s.kernel + kr) *
                             s.kernel +
                         kc] *
                       x[((int64_t{n} * s.in_channels + ci) * s.in_height +
                          ir) *
                             s.in_width +
                         ic];
              }
            }
          }
          y[((int64_t{n} * s.out_channels + o) * oh + r) * ow + c] += acc;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, const double* w,
                           const double* gy, double* gx) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int n = 0; n < s.batch; ++n) {
    for (int o = 0; o < s.out_channels; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          const double g =
              gy[((int64_t{n} * s.out_channels + o) * oh + r) * ow + c];
          for (int ci = 0; ci < s.in_channels; ++ci) {
            for (int kr = 0; kr < s.kernel; ++kr) {
              for (int kc = 0; kc < s.kernel; ++kc) {
                const int ir = r * s.stride + kr;
                const int ic = c * s.stride + kc;
                gx[((int64_t{n} * s.in_channels + ci) * s.in_height + ir) *
                       s.in_width +
                   ic] +=
                    g * w[((o * s.in_channels + ci) * s.kernel + kr) *
                              s.kernel +
                          kc];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvShape& s, const double* x,
                            const double* gy, double* gw, double* gbias) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int o = 0; o < s.out_channels; ++o) {
    for (int ci = 0; ci < s.in_channels; ++ci) {
      for (int kr = 0; kr < s.kernel; ++kr) {
        for (int kc = 0; kc < s.kernel; ++kc) {
          double acc = 0.0;
          for (int n = 0; n < s.batch; ++n) {
            for (int r = 0; r < oh; ++r) {
              for (int c = 0; c < ow; ++c) {
                const int ir = r * s.stride + kr;
                const int ic = c * s.stride + kc;
                acc += gy[((int64_t{n} * s.out_channels + o) * oh + r) * ow +
                          c] *
                       x[((int64_t{n} * s.in_channels + ci) * s.in_height +
                          ir) *
                             s.in_width +
                         ic];
              }
            }
          }
          gw[((o * s.in_channels + ci) * s.kernel + kr) * s.kernel + kc] +=
              acc;
        }
      }
    }
    if (gbias != nullptr) {
      double acc = 0.0;
      for (int n = 0; n < s.batch; ++n) {
        for (int r = 0; r < oh * ow; ++r) {
          acc += gy[(int64_t{n} * s.out_channels + o) * oh * ow + r];
        }
      }
      gbias[o] += acc;
    }
  }
}

void raster_forward(const RasterShape& s, const PrimitiveKind* kinds,
                    const double* params, double* image, double* distances) {
  const int64_t plane = int64_t{s.height} * s.width;
  for (int n = 0; n < s.batch; ++n) {
    for (int r = 0; r < s.height; ++r) {
      for (int c = 0; c < s.width; ++c) {
        const double px = s.pixel_x(c), py = s.pixel_y(r);
        double coverage = 0.0;
        for (int k = 0; k < s.primitives; ++k) {
          const double* p =
              params + (int64_t{n} * s.primitives + k) * kPrimitiveParams;
          const double d = signed_distance(kinds[k], p, px, py);
          if (distances != nullptr) {
            distances[(int64_t{n} * s.primitives + k) * plane +
                      r * s.width + c] = d;
          }
          const double cov = 1.0 / (1.0 + std::exp(s.sharpness * d));
          if (cov > coverage) coverage = cov;
        }
        image[n * plane + r * s.width + c] += 1.0 - coverage;
      }
    }
  }
}

void raster_backward(const RasterShape& s, const PrimitiveKind* kinds,
                     const double* params, const double* distances,
                     const double* gimage, double* gparams) {
  const int64_t plane = int64_t{s.height} * s.width;
  double g[kPrimitiveParams];
  for (int n = 0; n < s.batch; ++n) {
    for (int r = 0; r < s.height; ++r) {
      for (int c = 0; c < s.width; ++c) {
        // The winning primitive is the one with the smallest distance; the
        // first one wins ties, matching the forward max.
        int best = 0;
        double best_d = distances[(int64_t{n} * s.primitives) * plane +
                                  r * s.width + c];
        for (int k = 1; k < s.primitives; ++k) {
          const double d = distances[(int64_t{n} * s.primitives + k) * plane +
                                     r * s.width + c];
          const double cov_best = 1.0 / (1.0 + std::exp(s.sharpness * best_d));
          const double cov = 1.0 / (1.0 + std::exp(s.sharpness * d));
          if (cov > cov_best) {
            best = k;
            best_d = d;
          }
        }
        const double cov = 1.0 / (1.0 + std::exp(s.sharpness * best_d));
        const double dpix_dd = s.sharpness * cov * (1.0 - cov);
        const double up = gimage[n * plane + r * s.width + c] * dpix_dd;
        if (up == 0.0) continue;
        const double* p =
            params + (int64_t{n} * s.primitives + best) * kPrimitiveParams;
        signed_distance_grad(kinds[best], p, s.pixel_x(c), s.pixel_y(r), g);
        double* gp =
            gparams + (int64_t{n} * s.primitives + best) * kPrimitiveParams;
        for (int i = 0; i < kPrimitiveParams; ++i) gp[i] += up * g[i];
      }
    }
  }
}

}  // namespace dva::kernels::reference
