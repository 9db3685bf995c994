// OpenMP kernels. Work is split over independent outputs only (rows of C,
// images of a batch, output channels), so every output element is reduced
// in the same order regardless of how many threads run.

#include <cmath>
#include <cstring>
#include <vector>

#include "dva/kernels/kernels.hpp"

namespace dva::kernels::parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr int64_t kParallelThreshold = 1 << 15;

// Row-major C[i, :] += a * B[k, :], the innermost loop of every product.
inline void axpy_row(int n, double a, const double* b, double* c) {
  for (int j = 0; j < n; ++j) c[j] += a * b[j];
}

// cols[(ci*k + kr)*k + kc][r*ow + c] = x[ci][r*stride + kr][c*stride + kc]
void im2col(const ConvShape& s, const double* x, double* cols) {
  const int oh = s.out_height(), ow = s.out_width();
  const int positions = oh * ow;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    for (int kr = 0; kr < s.kernel; ++kr) {
      for (int kc = 0; kc < s.kernel; ++kc) {
        double* row = cols + ((ci * s.kernel + kr) * s.kernel + kc) *
                                 int64_t{positions};
        for (int r = 0; r < oh; ++r) {
          const double* src = x + (int64_t{ci} * s.in_height +
                                   r * s.stride + kr) *
                                      s.in_width +
                              kc;
          double* dst = row + r * ow;
          if (s.stride == 1) {
            std::memcpy(dst, src, sizeof(double) * ow);
          } else {
            for (int c = 0; c < ow; ++c) dst[c] = src[c * s.stride];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvShape& s, const double* cols, double* x) {
  const int oh = s.out_height(), ow = s.out_width();
  const int positions = oh * ow;
  for (int ci = 0; ci < s.in_channels; ++ci) {
    for (int kr = 0; kr < s.kernel; ++kr) {
      for (int kc = 0; kc < s.kernel; ++kc) {
        const double* row = cols + ((ci * s.kernel + kr) * s.kernel + kc) *
                                       int64_t{positions};
        for (int r = 0; r < oh; ++r) {
          double* dst = x + (int64_t{ci} * s.in_height + r * s.stride + kr) *
                                s.in_width +
                        kc;
          const double* src = row + r * ow;
          for (int c = 0; c < ow; ++c) dst[c * s.stride] += src[c];
        }
      }
    }
  }
}

// colsT[r*ow + c][(ci*k + kr)*k + kc], the transpose of im2col.
void im2row(const ConvShape& s, const double* x, double* rows) {
  const int oh = s.out_height(), ow = s.out_width();
  const int patch = s.in_channels * s.kernel * s.kernel;
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double* dst = rows + int64_t{r * ow + c} * patch;
      for (int ci = 0; ci < s.in_channels; ++ci) {
        for (int kr = 0; kr < s.kernel; ++kr) {
          const double* src = x + (int64_t{ci} * s.in_height +
                                   r * s.stride + kr) *
                                      s.in_width +
                              c * s.stride;
          for (int kc = 0; kc < s.kernel; ++kc) *dst++ = src[kc];
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  const bool par = int64_t{M} * N * K >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < M; ++i) {
    double* c = C + int64_t{i} * N;
    const double* a = A + int64_t{i} * K;
    for (int k = 0; k < K; ++k) {
      if (a[k] != 0.0) axpy_row(N, a[k], B + int64_t{k} * N, c);
    }
  }
}

void gemm_tn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  const bool par = int64_t{M} * N * K >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < M; ++i) {
    double* c = C + int64_t{i} * N;
    for (int k = 0; k < K; ++k) {
      const double a = A[int64_t{k} * M + i];
      if (a != 0.0) axpy_row(N, a, B + int64_t{k} * N, c);
    }
  }
}

void gemm_nt(int M, int N, int K, const double* A, const double* B,
             double* C) {
  // Transpose B once so the inner loop streams contiguous rows.
  std::vector<double> bt(static_cast<size_t>(N) * K);
  for (int j = 0; j < N; ++j) {
    for (int k = 0; k < K; ++k) bt[int64_t{k} * N + j] = B[int64_t{j} * K + k];
  }
  gemm_nn(M, N, K, A, bt.data(), C);
}

void conv2d_forward(const ConvShape& s, const double* x, const double* w,
                    const double* bias, double* y) {
  const int positions = s.out_height() * s.out_width();
  const int patch = s.in_channels * s.kernel * s.kernel;
  const int64_t in_stride = int64_t{s.in_channels} * s.in_height * s.in_width;
  const int64_t out_stride = int64_t{s.out_channels} * positions;
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<size_t>(patch) * positions);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      im2col(s, x + n * in_stride, cols.data());
      double* out = y + n * out_stride;
      for (int o = 0; o < s.out_channels; ++o) {
        double* row = out + int64_t{o} * positions;
        if (bias != nullptr) {
          for (int p = 0; p < positions; ++p) row[p] += bias[o];
        }
        const double* wo = w + int64_t{o} * patch;
        for (int k = 0; k < patch; ++k) {
          axpy_row(positions, wo[k], cols.data() + int64_t{k} * positions,
                   row);
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, const double* w,
                           const double* gy, double* gx) {
  const int positions = s.out_height() * s.out_width();
  const int patch = s.in_channels * s.kernel * s.kernel;
  const int64_t in_stride = int64_t{s.in_channels} * s.in_height * s.in_width;
  const int64_t out_stride = int64_t{s.out_channels} * positions;
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<size_t>(patch) * positions);
#pragma omp for schedule(static)
    for (int n = 0; n < s.batch; ++n) {
      std::fill(cols.begin(), cols.end(), 0.0);
      const double* g = gy + n * out_stride;
      // cols[k, :] += sum_o w[o, k] * g[o, :]
      for (int k = 0; k < patch; ++k) {
        double* crow = cols.data() + int64_t{k} * positions;
        for (int o = 0; o < s.out_channels; ++o) {
          const double wk = w[int64_t{o} * patch + k];
          if (wk != 0.0) axpy_row(positions, wk, g + int64_t{o} * positions, crow);
        }
      }
      col2im_add(s, cols.data(), gx + n * in_stride);
    }
  }
}

void conv2d_backward_weight(const ConvShape& s, const double* x,
                            const double* gy, double* gw, double* gbias) {
  const int positions = s.out_height() * s.out_width();
  const int patch = s.in_channels * s.kernel * s.kernel;
  const int64_t in_stride = int64_t{s.in_channels} * s.in_height * s.in_width;
  const int64_t out_stride = int64_t{s.out_channels} * positions;
  std::vector<double> rows(static_cast<size_t>(positions) * patch);
  for (int n = 0; n < s.batch; ++n) {
    im2row(s, x + n * in_stride, rows.data());
    const double* g = gy + n * out_stride;
    // gw[o, :] += sum_p g[o, p] * rows[p, :]
    const bool par =
        int64_t{s.out_channels} * positions * patch >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
    for (int o = 0; o < s.out_channels; ++o) {
      double* wrow = gw + int64_t{o} * patch;
      const double* go = g + int64_t{o} * positions;
      for (int p = 0; p < positions; ++p) {
        if (go[p] != 0.0) axpy_row(patch, go[p], rows.data() + int64_t{p} * patch, wrow);
      }
      if (gbias != nullptr) {
        double acc = 0.0;
        for (int p = 0; p < positions; ++p) acc += go[p];
        gbias[o] += acc;
      }
    }
  }
}

void raster_forward(const RasterShape& s, const PrimitiveKind* kinds,
                    const double* params, double* image, double* distances) {
  const int64_t plane = int64_t{s.height} * s.width;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.batch; ++n) {
    for (int r = 0; r < s.height; ++r) {
      const double py = s.pixel_y(r);
      for (int c = 0; c < s.width; ++c) {
        const double px = s.pixel_x(c);
        double best_d = 0.0;
        bool any = false;
        for (int k = 0; k < s.primitives; ++k) {
          const double* p =
              params + (int64_t{n} * s.primitives + k) * kPrimitiveParams;
          const double d = signed_distance(kinds[k], p, px, py);
          if (distances != nullptr) {
            distances[(int64_t{n} * s.primitives + k) * plane +
                      r * s.width + c] = d;
          }
          if (!any || d < best_d) {
            best_d = d;
            any = true;
          }
        }
        // max_k sigmoid(-kd) = sigmoid(-k min_k d)
        const double coverage = 1.0 / (1.0 + std::exp(s.sharpness * best_d));
        image[n * plane + r * s.width + c] += 1.0 - coverage;
      }
    }
  }
}

void raster_backward(const RasterShape& s, const PrimitiveKind* kinds,
                     const double* params, const double* distances,
                     const double* gimage, double* gparams) {
  const int64_t plane = int64_t{s.height} * s.width;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < s.batch; ++n) {
    double g[kPrimitiveParams];
    for (int r = 0; r < s.height; ++r) {
      for (int c = 0; c < s.width; ++c) {
        const int64_t pix = r * s.width + c;
        int best = 0;
        double best_d = distances[(int64_t{n} * s.primitives) * plane + pix];
        for (int k = 1; k < s.primitives; ++k) {
          const double d =
              distances[(int64_t{n} * s.primitives + k) * plane + pix];
          if (d < best_d) {
            best = k;
            best_d = d;
          }
        }
        const double cov = 1.0 / (1.0 + std::exp(s.sharpness * best_d));
        const double up = gimage[n * plane + pix] * s.sharpness * cov * (1.0 - cov);
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

}  // namespace dva::kernels::parallel
