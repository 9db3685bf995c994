#pragma once

// Dense numeric kernels used by the tape primitives.
//
// Every kernel exists twice: a straightforward serial version in
// `kernels::reference` that the tests treat as ground truth, and a
// cache-friendly OpenMP version in `kernels::parallel`. The parallel
// versions only split work across independent outputs, so each output is
// reduced in a fixed order and results do not depend on the thread count.
//
// All kernels accumulate into their output buffers (`+=`).

#include <cstdint>

namespace dva::kernels {

enum class Backend { reference, parallel };

void set_backend(Backend backend);
Backend backend();

// Switches the backend for the lifetime of the object.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;

  int out_height() const { return (in_height - kernel) / stride + 1; }
  int out_width() const { return (in_width - kernel) / stride + 1; }
  int64_t in_size() const {
    return int64_t{batch} * in_channels * in_height * in_width;
  }
  int64_t out_size() const {
    return int64_t{batch} * out_channels * out_height() * out_width();
  }
  int64_t weight_size() const {
    return int64_t{out_channels} * in_channels * kernel * kernel;
  }
};

enum class PrimitiveKind : int { rectangle = 0, capsule = 1, disk = 2 };

// Per-primitive parameter layout (5 doubles each):
//   rectangle: center x, center y, angle, half width, half height
//   capsule:   a.x, a.y, b.x, b.y, radius
//   disk:      center x, center y, radius, unused, unused
inline constexpr int kPrimitiveParams = 5;

struct RasterShape {
  int batch = 1;
  int primitives = 1;
  int height = 8;
  int width = 8;
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
  double sharpness = 40.0;

  double pixel_x(int col) const {
    return x_min + (col + 0.5) * (x_max - x_min) / width;
  }
  double pixel_y(int row) const {
    return y_max - (row + 0.5) * (y_max - y_min) / height;
  }
};

// Signed distance from (px, py) to one primitive, and its gradient with
// respect to the 5 primitive parameters.
double signed_distance(PrimitiveKind kind, const double* params, double px,
                       double py);
double signed_distance_grad(PrimitiveKind kind, const double* params,
                            double px, double py, double* grad);

#define DVA_KERNEL_DECLS                                                      \
  /* C[M,N] += A[M,K] B[K,N] */                                               \
  void gemm_nn(int M, int N, int K, const double* A, const double* B,         \
               double* C);                                                    \
  /* C[M,N] += A[K,M]^T B[K,N] */                                             \
  void gemm_tn(int M, int N, int K, const double* A, const double* B,         \
               double* C);                                                    \
  /* C[M,N] += A[M,K] B[N,K]^T */                                             \
  void gemm_nt(int M, int N, int K, const double* A, const double* B,         \
               double* C);                                                    \
  void conv2d_forward(const ConvShape& s, const double* x, const double* w,   \
                      const double* bias, double* y);                         \
  void conv2d_backward_input(const ConvShape& s, const double* w,             \
                             const double* gy, double* gx);                   \
  void conv2d_backward_weight(const ConvShape& s, const double* x,            \
                              const double* gy, double* gw, double* gbias);   \
  /* image[N,H,W] = 1 - max_k sigmoid(-sharpness * d_k); distances          \
     [N,K,H,W], if not null, receives every signed distance. */               \
  void raster_forward(const RasterShape& s, const PrimitiveKind* kinds,       \
                      const double* params, double* image,                    \
                      double* distances);                                     \
  void raster_backward(const RasterShape& s, const PrimitiveKind* kinds,      \
                       const double* params, const double* distances,         \
                       const double* gimage, double* gparams);

namespace reference {
DVA_KERNEL_DECLS
}  // namespace reference

namespace parallel {
DVA_KERNEL_DECLS
}  // namespace parallel

// Dispatch to the active backend.
DVA_KERNEL_DECLS

#undef DVA_KERNEL_DECLS

}  // namespace dva::kernels
