#include <atomic>

#include "dva/kernels/kernels.hpp"

namespace dva::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};
}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

#define DVA_DISPATCH(name, ...)                         \
  if (backend() == Backend::reference) {                \
    reference::name(__VA_ARGS__);                       \
  } else {                                              \
    parallel::name(__VA_ARGS__);                        \
  }

void gemm_nn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  DVA_DISPATCH(gemm_nn, M, N, K, A, B, C)
}
void gemm_tn(int M, int N, int K, const double* A, const double* B,
             double* C) {
  DVA_DISPATCH(gemm_tn, M, N, K, A, B, C)
}
void gemm_nt(int M, int N, int K, const double* A, const double* B,
             double* C) {
  DVA_DISPATCH(gemm_nt, M, N, K, A, B, C)
}
void conv2d_forward(const ConvShape& s, const double* x, const double* w,
                    const double* bias, double* y) {
  DVA_DISPATCH(conv2d_forward, s, x, w, bias, y)
}
void conv2d_backward_input(const ConvShape& s, const double* w,
                           const double* gy, double* gx) {
  DVA_DISPATCH(conv2d_backward_input, s, w, gy, gx)
}
void conv2d_backward_weight(const ConvShape& s, const double* x,
                            const double* gy, double* gw, double* gbias) {
  DVA_DISPATCH(conv2d_backward_weight, s, x, gy, gw, gbias)
}
void raster_forward(const RasterShape& s, const PrimitiveKind* kinds,
                    const double* params, double* image, double* distances) {
  DVA_DISPATCH(raster_forward, s, kinds, params, image, distances)
}
void raster_backward(const RasterShape& s, const PrimitiveKind* kinds,
                     const double* params, const double* distances,
                     const double* gimage, double* gparams) {
  DVA_DISPATCH(raster_backward, s, kinds, params, distances, gimage, gparams)
}

#undef DVA_DISPATCH

}  // namespace dva::kernels
