#pragma once

// Differentiable primitives. Each op computes its value eagerly and, when
// any operand lives on a tape, records a node with its backward rule.
// Binary elementwise ops broadcast with numpy rules (trailing dimensions
// aligned; size-1 dimensions stretch). Shape errors throw
// std::invalid_argument naming the op and the shapes.

#include <vector>

#include "dva/ad/tape.hpp"
#include "dva/ad/tensor.hpp"

namespace dva::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
// Smooth saturation into (lo, hi): mid + half * tanh((x - mid) / half).
// With lo = -L, hi = L this is L * tanh(x / L).
Tensor smooth_clamp(const Tensor& x, double lo, double hi);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Elements [start, start + length) along `axis`.
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);

// x [N,C,H,W], w [O,C,k,k], bias [O] (may be undefined), valid padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride);

// Normalizes over the last dimension (no affine transform).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Result shape of broadcasting a against b; throws if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }

}  // namespace dva::ad
