#include "dva/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "dva/kernels/kernels.hpp"

namespace dva::ad {

namespace {

Tape* tape_of(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->tape() != nullptr) return t->tape();
  }
  return nullptr;
}

// Builds the result tensor, recording a node if any input is on a tape.
template <class MakeBackward>
Tensor finish(Op op, std::initializer_list<const Tensor*> inputs, Shape shape,
              std::vector<double> values, int64_t saved,
              MakeBackward&& make_backward) {
  Tape* tape = tape_of(inputs);
  if (tape == nullptr) return Tensor(std::move(shape), std::move(values));
  std::vector<const Tensor*> ins(inputs);
  return tape->record(op, ins, std::move(shape), std::move(values),
                      make_backward(), saved);
}

[[noreturn]] void shape_error(const char* op, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_string(a) + " and " + shape_string(b));
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
  return axis;
}

template <class F, class D>
Tensor unary(Op op, const Tensor& x, F f, D dydx) {
  std::vector<double> y(x.size());
  const double* xv = x.data();
  for (int64_t i = 0; i < x.size(); ++i) y[i] = f(xv[i]);
  Tensor xs = x;
  return finish(op, {&x}, x.shape(), std::move(y), x.size(), [&] {
    return [xs, dydx](const double* g, std::span<double* const> gi) {
      const double* xv = xs.data();
      for (int64_t i = 0; i < xs.size(); ++i) gi[0][i] += g[i] * dydx(xv[i]);
    };
  });
}

// y = factor * x + offset; the backward rule needs no saved input.
Tensor affine(Op op, const Tensor& x, double factor, double offset) {
  std::vector<double> y(x.size());
  const double* xv = x.data();
  for (int64_t i = 0; i < x.size(); ++i) y[i] = factor * xv[i] + offset;
  const int64_t n = x.size();
  return finish(op, {&x}, x.shape(), std::move(y), 0, [&] {
    return [n, factor](const double* g, std::span<double* const> gi) {
      for (int64_t i = 0; i < n; ++i) gi[0][i] += factor * g[i];
    };
  });
}

// Same-shape binary op; da/db give the partials at (a, b).
template <class F, class DA, class DB>
Tensor binary_same(Op op, const Tensor& a, const Tensor& b, F f, DA da,
                   DB db) {
  std::vector<double> y(a.size());
  const double* av = a.data();
  const double* bv = b.data();
  for (int64_t i = 0; i < a.size(); ++i) y[i] = f(av[i], bv[i]);
  Tensor as = a, bs = b;
  const int64_t saved = (b.requires_grad() ? a.size() : 0) +
                        (a.requires_grad() ? b.size() : 0);
  return finish(op, {&a, &b}, a.shape(), std::move(y), saved, [&] {
    return [as, bs, da, db](const double* g, std::span<double* const> gi) {
      const double* av = as.data();
      const double* bv = bs.data();
      const int64_t n = as.size();
      if (gi[0] != nullptr) {
        for (int64_t i = 0; i < n; ++i) gi[0][i] += g[i] * da(av[i], bv[i]);
      }
      if (gi[1] != nullptr) {
        for (int64_t i = 0; i < n; ++i) gi[1][i] += g[i] * db(av[i], bv[i]);
      }
    };
  });
}

template <class F, class DA, class DB>
Tensor binary(Op op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  if (a.shape() == b.shape()) return binary_same(op, a, b, f, da, db);
  const Shape out = broadcast_shape(a.shape(), b.shape(), op_name(op));
  const Tensor a2 = a.shape() == out ? a : broadcast_to(a, out);
  const Tensor b2 = b.shape() == out ? b : broadcast_to(b, out);
  return binary_same(op, a2, b2, f, da, db);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      Op::add, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      Op::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      Op::mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      Op::div, a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      Op::maximum, a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& x) {
  return affine(Op::neg, x, -1.0, 0.0);
}

Tensor scale(const Tensor& x, double factor) {
  return affine(Op::scale, x, factor, 0.0);
}

Tensor add_scalar(const Tensor& x, double offset) {
  return affine(Op::add_scalar, x, 1.0, offset);
}

Tensor exp(const Tensor& x) {
  return unary(
      Op::exp, x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(
      Op::log, x, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      Op::tanh, x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor sin(const Tensor& x) {
  return unary(
      Op::sin, x, [](double v) { return std::sin(v); },
      [](double v) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(
      Op::cos, x, [](double v) { return std::cos(v); },
      [](double v) { return -std::sin(v); });
}

Tensor elu(const Tensor& x) {
  return unary(
      Op::elu, x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
}

Tensor relu(const Tensor& x) {
  return unary(
      Op::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      Op::square, x, [](double v) { return v * v; },
      [](double v) { return 2.0 * v; });
}

Tensor smooth_clamp(const Tensor& x, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("smooth_clamp: need lo < hi");
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  return unary(
      Op::smooth_clamp, x,
      [mid, half](double v) { return mid + half * std::tanh((v - mid) / half); },
      [mid, half](double v) {
        const double t = std::tanh((v - mid) / half);
        return 1.0 - t * t;
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const int M = static_cast<int>(a.dim(0));
  const int K = static_cast<int>(a.dim(1));
  const int N = static_cast<int>(b.dim(1));
  std::vector<double> y(static_cast<size_t>(M) * N, 0.0);
  kernels::gemm_nn(M, N, K, a.data(), b.data(), y.data());
  Tensor as = a, bs = b;
  const int64_t saved = a.size() + b.size();
  return finish(Op::matmul, {&a, &b}, {M, N}, std::move(y), saved, [&] {
    return [as, bs, M, N, K](const double* g, std::span<double* const> gi) {
      if (gi[0] != nullptr) kernels::gemm_nt(M, K, N, g, bs.data(), gi[0]);
      if (gi[1] != nullptr) kernels::gemm_tn(K, N, M, as.data(), g, gi[1]);
    };
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const int64_t n = x.size();
  return finish(Op::sum, {&x}, {}, {acc}, 0, [&] {
    return [n](const double* g, std::span<double* const> gi) {
      for (int64_t i = 0; i < n; ++i) gi[0][i] += g[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const int64_t n = x.size();
  return finish(Op::mean, {&x}, {}, {acc / n}, 0, [&] {
    return [n](const double* g, std::span<double* const> gi) {
      const double share = g[0] / n;
      for (int64_t i = 0; i < n; ++i) gi[0][i] += share;
    };
  });
}

Tensor sum_axis(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "sum_axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t len = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<double> y(outer * inner, 0.0);
  const double* xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < len; ++k) {
      for (int64_t i = 0; i < inner; ++i) {
        y[o * inner + i] += xv[(o * len + k) * inner + i];
      }
    }
  }
  return finish(Op::sum_axis, {&x}, out_shape, std::move(y), 0, [&] {
    return [outer, inner, len](const double* g, std::span<double* const> gi) {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t k = 0; k < len; ++k) {
          for (int64_t i = 0; i < inner; ++i) {
            gi[0][(o * len + k) * inner + i] += g[o * inner + i];
          }
        }
      }
    };
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape, "broadcast") != shape) {
    shape_error("broadcast", x.shape(), shape);
  }
  const int rank = static_cast<int>(shape.size());
  const int offset = rank - x.rank();
  // Input stride per output dimension (0 where the input is stretched).
  std::vector<int64_t> stride(rank, 0);
  int64_t s = 1;
  for (int i = x.rank() - 1; i >= 0; --i) {
    stride[i + offset] = x.dim(i) == 1 ? 0 : s;
    s *= x.dim(i);
  }
  const int64_t n = numel(shape);
  auto index = std::make_shared<std::vector<int64_t>>(n);
  std::vector<int64_t> counter(rank, 0);
  int64_t src = 0;
  for (int64_t k = 0; k < n; ++k) {
    (*index)[k] = src;
    for (int d = rank - 1; d >= 0; --d) {
      ++counter[d];
      src += stride[d];
      if (counter[d] < shape[d]) break;
      src -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> y(n);
  const double* xv = x.data();
  for (int64_t k = 0; k < n; ++k) y[k] = xv[(*index)[k]];
  return finish(Op::broadcast, {&x}, shape, std::move(y), 0, [&] {
    return [index](const double* g, std::span<double* const> gi) {
      const int64_t n = static_cast<int64_t>(index->size());
      for (int64_t k = 0; k < n; ++k) gi[0][(*index)[k]] += g[k];
    };
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.size()) shape_error("reshape", x.shape(), shape);
  const int64_t n = x.size();
  return finish(Op::reshape, {&x}, shape, x.to_vector(), 0, [&] {
    return [n](const double* g, std::span<double* const> gi) {
      for (int64_t i = 0; i < n; ++i) gi[0][i] += g[i];
    };
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<int>(first.size()), "concat");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first[i];
  for (size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<int64_t> lens;
  int64_t total = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size()) shape_error("concat", first, p.shape());
    a[axis] = b[axis] = 0;
    if (a != b) shape_error("concat", first, p.shape());
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> y(outer * total * inner);
  int64_t start = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const double* pv = parts[p].data();
    const int64_t chunk = lens[p] * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(pv + o * chunk, pv + (o + 1) * chunk,
                y.begin() + o * total * inner + start * inner);
    }
    start += lens[p];
  }
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (p.tape() != nullptr) tape = p.tape();
  }
  if (tape == nullptr) return Tensor(out_shape, std::move(y));
  std::vector<const Tensor*> ins;
  for (const Tensor& p : parts) ins.push_back(&p);
  return tape->record(
      Op::concat, ins, out_shape, std::move(y),
      [lens, outer, inner, total](const double* g,
                                  std::span<double* const> gi) {
        int64_t start = 0;
        for (size_t p = 0; p < lens.size(); ++p) {
          const int64_t chunk = lens[p] * inner;
          if (gi[p] != nullptr) {
            for (int64_t o = 0; o < outer; ++o) {
              const double* src = g + o * total * inner + start * inner;
              for (int64_t i = 0; i < chunk; ++i) gi[p][o * chunk + i] += src[i];
            }
          }
          start += lens[p];
        }
      },
      0);
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || length < 0 || start + length > x.dim(axis)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                ", " + std::to_string(start + length) +
                                ") out of bounds for shape " +
                                shape_string(x.shape()));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t len = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> y(outer * length * inner);
  const double* xv = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(xv + (o * len + start) * inner,
              xv + (o * len + start + length) * inner,
              y.begin() + o * length * inner);
  }
  return finish(Op::slice, {&x}, out_shape, std::move(y), 0, [&] {
    return [outer, inner, len, start, length](const double* g,
                                              std::span<double* const> gi) {
      for (int64_t o = 0; o < outer; ++o) {
        double* dst = gi[0] + (o * len + start) * inner;
        const double* src = g + o * length * inner;
        for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    };
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) ||
      w.dim(2) != w.dim(3) || stride < 1 || x.dim(2) < w.dim(2) ||
      x.dim(3) < w.dim(3)) {
    shape_error("conv2d", x.shape(), w.shape());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    shape_error("conv2d", w.shape(), bias.shape());
  }
  kernels::ConvShape s;
  s.batch = static_cast<int>(x.dim(0));
  s.in_channels = static_cast<int>(x.dim(1));
  s.in_height = static_cast<int>(x.dim(2));
  s.in_width = static_cast<int>(x.dim(3));
  s.out_channels = static_cast<int>(w.dim(0));
  s.kernel = static_cast<int>(w.dim(2));
  s.stride = stride;
  std::vector<double> y(s.out_size(), 0.0);
  kernels::conv2d_forward(s, x.data(), w.data(),
                          bias.defined() ? bias.data() : nullptr, y.data());
  const Shape out_shape{s.batch, s.out_channels, s.out_height(), s.out_width()};
  const Tensor b = bias.defined() ? bias : Tensor::zeros({w.dim(0)});
  Tensor xs = x, ws = w;
  const int64_t saved = x.size() + w.size();
  Tape* tape = tape_of({&x, &w, &b});
  if (tape == nullptr) return Tensor(out_shape, std::move(y));
  std::vector<const Tensor*> ins{&x, &w, &b};
  return tape->record(
      Op::conv2d, ins, out_shape, std::move(y),
      [xs, ws, s](const double* g, std::span<double* const> gi) {
        if (gi[0] != nullptr) {
          kernels::conv2d_backward_input(s, ws.data(), g, gi[0]);
        }
        if (gi[1] != nullptr || gi[2] != nullptr) {
          std::vector<double> wtmp;
          double* gw = gi[1];
          if (gw == nullptr) {
            wtmp.assign(s.weight_size(), 0.0);
            gw = wtmp.data();
          }
          kernels::conv2d_backward_weight(s, xs.data(), g, gw, gi[2]);
        }
      },
      saved);
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (x.rank() < 1 || x.dim(-1) < 1) {
    throw std::invalid_argument("layer_norm: empty last dimension");
  }
  const int64_t d = x.dim(-1);
  const int64_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= d;
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int64_t i = 0; i < d; ++i) (*xhat)[r * d + i] = (row[i] - mu) * is;
  }
  std::vector<double> y = *xhat;
  return finish(Op::layer_norm, {&x}, x.shape(), std::move(y), x.size() + rows,
                [&] {
                  return [xhat, inv_std, d, rows](const double* g,
                                                  std::span<double* const> gi) {
                    for (int64_t r = 0; r < rows; ++r) {
                      const double* gr = g + r * d;
                      const double* xr = xhat->data() + r * d;
                      double mg = 0.0, mgx = 0.0;
                      for (int64_t i = 0; i < d; ++i) {
                        mg += gr[i];
                        mgx += gr[i] * xr[i];
                      }
                      mg /= d;
                      mgx /= d;
                      const double is = (*inv_std)[r];
                      for (int64_t i = 0; i < d; ++i) {
                        gi[0][r * d + i] += is * (gr[i] - mg - xr[i] * mgx);
                      }
                    }
                  };
                });
}

}  // namespace dva::ad
