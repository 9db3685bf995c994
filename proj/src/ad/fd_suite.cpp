#include "dva/ad/fd_suite.hpp"

#include "dva/ad/ops.hpp"

namespace dva::ad {

namespace {

Tensor uniform(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Values bounded away from zero (for kinks and poles).
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
  Tensor t = uniform(rng, shape, 0.05, 2.0);
  std::bernoulli_distribution flip(0.5);
  std::vector<double> v = t.to_vector();
  for (double& x : v) x = flip(rng) ? -x : x;
  return Tensor(std::move(shape), std::move(v));
}

Shape random_shape(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(1, 4);
  return {d(rng), d(rng)};
}

std::vector<PrimitiveCase> build_cases() {
  auto any = [](std::mt19937_64& r) {
    return uniform(r, random_shape(r), -2.0, 2.0);
  };
  auto nonzero = [](std::mt19937_64& r) {
    return away_from_zero(r, random_shape(r));
  };
  auto positive = [](std::mt19937_64& r) {
    return uniform(r, random_shape(r), 0.1, 3.0);
  };
  // A fixed partner operand with the same shape, or a broadcastable one.
  auto partner = [](const Tensor& x, std::mt19937_64& r, bool broadcast) {
    Shape s = x.shape();
    if (broadcast) s = {s[1]};
    return away_from_zero(r, s);
  };
  std::vector<PrimitiveCase> out;
  for (bool bc : {false, true}) {
    const std::string sfx = bc ? "_broadcast" : "";
    out.push_back({"add_lhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return add(x, partner(x, r, bc));
                   }});
    out.push_back({"add_rhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return add(partner(x, r, bc), x);
                   }});
    out.push_back({"sub_lhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return sub(x, partner(x, r, bc));
                   }});
    out.push_back({"sub_rhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return sub(partner(x, r, bc), x);
                   }});
    out.push_back({"mul_lhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return mul(x, partner(x, r, bc));
                   }});
    out.push_back({"mul_rhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return mul(partner(x, r, bc), x);
                   }});
    out.push_back({"div_lhs" + sfx, any, [=](const Tensor& x, auto& r) {
                     return div(x, partner(x, r, bc));
                   }});
    out.push_back({"max_lhs" + sfx, nonzero, [=](const Tensor& x, auto& r) {
                     // Offset keeps the operands apart so no tie is probed.
                     return maximum(x, partner(x, r, bc) * 0.0 + 0.01);
                   }});
  }
  out.push_back({"div_rhs", nonzero, [](const Tensor& x, auto& r) {
                   return div(uniform(r, x.shape(), -2, 2), x);
                 }});
  out.push_back({"max_rhs", nonzero, [](const Tensor& x, auto& r) {
                   return maximum(Tensor::full(x.shape(), 0.01), x);
                 }});
  out.push_back({"neg", any, [](const Tensor& x, auto&) { return neg(x); }});
  out.push_back(
      {"scale", any, [](const Tensor& x, auto&) { return scale(x, -2.5); }});
  out.push_back({"add_scalar", any,
                 [](const Tensor& x, auto&) { return add_scalar(x, 0.7); }});
  out.push_back({"exp", any, [](const Tensor& x, auto&) { return exp(x); }});
  out.push_back(
      {"log", positive, [](const Tensor& x, auto&) { return log(x); }});
  out.push_back({"tanh", any, [](const Tensor& x, auto&) { return tanh(x); }});
  out.push_back({"sin", any, [](const Tensor& x, auto&) { return sin(x); }});
  out.push_back({"cos", any, [](const Tensor& x, auto&) { return cos(x); }});
  out.push_back(
      {"elu", nonzero, [](const Tensor& x, auto&) { return elu(x); }});
  out.push_back(
      {"relu", nonzero, [](const Tensor& x, auto&) { return relu(x); }});
  out.push_back(
      {"square", any, [](const Tensor& x, auto&) { return square(x); }});
  out.push_back({"smooth_clamp", any, [](const Tensor& x, auto&) {
                   return smooth_clamp(x * 3.0, -5.0, 2.0);
                 }});
  out.push_back({"matmul_lhs", any, [](const Tensor& x, auto& r) {
                   return matmul(x, uniform(r, {x.dim(1), 3}, -1, 1));
                 }});
  out.push_back({"matmul_rhs", any, [](const Tensor& x, auto& r) {
                   return matmul(uniform(r, {2, x.dim(0)}, -1, 1), x);
                 }});
  out.push_back({"sum", any, [](const Tensor& x, auto&) {
                   return reshape(sum(x), {1});
                 }});
  out.push_back({"mean", any, [](const Tensor& x, auto&) {
                   return reshape(mean(x), {1});
                 }});
  out.push_back(
      {"sum_axis0", any, [](const Tensor& x, auto&) { return sum_axis(x, 0); }});
  out.push_back(
      {"sum_axis1", any, [](const Tensor& x, auto&) { return sum_axis(x, -1); }});
  out.push_back({"broadcast", any, [](const Tensor& x, auto&) {
                   return broadcast_to(reshape(x, {x.dim(0), 1, x.dim(1)}),
                                       {3, x.dim(0), 2, x.dim(1)});
                 }});
  out.push_back({"reshape", any, [](const Tensor& x, auto&) {
                   return reshape(x, {x.size()});
                 }});
  out.push_back({"concat", any, [](const Tensor& x, auto& r) {
                   return concat({uniform(r, {x.dim(0), 2}, -1, 1), x, x * 2.0},
                                 1);
                 }});
  out.push_back({"slice", any, [](const Tensor& x, auto&) {
                   return slice(x, 1, x.dim(1) / 2, x.dim(1) - x.dim(1) / 2);
                 }});
  out.push_back({"layer_norm", any, [](const Tensor& x, auto&) {
                   return layer_norm(concat({x, x * x}, 1));
                 }});
  auto image = [](std::mt19937_64& r) {
    std::uniform_int_distribution<int> d(5, 8);
    return uniform(r, {2, 2, d(r), d(r)}, -1, 1);
  };
  out.push_back({"conv2d_input", image, [](const Tensor& x, auto& r) {
                   return conv2d(x, uniform(r, {3, 2, 3, 3}, -1, 1),
                                 uniform(r, {3}, -1, 1), 2);
                 }});
  out.push_back({"conv2d_weight",
                 [](std::mt19937_64& r) { return uniform(r, {3, 2, 3, 3}, -1, 1); },
                 [](const Tensor& w, auto& r) {
                   return conv2d(uniform(r, {2, 2, 7, 6}, -1, 1), w, Tensor(), 1);
                 }});
  out.push_back({"conv2d_bias",
                 [](std::mt19937_64& r) { return uniform(r, {3}, -1, 1); },
                 [](const Tensor& b, auto& r) {
                   return conv2d(uniform(r, {2, 2, 7, 6}, -1, 1),
                                 uniform(r, {3, 2, 3, 3}, -1, 1), b, 1);
                 }});
  return out;
}

}  // namespace

const std::vector<PrimitiveCase>& primitive_cases() {
  static const std::vector<PrimitiveCase> cases = build_cases();
  return cases;
}

PrimitiveFdResult check_primitive(const PrimitiveCase& c, int trials,
                                  double step, uint64_t seed) {
  std::mt19937_64 rng(seed);
  PrimitiveFdResult out;
  out.name = c.name;
  for (int trial = 0; trial < trials; ++trial) {
    const Tensor x = c.input(rng);
    const uint64_t op_seed = rng();
    // Weights are drawn once per trial and shared by every evaluation.
    std::mt19937_64 wrng(op_seed);
    const Tensor probe = c.apply(x, wrng);
    const Tensor weights = uniform(wrng, probe.shape(), -1.0, 1.0);
    auto f = [&](Tape&, const Tensor& v) {
      std::mt19937_64 r(op_seed);
      return sum(c.apply(v, r) * weights);
    };
    const FdReport report = finite_difference_check(f, x, step);
    if (out.worst_trial < 0 || report.max_rel_err > out.worst) {
      out.worst = report.max_rel_err;
      out.worst_trial = trial;
      out.at_worst = report;
    }
  }
  return out;
}

}  // namespace dva::ad
