#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dva/ad/gradcheck.hpp"
#include "dva/ad/ops.hpp"
#include "dva/ad/tape.hpp"

namespace dva::ad {
namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

TEST(Tape, AddIsComponentwise) {
  const Tensor y = add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}));
  EXPECT_EQ(y.to_vector(), (std::vector<double>{4, 6}));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, TanhDerivativeAtZero) {
  Tape tape;
  const Tensor x = tape.variable({}, {0.0});
  tape.backward(tanh(x));
  EXPECT_EQ(tape.grad(x).item(), 1.0);
}

TEST(Tape, SumGivesOnes) {
  Tape tape;
  const Tensor x = tape.variable({2, 3}, {1, 2, 3, 4, 5, 6});
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(x).to_vector(), std::vector<double>(6, 1.0));
  EXPECT_EQ(tape.grad(x).shape(), (Shape{2, 3}));
}

TEST(Tape, ProductRule) {
  Tape tape;
  const Tensor x = tape.variable({}, {2.0});
  const Tensor y = tape.variable({}, {3.0});
  tape.backward(x * y);
  EXPECT_EQ(tape.grad(x).item(), 3.0);
  EXPECT_EQ(tape.grad(y).item(), 2.0);
}

TEST(Tape, GradientsAccumulateUntilCleared) {
  Tape tape;
  const Tensor x = tape.variable({}, {2.0});
  const Tensor y = square(x);
  tape.backward(y);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x).item(), 8.0);
  tape.zero_grad();
  tape.backward(y);
  EXPECT_EQ(tape.grad(x).item(), 4.0);
}

TEST(Tape, SharedOperandGetsBothContributions) {
  Tape tape;
  const Tensor x = tape.variable({}, {1.5});
  tape.backward(x * x + x);
  EXPECT_EQ(tape.grad(x).item(), 4.0);
}

TEST(Tape, NonScalarRootIsRejected) {
  Tape tape;
  const Tensor x = tape.variable({2}, {1, 2});
  EXPECT_THROW(tape.backward(x * 2.0), std::invalid_argument);
}

TEST(Tape, ShapeMismatchNamesOpAndShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
               std::invalid_argument);
}

TEST(Tape, BroadcastingFollowsNumpyRules) {
  Tape tape;
  const Tensor a = tape.variable({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = tape.variable({3}, {10, 20, 30});
  const Tensor c = tape.variable({2, 1}, {100, 200});
  const Tensor y = a + b + c;
  EXPECT_EQ(y.to_vector(),
            (std::vector<double>{111, 122, 133, 214, 225, 236}));
  tape.backward(sum(y));
  EXPECT_EQ(tape.grad(b).to_vector(), (std::vector<double>{2, 2, 2}));
  EXPECT_EQ(tape.grad(c).to_vector(), (std::vector<double>{3, 3}));
}

TEST(Tape, ResetClearsNodes) {
  Tape tape;
  const Tensor x = tape.variable({}, {1.0});
  (void)exp(x);
  EXPECT_EQ(tape.node_count(), 2u);
  tape.reset();
  EXPECT_EQ(tape.node_count(), 0u);
}

TEST(Tape, ConstantsCreateNoNodes) {
  Tape tape;
  const Tensor x = tape.variable({}, {1.0});
  const Tensor c = exp(Tensor::scalar(2.0)) * 3.0;
  EXPECT_EQ(tape.node_count(), 1u);
  (void)(x * c);
  EXPECT_EQ(tape.node_count(), 2u);
}

TEST(Detach, BlocksGradientAndKeepsValuesBitwise) {
  std::mt19937_64 rng(2);
  Tape tape;
  const Tensor x = tape.variable(random_tensor(rng, {5}));
  auto f = [](const Tensor& v) { return sum(tanh(v) * exp(v)); };
  const Tensor attached = f(x);
  const Tensor d = detach(x);
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.data(), x.data());  // shares storage
  const size_t before = tape.node_count();
  const Tensor detached = f(d);
  EXPECT_EQ(tape.node_count(), before);
  EXPECT_EQ(attached.item(), detached.item());
  // Only the explicit x factor carries gradient: d/dx sum(d*d*x) = d*d.
  tape.backward(sum(d * d * x));
  const Tensor g = tape.grad(x);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g[i], x[i] * x[i]);
}

TEST(Tape, LinearityOfBackward) {
  std::mt19937_64 rng(4);
  const Tensor x0 = random_tensor(rng, {6});
  auto f = [](const Tensor& x) { return sum(sin(x) * x); };
  auto g = [](const Tensor& x) { return mean(exp(tanh(x))); };
  auto grad_of = [&](auto&& fn) {
    Tape tape;
    const Tensor x = tape.variable(x0);
    tape.backward(fn(x));
    return tape.grad(x).to_vector();
  };
  const double a = 1.7, b = -0.3;
  const auto gf = grad_of(f), gg = grad_of(g);
  const auto gc = grad_of([&](const Tensor& x) { return f(x) * a + g(x) * b; });
  for (size_t i = 0; i < gc.size(); ++i) {
    EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
  }
}

TEST(Tape, MatmulBackwardIsTransposeTimesUpstream) {
  std::mt19937_64 rng(8);
  const Tensor A = random_tensor(rng, {4, 3});
  const Tensor up = random_tensor(rng, {4, 1});
  Tape tape;
  const Tensor x = tape.variable(random_tensor(rng, {3, 1}));
  const Tensor y = matmul(A, x);
  tape.backward(y, up.values());
  const Tensor g = tape.grad(x);
  for (int j = 0; j < 3; ++j) {
    double expected = 0;
    for (int i = 0; i < 4; ++i) expected += A[i * 3 + j] * up[i];
    EXPECT_NEAR(g[j], expected, 1e-14);
  }
  const auto report = finite_difference_check(
      [&](Tape&, const Tensor& v) { return sum(matmul(A, v) * up); },
      x.detach(), 1e-5);
  EXPECT_LT(report.max_rel_err, 1e-8);
}

TEST(Tape, ThreeLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Tensor w1 = random_tensor(rng, {5, 8}, 0.5);
  const Tensor w2 = random_tensor(rng, {8, 8}, 0.5);
  const Tensor w3 = random_tensor(rng, {8, 1}, 0.5);
  const Tensor b1 = random_tensor(rng, {8});
  auto mlp = [&](Tape&, const Tensor& x) {
    Tensor h = elu(matmul(x, w1) + b1);
    h = layer_norm(tanh(matmul(h, w2)));
    return sum(matmul(h, w3));
  };
  const auto report =
      finite_difference_check(mlp, random_tensor(rng, {3, 5}), 1e-5);
  EXPECT_LT(report.max_rel_err, 1e-6);
}

TEST(GradCheck, QuadraticNorm) {
  Tape tape;
  const Tensor x = tape.variable({2}, {1, 2});
  tape.backward(sum(square(x)));
  EXPECT_EQ(tape.grad(x).to_vector(), (std::vector<double>{2, 4}));
  const auto report = finite_difference_check(
      [](Tape&, const Tensor& v) { return sum(square(v)); },
      Tensor({2}, {1, 2}), 1e-5);
  EXPECT_LT(report.max_rel_err, 1e-8);
  EXPECT_EQ(report.checked, 2);
}

TEST(GradCheck, NonFiniteValueIsAnError) {
  EXPECT_THROW(finite_difference_check(
                   [](Tape&, const Tensor& v) { return sum(log(v)); },
                   Tensor({2}, {-1.0, 1.0}), 1e-5),
               std::runtime_error);
}

TEST(GradCheck, DetectsInjectedFault) {
  testing::set_backward_fault(Op::tanh, 1.01);
  const auto report = finite_difference_check(
      [](Tape&, const Tensor& v) { return sum(tanh(v)); },
      Tensor({3}, {0.1, 0.2, 0.3}), 1e-5);
  testing::clear_backward_faults();
  EXPECT_GT(report.max_rel_err, 1e-3);
}

TEST(Tape, NodeCountIsDeterministicAndScoped) {
  auto build = [](Tape& tape) {
    const Tensor x = tape.variable({3}, {1, 2, 3});
    Tensor y = exp(x);
    {
      Tape::Scope scope(tape, "inner");
      y = tanh(y) * 2.0;
    }
    return sum(y);
  };
  Tape a, b;
  build(a);
  build(b);
  EXPECT_EQ(a.node_count(), b.node_count());
  EXPECT_EQ(a.node_count("inner"), 2u);
  EXPECT_EQ(a.node_count(Op::tanh), 1u);
  EXPECT_EQ(a.saved_values("inner"), 3);
  EXPECT_EQ(a.node_count("missing"), 0u);
}

}  // namespace
}  // namespace dva::ad
