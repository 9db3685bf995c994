#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dva/ad/tensor.hpp"

namespace dva::ad {

enum class Op : uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  scale,
  add_scalar,
  exp,
  log,
  tanh,
  sin,
  cos,
  elu,
  relu,
  smooth_clamp,
  square,
  maximum,
  matmul,
  sum,
  sum_axis,
  mean,
  broadcast,
  reshape,
  concat,
  slice,
  conv2d,
  layer_norm,
  custom,
};

const char* op_name(Op op);

// Backward rule of one node: `grad_out` is the adjoint of the node's value,
// `grad_in[i]` the adjoint buffer of input i (nullptr for constant inputs).
// Rules accumulate into grad_in.
using BackwardFn =
    std::function<void(const double* grad_out, std::span<double* const> grad_in)>;

// Reverse-mode record. Nodes are appended in execution order, so every
// parent index precedes its child. Gradients of leaves accumulate across
// backward calls until zero_grad().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // New leaf that receives gradients.
  Tensor variable(Shape shape, std::vector<double> values);
  Tensor variable(const Tensor& value) {
    return variable(value.shape(), value.to_vector());
  }

  // Appends a node whose value is `values`. `inputs` are all operands of
  // the operation; constants among them get a nullptr adjoint. Returns a
  // constant when no input is on this tape.
  Tensor record(Op op, std::span<const Tensor* const> inputs, Shape shape,
                std::vector<double> values, BackwardFn backward,
                int64_t saved_values, const char* label = nullptr);

  // root must be a one-element tensor on this tape.
  void backward(const Tensor& root);
  // Vector-Jacobian product: seeds `output` with `seed` instead of 1.
  void backward(const Tensor& output, std::span<const double> seed);

  // Accumulated gradient of a leaf (zeros if nothing reached it).
  Tensor grad(const Tensor& leaf) const;
  void zero_grad();
  void reset();

  size_t node_count() const { return nodes_.size(); }
  size_t node_count(Op op) const;
  // Nodes created while `tag` was the innermost active tag.
  size_t node_count(const std::string& tag) const;
  int64_t saved_values() const;
  int64_t saved_values(const std::string& tag) const;

  // RAII tag marker; nested scopes form a stack and the innermost wins.
  class Scope {
   public:
    Scope(Tape& tape, std::string tag);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
  };

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<int> parents;  // -1 for constant operands
    int64_t size = 0;
    BackwardFn backward;
    int64_t saved = 0;
    int tag = -1;
    const char* label = nullptr;
  };

  int tag_id(const std::string& tag) const;
  void run_backward(int root, std::vector<double> seed);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> leaf_grads_;
  std::vector<std::string> tags_;
  std::vector<int> tag_stack_;
};

namespace testing {
// Multiplies every adjoint passed into backward rules of `op` by `factor`.
// Used to check that the gradient verification catches a broken rule.
void set_backward_fault(Op op, double factor);
void clear_backward_faults();
}  // namespace testing

}  // namespace dva::ad
