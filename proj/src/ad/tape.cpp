#include "dva/ad/tape.hpp"

#include <array>
#include <stdexcept>

namespace dva::ad {

namespace {

constexpr size_t kOpCount = static_cast<size_t>(Op::custom) + 1;

std::array<double, kOpCount>& fault_table() {
  static std::array<double, kOpCount> table = [] {
    std::array<double, kOpCount> t;
    t.fill(1.0);
    return t;
  }();
  return table;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::elu: return "elu";
    case Op::relu: return "relu";
    case Op::smooth_clamp: return "smooth_clamp";
    case Op::square: return "square";
    case Op::maximum: return "maximum";
    case Op::matmul: return "matmul";
    case Op::sum: return "sum";
    case Op::sum_axis: return "sum_axis";
    case Op::mean: return "mean";
    case Op::broadcast: return "broadcast";
    case Op::reshape: return "reshape";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::conv2d: return "conv2d";
    case Op::layer_norm: return "layer_norm";
    case Op::custom: return "custom";
  }
  return "?";
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor constant(std::move(shape), std::move(values));
  Node node;
  node.op = Op::leaf;
  node.size = constant.size();
  node.tag = tag_stack_.empty() ? -1 : tag_stack_.back();
  nodes_.push_back(std::move(node));
  leaf_grads_.emplace_back();
  return Tensor(constant.shape_, constant.data_, this,
                static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(Op op, std::span<const Tensor* const> inputs, Shape shape,
                    std::vector<double> values, BackwardFn backward,
                    int64_t saved_values, const char* label) {
  bool any = false;
  for (const Tensor* in : inputs) {
    if (in->tape() == nullptr) continue;
    if (in->tape() != this) {
      throw std::logic_error(std::string(op_name(op)) +
                             ": operands live on different tapes");
    }
    any = true;
  }
  Tensor value(std::move(shape), std::move(values));
  if (!any) return value;

  Node node;
  node.op = op;
  node.parents.reserve(inputs.size());
  for (const Tensor* in : inputs) node.parents.push_back(in->node());
  node.size = value.size();
  node.backward = std::move(backward);
  node.saved = saved_values;
  node.tag = tag_stack_.empty() ? -1 : tag_stack_.back();
  node.label = label;
  nodes_.push_back(std::move(node));
  leaf_grads_.emplace_back();
  return Tensor(value.shape_, value.data_, this,
                static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Tensor& root) {
  if (root.tape() != this) {
    throw std::invalid_argument("backward: root is not on this tape");
  }
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_string(root.shape()));
  }
  run_backward(root.node(), {1.0});
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
  if (output.tape() != this) {
    throw std::invalid_argument("backward: output is not on this tape");
  }
  if (static_cast<int64_t>(seed.size()) != output.size()) {
    throw std::invalid_argument("backward: seed size mismatch");
  }
  run_backward(output.node(), {seed.begin(), seed.end()});
}

void Tape::run_backward(int root, std::vector<double> seed) {
  std::vector<std::vector<double>> adj(root + 1);
  adj[root] = std::move(seed);
  const auto& faults = fault_table();
  std::vector<double*> grad_in;
  for (int i = root; i >= 0; --i) {
    if (adj[i].empty()) continue;
    Node& node = nodes_[i];
    if (node.op == Op::leaf) {
      auto& g = leaf_grads_[i];
      if (g.empty()) g.assign(node.size, 0.0);
      for (int64_t k = 0; k < node.size; ++k) g[k] += adj[i][k];
      adj[i] = {};
      continue;
    }
    grad_in.assign(node.parents.size(), nullptr);
    for (size_t p = 0; p < node.parents.size(); ++p) {
      const int parent = node.parents[p];
      if (parent < 0) continue;
      if (adj[parent].empty()) adj[parent].assign(nodes_[parent].size, 0.0);
      grad_in[p] = adj[parent].data();
    }
    const double fault = faults[static_cast<size_t>(node.op)];
    if (fault != 1.0) {
      for (double& v : adj[i]) v *= fault;
    }
    node.backward(adj[i].data(), grad_in);
    adj[i] = {};
  }
}

Tensor Tape::grad(const Tensor& leaf) const {
  if (leaf.tape() != this) {
    throw std::invalid_argument("grad: tensor is not on this tape");
  }
  const auto& g = leaf_grads_[leaf.node()];
  if (g.empty()) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), g);
}

void Tape::zero_grad() {
  for (auto& g : leaf_grads_) g.clear();
}

void Tape::reset() {
  nodes_.clear();
  leaf_grads_.clear();
  tag_stack_.clear();
}

size_t Tape::node_count(Op op) const {
  size_t n = 0;
  for (const Node& node : nodes_) n += node.op == op;
  return n;
}

int Tape::tag_id(const std::string& tag) const {
  for (size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == tag) return static_cast<int>(i);
  }
  return -2;
}

size_t Tape::node_count(const std::string& tag) const {
  const int id = tag_id(tag);
  size_t n = 0;
  for (const Node& node : nodes_) n += node.tag == id;
  return n;
}

int64_t Tape::saved_values() const {
  int64_t n = 0;
  for (const Node& node : nodes_) n += node.saved;
  return n;
}

int64_t Tape::saved_values(const std::string& tag) const {
  const int id = tag_id(tag);
  int64_t n = 0;
  for (const Node& node : nodes_) {
    if (node.tag == id) n += node.saved;
  }
  return n;
}

Tape::Scope::Scope(Tape& tape, std::string tag) : tape_(tape) {
  int id = tape_.tag_id(tag);
  if (id < 0) {
    tape_.tags_.push_back(std::move(tag));
    id = static_cast<int>(tape_.tags_.size()) - 1;
  }
  tape_.tag_stack_.push_back(id);
}

Tape::Scope::~Scope() {
  if (!tape_.tag_stack_.empty()) tape_.tag_stack_.pop_back();
}

namespace testing {

void set_backward_fault(Op op, double factor) {
  fault_table()[static_cast<size_t>(op)] = factor;
}

void clear_backward_faults() { fault_table().fill(1.0); }

}  // namespace testing

}  // namespace dva::ad
