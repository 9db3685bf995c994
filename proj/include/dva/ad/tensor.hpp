#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dva::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

// Immutable n-dimensional array of doubles. A tensor either lives on a Tape
// (it has a node and gradients flow into it) or is a constant.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const;
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  const double* data() const { return data_->data(); }
  double operator[](int64_t i) const { return (*data_)[i]; }
  // Value of a one-element tensor.
  double item() const;
  std::vector<double> to_vector() const { return *data_; }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Same storage, no tape node: gradients never flow through the result.
  Tensor detach() const;

 private:
  friend class Tape;
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
         Tape* tape, int node)
      : shape_(std::move(shape)), data_(std::move(data)), tape_(tape),
        node_(node) {}

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

inline Tensor detach(const Tensor& t) { return t.detach(); }

}  // namespace dva::ad
