#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dva/ad/tape.hpp"
#include "dva/ad/tensor.hpp"

namespace dva::agent {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

// Named parameter tensors in a fixed order. The flat vector is the
// concatenation of all tensors in insertion order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);

  size_t tensors() const { return values_.size(); }
  int64_t size() const;
  const std::string& name(size_t i) const { return names_[i]; }
  const Tensor& value(size_t i) const { return values_[i]; }
  // Index of a named tensor; throws if absent.
  size_t index(const std::string& name) const;
  void set(size_t i, Tensor value);

  std::vector<double> flatten() const;
  // Throws std::invalid_argument on length mismatch.
  void unflatten(std::span<const double> flat);

  // The parameters as constants (no gradient).
  std::vector<Tensor> constants() const { return values_; }
  // Fresh leaves on `tape`, one per tensor.
  std::vector<Tensor> bind(Tape& tape) const;
  // Flattened gradient of the leaves returned by bind().
  static std::vector<double> gradient(const Tape& tape,
                                      std::span<const Tensor> bound);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// 64-bit FNV-1a, used for architecture fingerprints.
uint64_t fnv1a(const std::string& text);

}  // namespace dva::agent
