#include "dva/agent/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace dva::agent {

void ParameterSet::add(std::string name, Tensor value) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw std::invalid_argument("duplicate parameter " + name);
  }
  names_.push_back(std::move(name));
  values_.push_back(value.detach());
}

int64_t ParameterSet::size() const {
  int64_t n = 0;
  for (const Tensor& v : values_) n += v.size();
  return n;
}

size_t ParameterSet::index(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw std::out_of_range("no parameter " + name);
  return static_cast<size_t>(it - names_.begin());
}

void ParameterSet::set(size_t i, Tensor value) {
  if (value.shape() != values_.at(i).shape()) {
    throw std::invalid_argument("parameter " + names_[i] + ": shape " +
                                ad::shape_string(value.shape()) + " != " +
                                ad::shape_string(values_[i].shape()));
  }
  values_[i] = value.detach();
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const Tensor& v : values_) {
    flat.insert(flat.end(), v.values().begin(), v.values().end());
  }
  return flat;
}

void ParameterSet::unflatten(std::span<const double> flat) {
  if (static_cast<int64_t>(flat.size()) != size()) {
    throw std::invalid_argument("unflatten: got " + std::to_string(flat.size()) +
                                " values, expected " + std::to_string(size()));
  }
  size_t offset = 0;
  for (Tensor& v : values_) {
    const auto n = static_cast<size_t>(v.size());
    v = Tensor(v.shape(), {flat.begin() + offset, flat.begin() + offset + n});
    offset += n;
  }
}

std::vector<Tensor> ParameterSet::bind(Tape& tape) const {
  std::vector<Tensor> leaves;
  leaves.reserve(values_.size());
  for (const Tensor& v : values_) leaves.push_back(tape.variable(v));
  return leaves;
}

std::vector<double> ParameterSet::gradient(const Tape& tape,
                                           std::span<const Tensor> bound) {
  std::vector<double> flat;
  for (const Tensor& leaf : bound) {
    const Tensor g = tape.grad(leaf);
    flat.insert(flat.end(), g.values().begin(), g.values().end());
  }
  return flat;
}

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dva::agent
