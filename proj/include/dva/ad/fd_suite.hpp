#pragma once

// Central-difference checks of every tape primitive on random inputs.
// Vector outputs are reduced with random weights so the whole Jacobian is
// exercised.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dva/ad/gradcheck.hpp"

namespace dva::ad {

struct PrimitiveCase {
  std::string name;
  // Builds the input for one trial.
  std::function<Tensor(std::mt19937_64&)> input;
  // Op under test applied to the leaf; may draw fixed constants from rng.
  std::function<Tensor(const Tensor&, std::mt19937_64&)> apply;
};

const std::vector<PrimitiveCase>& primitive_cases();

struct PrimitiveFdResult {
  std::string name;
  double worst = 0.0;  // mixed error measure, max over trials
  int worst_trial = -1;
  FdReport at_worst;
};

PrimitiveFdResult check_primitive(const PrimitiveCase& c, int trials,
                                  double step = 1e-5, uint64_t seed = 1234);

}  // namespace dva::ad
