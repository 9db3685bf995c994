// Every primitive against central finite differences (step 1e-5) on 100
// random inputs each.

#include <gtest/gtest.h>

#include "dva/ad/fd_suite.hpp"

namespace dva::ad {
namespace {

class OpFd : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(OpFd, MatchesCentralDifferences) {
  const auto r = check_primitive(GetParam(), 100);
  EXPECT_LT(r.worst, 1e-6) << r.name << " trial " << r.worst_trial << " index "
                           << r.at_worst.worst_index << " analytic "
                           << r.at_worst.analytic_at_worst << " numeric "
                           << r.at_worst.numeric_at_worst;
  RecordProperty("worst_rel_err", std::to_string(r.worst));
}

INSTANTIATE_TEST_SUITE_P(Primitives, OpFd,
                         ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
}  // namespace dva::ad
