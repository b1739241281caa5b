// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

namespace fedboost {

struct Sample {
  std::array<double, 2> x{};
  int label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using LabeledSet = std::vector<Sample>;

}  // namespace fedboost
