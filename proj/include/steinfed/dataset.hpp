#pragma once

#include <vector>

#include "steinfed/particles.hpp"

namespace steinfed {

/// Labelled examples, one row of `inputs` per example.
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

}  // namespace steinfed
