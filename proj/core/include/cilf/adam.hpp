#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cilf/tensor.hpp"

namespace cilf {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers for a fixed, ordered list of parameters.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;

  AdamState() = default;
  AdamState(std::span<Tensor* const> params, AdamOptions opts);
};

/// One bias-corrected Adam update using each parameter's accumulated grad().
/// Parameter order and shapes must match the ones the state was built for.
void adam_step(std::span<Tensor* const> params, AdamState& state);

}  // namespace cilf
