#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffcl/matrix.hpp"

namespace diffcl {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<DenseMatrix> first_moment;
  std::vector<DenseMatrix> second_moment;
};

/// One trainable tensor together with its gradient for the current step.
struct ParamSlot {
  std::string name;
  DenseMatrix* value;
  const DenseMatrix* grad;
};

/// Bias-corrected Adam update over all slots, in order. Moments are created
/// lazily on the first step. All gradients are checked before any parameter
/// moves: a non-finite entry raises DivergenceError naming the tensor and
/// leaves params and state untouched.
void adam_step(std::span<const ParamSlot> slots, AdamState& state);

}  // namespace diffcl
