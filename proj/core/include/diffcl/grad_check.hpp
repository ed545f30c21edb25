#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffcl/matrix.hpp"

namespace diffcl {

struct GradCheckOptions {
  // 0 probes every coordinate.
  std::size_t probe_count = 0;
  double step = 1e-5;
  double relative_tolerance = 1e-4;
  // Absolute floor for gradients that are numerically zero.
  double absolute_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradProbe {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradProbe> probes;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  bool passed = true;
  // The probe with the largest relative error.
  GradProbe worst;
};

struct CheckedTensor {
  std::string name;
  DenseMatrix* value;
  const DenseMatrix* analytic_grad;
};

/// Compares analytic gradients against central differences
/// (f(x+h) - f(x-h)) / 2h, perturbing each probed coordinate in place and
/// restoring it afterwards. A probe passes when
///   |a - n| <= tol * max(|a|, |n|)   or   |a - n| <= absolute_floor.
/// The reported relative error is |a - n| / max(|a|, |n|, absolute_floor).
/// `loss` must be deterministic; `step` must lie in [1e-6, 1e-3].
GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<const CheckedTensor> tensors,
                           const GradCheckOptions& options = {});

}  // namespace diffcl
