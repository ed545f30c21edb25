#include "diffcl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/fmt/fmt.h>

#include "diffcl/rng.hpp"

namespace diffcl {

GradCheckReport grad_check(const std::function<double()>& loss,
                           std::span<const CheckedTensor> tensors,
                           const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-3)) {
    throw std::invalid_argument(
        fmt::format("grad_check: step {} outside [1e-6, 1e-3]", options.step));
  }

  // Flattened coordinate list: (tensor, index).
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    if (!tensors[t].value->same_shape(*tensors[t].analytic_grad)) {
      throw std::invalid_argument(
          fmt::format("grad_check: gradient shape mismatch for '{}'", tensors[t].name));
    }
    for (std::size_t i = 0; i < tensors[t].value->size(); ++i) coords.emplace_back(t, i);
  }
  if (options.probe_count != 0 && options.probe_count < coords.size()) {
    Rng rng = Rng(options.seed).substream("grad_check");
    // Partial Fisher-Yates: the first probe_count entries become the sample.
    for (std::size_t k = 0; k < options.probe_count; ++k) {
      const std::size_t j = k + rng.uniform_index(coords.size() - k);
      std::swap(coords[k], coords[j]);
    }
    coords.resize(options.probe_count);
  }

  GradCheckReport report;
  const double h = options.step;
  for (const auto& [t, i] : coords) {
    auto values = tensors[t].value->values();
    const double original = values[i];
    values[i] = original + h;
    const double plus = loss();
    values[i] = original - h;
    const double minus = loss();
    values[i] = original;

    GradProbe probe;
    probe.tensor = tensors[t].name;
    probe.index = i;
    probe.analytic = tensors[t].analytic_grad->values()[i];
    probe.numeric = (plus - minus) / (2.0 * h);
    const double diff = std::abs(probe.analytic - probe.numeric);
    const double scale = std::max(std::abs(probe.analytic), std::abs(probe.numeric));
    probe.relative_error = diff / std::max(scale, options.absolute_floor);
    probe.passed = std::isfinite(diff) &&
                   (diff <= options.relative_tolerance * scale || diff <= options.absolute_floor);

    report.max_absolute_error = std::max(report.max_absolute_error, diff);
    if (probe.relative_error >= report.max_relative_error || report.probes.empty()) {
      report.max_relative_error = probe.relative_error;
      report.worst = probe;
    }
    report.passed = report.passed && probe.passed;
    report.probes.push_back(std::move(probe));
  }
  return report;
}

}  // namespace diffcl
