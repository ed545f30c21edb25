#include "diffcl/adam.hpp"

#include <cmath>

#include <spdlog/fmt/fmt.h>

#include "diffcl/error.hpp"

namespace diffcl {

void adam_step(std::span<const ParamSlot> slots, AdamState& state) {
  const AdamOptions& opt = state.options;
  if (!(opt.learning_rate >= 0.0) || !std::isfinite(opt.learning_rate)) {
    throw ConfigError(fmt::format("adam: learning rate {} must be >= 0", opt.learning_rate));
  }
  if (state.first_moment.empty()) {
    for (const auto& s : slots) {
      state.first_moment.emplace_back(s.value->rows(), s.value->cols());
      state.second_moment.emplace_back(s.value->rows(), s.value->cols());
    }
  }
  if (state.first_moment.size() != slots.size()) {
    throw ShapeError(fmt::format("adam: state tracks {} tensors, got {}",
                                 state.first_moment.size(), slots.size()));
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& s = slots[k];
    if (!s.value->same_shape(*s.grad) || !s.value->same_shape(state.first_moment[k])) {
      throw ShapeError(fmt::format("adam: shape mismatch for tensor '{}'", s.name));
    }
    if (!s.grad->all_finite()) {
      throw DivergenceError(fmt::format("non-finite gradient in tensor '{}'", s.name));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);

  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto value = slots[k].value->values();
    const auto grad = slots[k].grad->values();
    auto m = state.first_moment[k].values();
    auto v = state.second_moment[k].values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
}

}  // namespace diffcl
