#include "pmlm/core/optimizer.h"

#include <cmath>

namespace pmlm {

void Adam::step(ParameterMap& params) {
  for (const auto& [name, tensor] : params) {
    if (!tensor.has_grad()) continue;
    for (double g : tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient(name);
    }
  }

  state_.step += 1;
  const double t = static_cast<double>(state_.step);
  const double correction1 = 1.0 - std::pow(options_.beta1, t);
  const double correction2 = 1.0 - std::pow(options_.beta2, t);

  for (auto& [name, tensor] : params) {
    auto& m = state_.first_moment[name];
    auto& v = state_.second_moment[name];
    if (m.size() != tensor.numel()) {
      m.assign(tensor.numel(), 0.0);
      v.assign(tensor.numel(), 0.0);
    }
    auto values = tensor.data();
    const bool has_grad = tensor.has_grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? tensor.grad()[i] : 0.0;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      if (options_.weight_decay != 0.0) {
        values[i] -= options_.learning_rate * options_.weight_decay * values[i];
      }
    }
  }
}

void Adam::zero_grad(ParameterMap& params) {
  for (auto& [name, tensor] : params) tensor.zero_grad();
}

}  // namespace pmlm
