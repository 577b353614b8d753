#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmlm/core/tensor.h"

namespace pmlm {

using ParameterMap = std::map<std::string, Tensor>;

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied as p -= lr * wd * p
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient in parameter '" + parameter + "'"),
        parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

struct OptimizerState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// Adam with bias correction. Parameters without a gradient are treated as
// having a zero gradient.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Rejects the whole update (no parameter touched) if any gradient is
  // non-finite.
  void step(ParameterMap& params);

  static void zero_grad(ParameterMap& params);

  const AdamOptions& options() const { return options_; }
  AdamOptions& options() { return options_; }
  const OptimizerState& state() const { return state_; }

 private:
  AdamOptions options_;
  OptimizerState state_;
};

}  // namespace pmlm
