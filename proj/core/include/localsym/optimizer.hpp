#pragma once

#include <map>
#include <string>

#include "localsym/tensor.hpp"

namespace localsym {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter Adam state: first/second moments plus the shared step count.
struct OptimizerState {
  AdamConfig config;
  std::map<std::string, Tensor> moment1;
  std::map<std::string, Tensor> moment2;
  long step = 0;
};

/// One bias-corrected Adam update applied in place to `params`.
/// Parameters without a gradient entry are left untouched.
void adam_step(OptimizerState& state, std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads);

}  // namespace localsym
