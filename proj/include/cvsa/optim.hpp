#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvsa/tensor.hpp"

namespace cvsa {

// Named handle to a parameter tensor living inside a model struct, with its
// freeze flag. Collected in a stable order for the optimizer, checkpoints and
// gradient checks.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  bool frozen = false;
};

struct OptimizerState {
  std::vector<Tensor> momentum;  // one buffer per parameter, same shapes
  std::uint64_t step = 0;

  static OptimizerState init(const std::vector<ParamRef>& params);
};

// SGD with momentum and (coupled) weight decay:
//   v <- momentum*v + (g + wd*p);  p <- p - lr*v
// Frozen parameters are left untouched, momentum buffers included. A null
// grads entry means the parameter was unreachable this step and is skipped.
void sgd_step(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& grads,
              OptimizerState& state, double lr, double momentum = 0.9,
              double weight_decay = 0.0);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)); step must not exceed
// total_steps.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr);

}  // namespace cvsa
