#include "cvsa/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cvsa {

OptimizerState OptimizerState::init(const std::vector<ParamRef>& params) {
  OptimizerState st;
  st.momentum.reserve(params.size());
  for (const ParamRef& p : params) st.momentum.emplace_back(p.tensor->shape());
  return st;
}

void sgd_step(const std::vector<ParamRef>& params, const std::vector<const Tensor*>& grads,
              OptimizerState& state, double lr, double momentum, double weight_decay) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
  if (params.size() != grads.size() || params.size() != state.momentum.size()) {
    throw std::invalid_argument("sgd_step: params/grads/state length mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].frozen) continue;
    if (grads[i] == nullptr) continue;
    Tensor& p = *params[i].tensor;
    const Tensor& g = *grads[i];
    Tensor& v = state.momentum[i];
    if (!p.same_shape(g)) {
      throw std::invalid_argument("sgd_step: gradient shape " + shape_str(g.shape()) +
                                  " does not match parameter '" + params[i].name + "' " +
                                  shape_str(p.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + (g[j] + weight_decay * p[j]);
      p[j] -= lr * v[j];
    }
  }
  state.step++;
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) {
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                " exceeds total_steps " + std::to_string(total_steps));
  }
  const double pi = 3.14159265358979323846;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(pi * frac));
}

}  // namespace cvsa
