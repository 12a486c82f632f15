#include "lkaseg/optim.hpp"

#include <algorithm>
#include <cmath>

#include "lkaseg/errors.hpp"

namespace lkaseg {

OptimState OptimState::for_params(const ParamStore& params, double momentum,
                                  double weight_decay) {
  OptimState s;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (const auto& p : params.params()) s.velocity.emplace_back(p->value.shape());
  return s;
}

void sgd_step(ParamStore& params, OptimState& state, double lr) {
  const auto& ps = params.params();
  if (ps.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: optimiser state tracks " + std::to_string(state.velocity.size()) +
                     " tensors, store has " + std::to_string(ps.size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = *ps[i];
    Tensor& v = state.velocity[i];
    if (v.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError("sgd_step: shape mismatch for " + p.name);
    }
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = state.momentum * v[k] + p.grad[k] + state.weight_decay * p.value[k];
      p.value[k] -= lr * v[k];
    }
  }
}

double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iter, double power) {
  if (max_iter <= 0) return base_lr;
  const auto it = std::clamp<std::int64_t>(iter, 0, max_iter);
  return base_lr * std::pow(1.0 - static_cast<double>(it) / static_cast<double>(max_iter), power);
}

}  // namespace lkaseg
