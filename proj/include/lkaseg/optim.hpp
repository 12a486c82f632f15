#pragma once

#include <cstdint>
#include <vector>

#include "lkaseg/graph.hpp"

namespace lkaseg {

struct OptimState {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Tensor> velocity;  // mirrors ParamStore::params() order

  static OptimState for_params(const ParamStore& params, double momentum, double weight_decay);
};

/// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v.
void sgd_step(ParamStore& params, OptimState& state, double lr);

/// base_lr * (1 - iter / max_iter)^power, with iter clamped to [0, max_iter].
double poly_lr(double base_lr, std::int64_t iter, std::int64_t max_iter, double power);

}  // namespace lkaseg
