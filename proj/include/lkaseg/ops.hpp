#pragma once

// Differentiable ops on graph variables. Each op evaluates the matching
// tensor kernel and records how to route gradients back to its inputs.

#include <optional>
#include <vector>

#include "lkaseg/graph.hpp"
#include "lkaseg/kernels.hpp"

namespace lkaseg {

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);
Var depthwise(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec);
Var avg_pool(Var x, const PoolSpec& spec);
Var global_avg_pool(Var x);
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               double momentum, double eps);

Var relu(Var x);
Var gelu(Var x);
Var sigmoid(Var x);
Var softmax(Var x, int axis);
Var bilinear_resize(Var x, int out_h, int out_w);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// scale * x + shift, elementwise.
Var affine(Var x, double scale, double shift);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(Var x, int begin, int count);
Var reshape(Var x, Shape shape);
Var channel_mean(Var x);
Var channel_max(Var x);

/// Sum of all elements as a (1,1,1,1) scalar.
Var sum(Var x);
Var mean(Var x);

}  // namespace lkaseg
