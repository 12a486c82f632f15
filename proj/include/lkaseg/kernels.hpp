#pragma once

// Tensor-level forward and backward kernels. Every forward kernel reports its
// FLOPs to the instrument counter; backward kernels accumulate into the
// gradient buffers they are handed.

#include <optional>
#include <vector>

#include "lkaseg/tensor.hpp"

namespace lkaseg {

struct Hw {
  int h = 1;
  int w = 1;
  friend bool operator==(const Hw&, const Hw&) = default;
};

struct ConvSpec {
  Hw kernel{1, 1};
  Hw stride{1, 1};
  Hw dilation{1, 1};
  Hw padding{0, 0};
  int groups = 1;

  /// Square kernel with "same" style arguments.
  static ConvSpec square(int k, int stride = 1, int padding = 0, int dilation = 1, int groups = 1);

  int extent_h() const { return (kernel.h - 1) * dilation.h + 1; }
  int extent_w() const { return (kernel.w - 1) * dilation.w + 1; }
  /// Output extents for `in`; throws ShapeError when an axis would be empty.
  Shape output_shape(Shape in, int c_out) const;
  void validate() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct PoolSpec {
  Hw kernel{1, 1};
  Hw stride{1, 1};
  Hw padding{0, 0};

  Shape output_shape(Shape in) const;
};

enum class NormMode { kTrain, kEval };

// Convolution (cross-correlation, zero padding).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);
/// conv2d with groups == channels; rejects any other group count.
Tensor depthwise(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

// Average pooling; the divisor counts only cells inside the unpadded input.
Tensor avg_pool(const Tensor& x, const PoolSpec& spec);
void avg_pool_backward(const PoolSpec& spec, const Tensor& grad_out, Tensor& grad_x);
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const Tensor& grad_out, Tensor& grad_x);

struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  NormMode mode = NormMode::kEval;
};

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, NormMode mode, double momentum, double eps,
                  BatchNormCache* cache = nullptr);
void batch_norm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                         const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma,
                         Tensor* grad_beta);

// Elementwise activations.
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
double gelu_scalar(double x);
double gelu_derivative(double x);
double sigmoid_scalar(double x);

/// Numerically stabilised softmax along `axis` (0..3).
Tensor softmax(const Tensor& x, int axis);
void softmax_backward(const Tensor& y, int axis, const Tensor& grad_out, Tensor& grad_x);

/// Bilinear resampling with half-pixel centres. align_corners=true is not supported.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners = false);
void bilinear_resize_backward(const Tensor& grad_out, Tensor& grad_x);

/// (n, c, h, w) -> (n, 1, h, w) reductions across channels.
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x, std::vector<int>* argmax = nullptr);

enum class BinaryOp { kAdd, kSub, kMul };
/// Broadcasting over axes where one operand has extent 1.
Shape broadcast_shape(Shape a, Shape b);
Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b);
/// Sums `grad` down to `target` extents (inverse of broadcasting).
Tensor reduce_to(const Tensor& grad, Shape target);

Tensor concat_channels(const std::vector<const Tensor*>& parts);
Tensor slice_channels(const Tensor& x, int begin, int count);

}  // namespace lkaseg
