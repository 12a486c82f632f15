#include "lkaseg/ops.hpp"

#include <memory>

#include "lkaseg/errors.hpp"
#include "lkaseg/instrument.hpp"

namespace lkaseg {
namespace {

Graph& graph_of(Var v) {
  if (v.graph == nullptr) throw std::logic_error("op on an unbound variable");
  return *v.graph;
}

Tensor* grad_if(Graph& g, Var v) { return g.requires_grad(v.id) ? &g.grad(v.id) : nullptr; }

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
  Graph& g = graph_of(x);
  const Tensor* b = bias ? &bias->value() : nullptr;
  Tensor y = lkaseg::conv2d(x.value(), weight.value(), b, spec);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return g.record("conv2d", std::move(y), inputs,
                  [x, weight, bias, spec](Graph& gr, const Tensor& gy) {
                    conv2d_backward(gr.value(x.id), gr.value(weight.id), spec, gy, grad_if(gr, x),
                                    grad_if(gr, weight), bias ? grad_if(gr, *bias) : nullptr);
                  });
}

Var depthwise(Var x, Var weight, std::optional<Var> bias, const ConvSpec& spec) {
  if (spec.groups != x.shape().c) {
    throw ShapeError("depthwise: groups (" + std::to_string(spec.groups) +
                     ") must equal the channel axis (" + std::to_string(x.shape().c) + ")");
  }
  return conv2d(x, weight, bias, spec);
}

Var avg_pool(Var x, const PoolSpec& spec) {
  Graph& g = graph_of(x);
  return g.record("avg_pool", lkaseg::avg_pool(x.value(), spec), {x},
                  [x, spec](Graph& gr, const Tensor& gy) {
                    avg_pool_backward(spec, gy, gr.grad(x.id));
                  });
}

Var global_avg_pool(Var x) {
  Graph& g = graph_of(x);
  return g.record("global_avg_pool", lkaseg::global_avg_pool(x.value()), {x},
                  [x](Graph& gr, const Tensor& gy) { global_avg_pool_backward(gy, gr.grad(x.id)); });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               double momentum, double eps) {
  Graph& g = graph_of(x);
  auto cache = std::make_shared<BatchNormCache>();
  Tensor y = lkaseg::batch_norm(x.value(), gamma.value(), beta.value(), running_mean, running_var,
                                g.mode(), momentum, eps, cache.get());
  return g.record("batch_norm", std::move(y), {x, gamma, beta},
                  [x, gamma, beta, cache](Graph& gr, const Tensor& gy) {
                    batch_norm_backward(gr.value(x.id), gr.value(gamma.id), *cache, gy,
                                        grad_if(gr, x), grad_if(gr, gamma), grad_if(gr, beta));
                  });
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  return g.record("relu", lkaseg::relu(x.value()), {x}, [x](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(x.id);
    Tensor& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Var gelu(Var x) {
  Graph& g = graph_of(x);
  return g.record("gelu", lkaseg::gelu(x.value()), {x}, [x](Graph& gr, const Tensor& gy) {
    const Tensor& xv = gr.value(x.id);
    Tensor& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * gelu_derivative(xv[i]);
  });
}

Var sigmoid(Var x) {
  Graph& g = graph_of(x);
  const int self = static_cast<int>(g.size());
  return g.record("sigmoid", lkaseg::sigmoid(x.value()), {x}, [x, self](Graph& gr, const Tensor& gy) {
    const Tensor& yv = gr.value(self);
    Tensor& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  });
}

Var softmax(Var x, int axis) {
  Graph& g = graph_of(x);
  const int self = static_cast<int>(g.size());
  return g.record("softmax", lkaseg::softmax(x.value(), axis), {x},
                  [x, self, axis](Graph& gr, const Tensor& gy) {
                    softmax_backward(gr.value(self), axis, gy, gr.grad(x.id));
                  });
}

Var bilinear_resize(Var x, int out_h, int out_w) {
  Graph& g = graph_of(x);
  return g.record("bilinear_resize", lkaseg::bilinear_resize(x.value(), out_h, out_w), {x},
                  [x](Graph& gr, const Tensor& gy) { bilinear_resize_backward(gy, gr.grad(x.id)); });
}

namespace {

Var binary_op(const char* name, BinaryOp op, Var a, Var b) {
  Graph& g = graph_of(a);
  return g.record(name, binary(op, a.value(), b.value()), {a, b},
                  [op, a, b](Graph& gr, const Tensor& gy) {
                    const Shape sa = gr.value(a.id).shape();
                    const Shape sb = gr.value(b.id).shape();
                    if (gr.requires_grad(a.id)) {
                      if (op == BinaryOp::kMul) {
                        gr.grad(a.id) += reduce_to(binary(BinaryOp::kMul, gy, gr.value(b.id)), sa);
                      } else {
                        gr.grad(a.id) += reduce_to(gy, sa);
                      }
                    }
                    if (gr.requires_grad(b.id)) {
                      if (op == BinaryOp::kMul) {
                        gr.grad(b.id) += reduce_to(binary(BinaryOp::kMul, gy, gr.value(a.id)), sb);
                      } else if (op == BinaryOp::kSub) {
                        Tensor neg = reduce_to(gy, sb);
                        for (double& v : neg.data()) v = -v;
                        gr.grad(b.id) += neg;
                      } else {
                        gr.grad(b.id) += reduce_to(gy, sb);
                      }
                    }
                  });
}

}  // namespace

Var add(Var a, Var b) { return binary_op("add", BinaryOp::kAdd, a, b); }
Var sub(Var a, Var b) { return binary_op("sub", BinaryOp::kSub, a, b); }
Var mul(Var a, Var b) { return binary_op("mul", BinaryOp::kMul, a, b); }

Var affine(Var x, double scale, double shift) {
  Graph& g = graph_of(x);
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = scale * xv[i] + shift;
  instrument::add_flops(static_cast<std::int64_t>(y.size()));
  return g.record("affine", std::move(y), {x}, [x, scale](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += scale * gy[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Graph& g = graph_of(parts.front());
  std::vector<const Tensor*> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(&p.value());
  return g.record("concat_channels", lkaseg::concat_channels(values), parts,
                  [parts](Graph& gr, const Tensor& gy) {
                    int begin = 0;
                    for (const Var& p : parts) {
                      const int c = gr.value(p.id).shape().c;
                      if (gr.requires_grad(p.id)) gr.grad(p.id) += lkaseg::slice_channels(gy, begin, c);
                      begin += c;
                    }
                  });
}

Var slice_channels(Var x, int begin, int count) {
  Graph& g = graph_of(x);
  return g.record("slice_channels", lkaseg::slice_channels(x.value(), begin, count), {x},
                  [x, begin, count](Graph& gr, const Tensor& gy) {
                    Tensor& gx = gr.grad(x.id);
                    const Shape s = gx.shape();
                    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
                    for (int n = 0; n < s.n; ++n) {
                      const double* src = gy.ptr() + static_cast<std::size_t>(n) * count * plane;
                      double* dst = gx.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
                      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                    }
                  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  return g.record("reshape", x.value().reshaped(shape), {x}, [x](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var channel_mean(Var x) {
  Graph& g = graph_of(x);
  return g.record("channel_mean", lkaseg::channel_mean(x.value()), {x},
                  [x](Graph& gr, const Tensor& gy) {
                    Tensor& gx = gr.grad(x.id);
                    const Shape s = gx.shape();
                    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
                    for (int n = 0; n < s.n; ++n) {
                      const double* gp = gy.ptr() + static_cast<std::size_t>(n) * plane;
                      for (int c = 0; c < s.c; ++c) {
                        double* dst = gx.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) dst[i] += gp[i] / s.c;
                      }
                    }
                  });
}

Var channel_max(Var x) {
  Graph& g = graph_of(x);
  auto argmax = std::make_shared<std::vector<int>>();
  Tensor y = lkaseg::channel_max(x.value(), argmax.get());
  return g.record("channel_max", std::move(y), {x}, [x, argmax](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad(x.id);
    const Shape s = gx.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = static_cast<std::size_t>(n) * plane + i;
        gx[(static_cast<std::size_t>(n) * s.c + (*argmax)[k]) * plane + i] += gy[k];
      }
    }
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.record("sum", Tensor::scalar(s), {x}, [x](Graph& gr, const Tensor& gy) {
    Tensor& gx = gr.grad(x.id);
    const double d = gy[0];
    for (double& v : gx.data()) v += d;
  });
}

Var mean(Var x) {
  const double count = static_cast<double>(x.value().size());
  return affine(sum(x), 1.0 / count, 0.0);
}

}  // namespace lkaseg
