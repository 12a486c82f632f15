#include "lkaseg/layers.hpp"

#include "lkaseg/errors.hpp"

namespace lkaseg {

Conv2d::Conv2d(ParamStore& store, const std::string& name, int c_in, int c_out, ConvSpec spec,
               bool bias)
    : name_(name), spec_(spec), c_in_(c_in), c_out_(c_out) {
  spec.validate();
  if (c_in % spec.groups != 0 || c_out % spec.groups != 0) {
    throw ShapeError(name + ": channels " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                     " not divisible by groups " + std::to_string(spec.groups));
  }
  const int cin_g = c_in / spec.groups;
  weight_ = &store.add_kaiming(name + ".weight", {c_out, cin_g, spec.kernel.h, spec.kernel.w},
                               cin_g * spec.kernel.h * spec.kernel.w);
  if (bias) bias_ = &store.add(name + ".bias", Tensor({1, c_out, 1, 1}));
}

Var Conv2d::operator()(Var x) const {
  if (x.shape().c != c_in_) {
    throw ShapeError(name_ + ": expected " + std::to_string(c_in_) + " input channels, got " +
                     std::to_string(x.shape().c));
  }
  Graph& g = *x.graph;
  std::optional<Var> b;
  if (bias_ != nullptr) b = g.param(*bias_);
  return conv2d(x, g.param(*weight_), b, spec_);
}

Shape Conv2d::trace(CostTrace& t, Shape in) const {
  if (in.c != c_in_) throw ShapeError(name_ + ": channel mismatch in trace");
  return t.conv(name_, in, c_out_, spec_, bias_ != nullptr);
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels,
                         double momentum, double eps)
    : name_(name), momentum_(momentum), eps_(eps) {
  gamma_ = &store.add(name + ".gamma", Tensor({1, channels, 1, 1}, 1.0));
  beta_ = &store.add(name + ".beta", Tensor({1, channels, 1, 1}, 0.0));
  mean_ = &store.add_buffer(name + ".running_mean", Tensor({1, channels, 1, 1}, 0.0));
  var_ = &store.add_buffer(name + ".running_var", Tensor({1, channels, 1, 1}, 1.0));
}

Var BatchNorm2d::operator()(Var x) const {
  Graph& g = *x.graph;
  return batch_norm(x, g.param(*gamma_), g.param(*beta_), mean_->value, var_->value, momentum_,
                    eps_);
}

Shape BatchNorm2d::trace(CostTrace& t, Shape in) const { return t.norm(name_, in); }

NormReluConv::NormReluConv(ParamStore& store, const std::string& name, int c_in, int c_out,
                           ConvSpec spec, bool bias)
    : bn(store, name + ".bn", c_in), conv(store, name + ".conv", c_in, c_out, spec, bias),
      name_(name) {}

Var NormReluConv::operator()(Var x) const { return conv(relu(bn(x))); }

Shape NormReluConv::trace(CostTrace& t, Shape in) const {
  Shape s = bn.trace(t, in);
  s = t.activation(name_ + ".relu", "relu", s);
  return conv.trace(t, s);
}

ConvNorm::ConvNorm(ParamStore& store, const std::string& name, int c_in, int c_out,
                   ConvSpec spec, bool relu)
    : conv(store, name + ".conv", c_in, c_out, spec, false),
      bn(store, name + ".bn", c_out),
      name_(name),
      relu_(relu) {}

Var ConvNorm::operator()(Var x) const {
  Var y = bn(conv(x));
  return relu_ ? lkaseg::relu(y) : y;
}

Shape ConvNorm::trace(CostTrace& t, Shape in) const {
  Shape s = bn.trace(t, conv.trace(t, in));
  return relu_ ? t.activation(name_ + ".relu", "relu", s) : s;
}

}  // namespace lkaseg
