#pragma once

#include <string>

#include "lkaseg/cost.hpp"
#include "lkaseg/graph.hpp"
#include "lkaseg/ops.hpp"

namespace lkaseg {

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int c_in, int c_out, ConvSpec spec,
         bool bias);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }
  const ConvSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  int in_channels() const { return c_in_; }
  int out_channels() const { return c_out_; }

 private:
  std::string name_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  ConvSpec spec_;
  int c_in_ = 0;
  int c_out_ = 0;
};

/// Batch normalisation; train/eval behaviour follows the graph's mode.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, int channels, double momentum = 0.1,
              double eps = 1e-5);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }
  Buffer& running_mean() const { return *mean_; }
  Buffer& running_var() const { return *var_; }

 private:
  std::string name_;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Buffer* mean_ = nullptr;
  Buffer* var_ = nullptr;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

/// BN -> ReLU -> conv.
class NormReluConv {
 public:
  NormReluConv() = default;
  NormReluConv(ParamStore& store, const std::string& name, int c_in, int c_out, ConvSpec spec,
               bool bias = false);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  BatchNorm2d bn;
  Conv2d conv;

 private:
  std::string name_;
};

/// conv -> BN, optionally followed by ReLU.
class ConvNorm {
 public:
  ConvNorm() = default;
  ConvNorm(ParamStore& store, const std::string& name, int c_in, int c_out, ConvSpec spec,
           bool relu);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  Conv2d conv;
  BatchNorm2d bn;

 private:
  std::string name_;
  bool relu_ = false;
};

}  // namespace lkaseg
