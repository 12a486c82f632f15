#pragma once

// Static cost accounting. Layers describe themselves into a CostTrace by
// propagating shapes only; no arithmetic on tensor data happens here.
//
// Counting convention (MAC = 2 FLOPs):
//   conv          2 * kh * kw * (c_in / g) * c_out * h_out * w_out, plus one per output if biased
//   batch norm    2 per element
//   activations   1 per element (relu, gelu, sigmoid, softmax)
//   arithmetic    1 per output element (add, sub, mul, affine)
//   avg pool      kh * kw per output, global pool h * w per output
//   channel mean / max   c per output
//   bilinear resize      4 per output element
//   concat, slice, reshape   free

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lkaseg/kernels.hpp"
#include "lkaseg/tensor.hpp"

namespace lkaseg {

struct LayerCost {
  std::string name;
  std::string kind;
  std::int64_t flops = 0;
  std::int64_t params = 0;
  Shape out;
};

/// One step of a receptive-field chain along one axis.
struct RfStep {
  int kernel = 1;
  int dilation = 1;
  int stride = 1;
};

/// Named chain with independent steps for the height and width axes.
struct RfPath {
  std::string name;
  std::vector<RfStep> h;
  std::vector<RfStep> w;
};

struct RfEntry {
  std::string name;
  int rf_h = 1;
  int rf_w = 1;
};

struct CostReport {
  Shape input;
  std::vector<LayerCost> layers;
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;
  std::vector<RfEntry> rf_table;

  /// FLOPs grouped by the first dotted component of the layer name.
  std::map<std::string, std::int64_t> stage_flops() const;
};

class CostTrace {
 public:
  Shape conv(const std::string& name, Shape in, int c_out, const ConvSpec& spec, bool bias);
  Shape norm(const std::string& name, Shape in);
  Shape activation(const std::string& name, std::string_view kind, Shape in);
  Shape binary(const std::string& name, std::string_view kind, Shape a, Shape b);
  Shape affine(const std::string& name, Shape in);
  Shape avg_pool(const std::string& name, Shape in, const PoolSpec& spec);
  Shape global_pool(const std::string& name, Shape in);
  Shape channel_reduce(const std::string& name, std::string_view kind, Shape in);
  Shape resize(const std::string& name, Shape in, int out_h, int out_w);
  /// Free; records nothing.
  static Shape concat(const std::vector<Shape>& parts);

  void add(LayerCost record);
  const std::vector<LayerCost>& layers() const { return layers_; }
  CostReport report(Shape input) const;

 private:
  std::vector<LayerCost> layers_;
};

/// rf = 1 + sum_i (k_i - 1) * d_i * prod_{j<i} s_j. Throws on an empty path.
int receptive_field(std::span<const RfStep> path);
RfEntry receptive_field(const RfPath& path);

}  // namespace lkaseg
