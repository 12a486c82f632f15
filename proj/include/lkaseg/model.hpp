#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lkaseg/blocks.hpp"
#include "lkaseg/context.hpp"
#include "lkaseg/layers.hpp"

namespace lkaseg {

enum class FusionKind {
  kBgaf,       // boundary-driven sigmoid gate
  kFixedHalf,  // ablation: gate pinned at 0.5
};

/// Boundary guided adaptive fusion:
///   sigma    = sigmoid(gate(boundary))
///   balanced = sigma * refine(detail) + (1 - sigma) * refine(semantic)
///   out      = out_conv(balanced + shortcut_proj(detail))
class Bgaf {
 public:
  struct Outputs {
    std::optional<Var> sigma;  // absent for the fixed-gate ablation
    Var balanced;
    Var out;
  };

  Bgaf() = default;
  Bgaf(ParamStore& store, const std::string& name, int c_detail, int c_semantic, int c_boundary,
       int c_out, FusionKind kind);

  Outputs forward(Var detail, Var semantic, Var boundary) const;
  Var operator()(Var detail, Var semantic, Var boundary) const {
    return forward(detail, semantic, boundary).out;
  }
  Shape trace(CostTrace& t, Shape detail, Shape semantic, Shape boundary) const;

  FusionKind kind() const { return kind_; }

  NormReluConv detail_refine;
  NormReluConv semantic_refine;
  Conv2d boundary_gate;  // 1x1 -> one logit channel; unused for kFixedHalf
  Conv2d shortcut_proj;
  NormReluConv out_conv;

 private:
  std::string name_;
  FusionKind kind_ = FusionKind::kBgaf;
};

struct ModelConfig {
  int class_count = 5;
  int stem_width = 16;
  int low_width = 16;
  std::array<int, 2> high_widths{32, 64};  // 1/16 and 1/32 scales
  int eva_blocks_per_stage = 2;
  int expansion_ratio = 2;
  int head_width = 32;
  /// Stages (1 and/or 2) after which the branches exchange features.
  std::vector<int> exchange_points{1, 2};
  PpmKind ppm = PpmKind::kDlkppm;
  FusionKind fusion = FusionKind::kBgaf;
  bool boundary_head = true;
  bool aux_head = true;

  static ModelConfig preset(std::string_view name);
  /// Throws ConfigError naming the offending field.
  void validate() const;

  int ppm_hidden() const { return high_widths[1] / 2; }
  int fused_width() const { return 2 * low_width; }
};

struct ModelOutputs {
  Var seg;                      // (n, K, h, w)
  std::optional<Var> aux;       // (n, K, h, w)
  std::optional<Var> boundary;  // (n, 1, h/8, w/8)
};

/// conv3x3-BN-ReLU-conv3x3-BN plus identity, then ReLU.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParamStore& store, const std::string& name, int channels);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  ConvNorm first;
  ConvNorm second;

 private:
  std::string name_;
};

class Model {
 public:
  /// Deterministic initialisation from `seed`. Throws ConfigError on bad config.
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Input must be (n, 3, h, w) with h and w divisible by 64.
  ModelOutputs forward(Var x) const;
  /// Static shape/cost walk mirroring forward().
  Shape trace(CostTrace& t, Shape input) const;
  std::vector<RfPath> rf_paths() const;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  static void check_input(Shape input);

 private:
  ModelConfig config_;
  ParamStore store_;

  ConvNorm stem1_, stem2_, stem3_;
  std::vector<ResidualBlock> low1_;
  std::vector<Eva> low2_;
  ConvNorm down1_;
  std::vector<Eva> high1_;
  ConvNorm down2_;
  std::vector<Eva> high2_;

  ConvNorm ex1_to_low_, ex1_to_high_;
  ConvNorm ex2_to_low_, ex2_to_high_a_, ex2_to_high_b_;

  Dlkppm ppm_;
  NormReluConv boundary_feat_, boundary_logit_;
  Bgaf bgaf_;
  NormReluConv seg_conv_, seg_cls_;
  NormReluConv aux_conv_, aux_cls_;

  bool exchange_at(int stage) const;
};

}  // namespace lkaseg
