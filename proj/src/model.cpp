#include "lkaseg/model.hpp"

#include <algorithm>

#include "lkaseg/errors.hpp"

namespace lkaseg {

// ---------------------------------------------------------------------------
// Bgaf

Bgaf::Bgaf(ParamStore& store, const std::string& name, int c_detail, int c_semantic,
           int c_boundary, int c_out, FusionKind kind)
    : detail_refine(store, name + ".detail_refine", c_detail, c_out, ConvSpec::square(3, 1, 1)),
      semantic_refine(store, name + ".semantic_refine", c_semantic, c_out,
                      ConvSpec::square(3, 1, 1)),
      name_(name),
      kind_(kind) {
  if (kind == FusionKind::kBgaf) {
    boundary_gate = Conv2d(store, name + ".boundary_gate", c_boundary, 1, ConvSpec{}, true);
  }
  shortcut_proj = Conv2d(store, name + ".shortcut_proj", c_detail, c_out, ConvSpec{}, false);
  out_conv = NormReluConv(store, name + ".out_conv", c_out, c_out, ConvSpec::square(3, 1, 1));
}

Bgaf::Outputs Bgaf::forward(Var detail, Var semantic, Var boundary) const {
  const Shape d = detail.shape(), s = semantic.shape(), b = boundary.shape();
  if (s.n != d.n || s.h != d.h || s.w != d.w) {
    throw ShapeError(name_ + ": semantic " + s.str() + " not resized to detail " + d.str());
  }
  if (b.n != d.n || b.h != d.h || b.w != d.w) {
    throw ShapeError(name_ + ": boundary " + b.str() + " spatially mismatches detail " + d.str());
  }
  Outputs o;
  Var rd = detail_refine(detail);
  Var rs = semantic_refine(semantic);
  if (kind_ == FusionKind::kBgaf) {
    o.sigma = sigmoid(boundary_gate(boundary));
    o.balanced = add(rs, mul(*o.sigma, sub(rd, rs)));
  } else {
    o.balanced = affine(add(rd, rs), 0.5, 0.0);
  }
  o.out = out_conv(add(o.balanced, shortcut_proj(detail)));
  return o;
}

Shape Bgaf::trace(CostTrace& t, Shape detail, Shape semantic, Shape boundary) const {
  const Shape rd = detail_refine.trace(t, detail);
  const Shape rs = semantic_refine.trace(t, semantic);
  Shape balanced;
  if (kind_ == FusionKind::kBgaf) {
    const Shape sigma = t.activation(name_ + ".sigmoid", "sigmoid", boundary_gate.trace(t, boundary));
    const Shape diff = t.binary(name_ + ".diff", "sub", rd, rs);
    balanced = t.binary(name_ + ".blend", "add", rs, t.binary(name_ + ".weigh", "mul", sigma, diff));
  } else {
    balanced = t.affine(name_ + ".half", t.binary(name_ + ".sum", "add", rd, rs));
  }
  const Shape merged = t.binary(name_ + ".merge", "add", balanced, shortcut_proj.trace(t, detail));
  return out_conv.trace(t, merged);
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "toy") return c;
  if (name == "small") {
    c.stem_width = 32;
    c.low_width = 32;
    c.high_widths = {64, 128};
    c.head_width = 64;
    return c;
  }
  if (name == "base") {
    c.stem_width = 64;
    c.low_width = 64;
    c.high_widths = {128, 256};
    c.eva_blocks_per_stage = 3;
    c.expansion_ratio = 4;
    c.head_width = 128;
    return c;
  }
  throw ConfigError("preset: unknown preset '" + std::string(name) + "' (toy, small, base)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string(field) + ": must be >= 1, got " + std::to_string(v));
  };
  if (class_count < 2 || class_count > 255) {
    throw ConfigError("class_count: must be in [2, 255], got " + std::to_string(class_count));
  }
  positive(stem_width, "stem_width");
  positive(low_width, "low_width");
  positive(high_widths[0], "high_widths");
  positive(high_widths[1], "high_widths");
  positive(eva_blocks_per_stage, "eva_blocks_per_stage");
  positive(expansion_ratio, "expansion_ratio");
  positive(head_width, "head_width");
  if (high_widths[1] < 2) throw ConfigError("high_widths: deepest width must be >= 2");
  for (int p : exchange_points) {
    if (p != 1 && p != 2) {
      throw ConfigError("exchange_points: entries must be 1 or 2, got " + std::to_string(p));
    }
  }
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(ParamStore& store, const std::string& name, int channels)
    : first(store, name + ".first", channels, channels, ConvSpec::square(3, 1, 1), true),
      second(store, name + ".second", channels, channels, ConvSpec::square(3, 1, 1), false),
      name_(name) {}

Var ResidualBlock::operator()(Var x) const { return relu(add(second(first(x)), x)); }

Shape ResidualBlock::trace(CostTrace& t, Shape in) const {
  const Shape s = t.binary(name_ + ".residual", "add", second.trace(t, first.trace(t, in)), in);
  return t.activation(name_ + ".relu", "relu", s);
}

// ---------------------------------------------------------------------------
// Model

namespace {

ModelConfig checked(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(checked(config)), store_(seed) {
  const ModelConfig& c = config_;
  const ConvSpec s2 = ConvSpec::square(3, 2, 1);
  const int low = c.low_width, h0 = c.high_widths[0], h1 = c.high_widths[1];

  stem1_ = ConvNorm(store_, "stem.conv1", 3, c.stem_width, s2, true);
  stem2_ = ConvNorm(store_, "stem.conv2", c.stem_width, c.stem_width, s2, true);
  stem3_ = ConvNorm(store_, "stem.conv3", c.stem_width, low, s2, true);

  for (int i = 0; i < c.eva_blocks_per_stage; ++i) {
    low1_.emplace_back(store_, "low.stage1.block" + std::to_string(i), low);
  }
  down1_ = ConvNorm(store_, "high.stage1.down", low, h0, s2, true);
  for (int i = 0; i < c.eva_blocks_per_stage; ++i) {
    high1_.emplace_back(store_, "high.stage1.eva" + std::to_string(i), h0, c.expansion_ratio);
  }
  if (exchange_at(1)) {
    ex1_to_low_ = ConvNorm(store_, "exchange1.to_low", h0, low, ConvSpec{}, false);
    ex1_to_high_ = ConvNorm(store_, "exchange1.to_high", low, h0, s2, false);
  }
  if (c.aux_head) {
    aux_conv_ = NormReluConv(store_, "aux.conv", low, c.head_width, ConvSpec::square(3, 1, 1));
    aux_cls_ = NormReluConv(store_, "aux.cls", c.head_width, c.class_count, ConvSpec{}, true);
  }

  for (int i = 0; i < c.eva_blocks_per_stage; ++i) {
    low2_.emplace_back(store_, "low.stage2.eva" + std::to_string(i), low, c.expansion_ratio);
  }
  down2_ = ConvNorm(store_, "high.stage2.down", h0, h1, s2, true);
  for (int i = 0; i < c.eva_blocks_per_stage; ++i) {
    high2_.emplace_back(store_, "high.stage2.eva" + std::to_string(i), h1, c.expansion_ratio);
  }
  if (exchange_at(2)) {
    ex2_to_low_ = ConvNorm(store_, "exchange2.to_low", h1, low, ConvSpec{}, false);
    ex2_to_high_a_ = ConvNorm(store_, "exchange2.to_high_a", low, h0, s2, true);
    ex2_to_high_b_ = ConvNorm(store_, "exchange2.to_high_b", h0, h1, s2, false);
  }

  ppm_ = Dlkppm(store_, "ppm", h1, c.ppm_hidden(), c.fused_width(), c.ppm);
  if (c.boundary_head) {
    boundary_feat_ = NormReluConv(store_, "boundary.feat", low, low, ConvSpec::square(3, 1, 1));
    boundary_logit_ = NormReluConv(store_, "boundary.logit", low, 1, ConvSpec{}, true);
  }
  bgaf_ = Bgaf(store_, "bgaf", low, c.fused_width(), low, c.fused_width(), c.fusion);
  seg_conv_ = NormReluConv(store_, "head.conv", c.fused_width(), c.head_width,
                           ConvSpec::square(3, 1, 1));
  seg_cls_ = NormReluConv(store_, "head.cls", c.head_width, c.class_count, ConvSpec{}, true);
}

bool Model::exchange_at(int stage) const {
  const auto& p = config_.exchange_points;
  return std::find(p.begin(), p.end(), stage) != p.end();
}

void Model::check_input(Shape input) {
  if (input.c != 3) {
    throw ShapeError("model input: channel axis must be 3, got " + std::to_string(input.c));
  }
  if (input.h < 64 || input.h % 64 != 0) {
    throw ShapeError("model input: height axis must be a positive multiple of 64, got " +
                     std::to_string(input.h));
  }
  if (input.w < 64 || input.w % 64 != 0) {
    throw ShapeError("model input: width axis must be a positive multiple of 64, got " +
                     std::to_string(input.w));
  }
}

ModelOutputs Model::forward(Var x) const {
  const Shape in = x.shape();
  check_input(in);
  ModelOutputs out;

  Var low = stem3_(stem2_(stem1_(x)));
  const int lh = low.shape().h, lw = low.shape().w;

  // stage 1
  Var high = down1_(low);
  for (const auto& b : low1_) low = b(low);
  for (const auto& b : high1_) high = b(high);
  if (exchange_at(1)) {
    Var to_low = bilinear_resize(ex1_to_low_(high), lh, lw);
    Var to_high = ex1_to_high_(low);
    low = add(low, to_low);
    high = add(high, to_high);
  }
  if (config_.aux_head) {
    out.aux = bilinear_resize(aux_cls_(aux_conv_(low)), in.h, in.w);
  }

  // stage 2
  high = down2_(high);
  for (const auto& b : low2_) low = b(low);
  for (const auto& b : high2_) high = b(high);
  if (exchange_at(2)) {
    Var to_low = bilinear_resize(ex2_to_low_(high), lh, lw);
    Var to_high = ex2_to_high_b_(ex2_to_high_a_(low));
    low = add(low, to_low);
    high = add(high, to_high);
  }

  Var semantic = bilinear_resize(ppm_(high), lh, lw);
  Var boundary = low;
  if (config_.boundary_head) {
    boundary = boundary_feat_(low);
    out.boundary = boundary_logit_(boundary);
  }
  Var fused = bgaf_(low, semantic, boundary);
  out.seg = bilinear_resize(seg_cls_(seg_conv_(fused)), in.h, in.w);
  return out;
}

Shape Model::trace(CostTrace& t, Shape input) const {
  check_input(input);
  Shape low = stem3_.trace(t, stem2_.trace(t, stem1_.trace(t, input)));
  const int lh = low.h, lw = low.w;

  Shape high = down1_.trace(t, low);
  for (const auto& b : low1_) low = b.trace(t, low);
  for (const auto& b : high1_) high = b.trace(t, high);
  if (exchange_at(1)) {
    const Shape to_low = t.resize("exchange1.upsample", ex1_to_low_.trace(t, high), lh, lw);
    const Shape to_high = ex1_to_high_.trace(t, low);
    low = t.binary("exchange1.add_low", "add", low, to_low);
    high = t.binary("exchange1.add_high", "add", high, to_high);
  }
  if (config_.aux_head) {
    t.resize("aux.upsample", aux_cls_.trace(t, aux_conv_.trace(t, low)), input.h, input.w);
  }

  high = down2_.trace(t, high);
  for (const auto& b : low2_) low = b.trace(t, low);
  for (const auto& b : high2_) high = b.trace(t, high);
  if (exchange_at(2)) {
    const Shape to_low = t.resize("exchange2.upsample", ex2_to_low_.trace(t, high), lh, lw);
    const Shape to_high = ex2_to_high_b_.trace(t, ex2_to_high_a_.trace(t, low));
    low = t.binary("exchange2.add_low", "add", low, to_low);
    high = t.binary("exchange2.add_high", "add", high, to_high);
  }

  const Shape semantic = t.resize("ppm.upsample", ppm_.trace(t, high), lh, lw);
  Shape boundary = low;
  if (config_.boundary_head) {
    boundary = boundary_feat_.trace(t, low);
    boundary_logit_.trace(t, boundary);
  }
  const Shape fused = bgaf_.trace(t, low, semantic, boundary);
  return t.resize("head.upsample", seg_cls_.trace(t, seg_conv_.trace(t, fused)), input.h,
                  input.w);
}

std::vector<RfPath> Model::rf_paths() const {
  std::vector<RfPath> paths = Sdlska::rf_paths("sdlska");
  for (RfPath& p : ppm_.rf_paths()) {
    p.name = "dlkppm.lska";
    paths.push_back(std::move(p));
  }
  const RfStep stem{3, 1, 2};
  paths.push_back({"stem", {stem, stem, stem}, {stem, stem, stem}});
  paths.push_back({"cffn.dw", {{3, 1, 1}}, {{3, 1, 1}}});
  return paths;
}

}  // namespace lkaseg
