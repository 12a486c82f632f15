#include "lkaseg/blocks.hpp"

#include "lkaseg/errors.hpp"

namespace lkaseg {

// ---------------------------------------------------------------------------
// Cks

Cks::Cks(ParamStore& store, const std::string& name, int channels)
    : spatial_conv(store, name + ".spatial_conv", 2, kBranches, ConvSpec::square(7, 1, 3), true),
      channel_pw(store, name + ".channel_pw", channels, kBranches * channels, ConvSpec{}, true),
      channel_dw(store, name + ".channel_dw", kBranches * channels, kBranches * channels,
                 ConvSpec::square(1, 1, 0, 1, kBranches * channels), true),
      name_(name),
      channels_(channels) {}

Cks::Outputs Cks::forward(const std::array<Var, kBranches>& branches) const {
  const Shape s = branches[0].shape();
  for (const Var& b : branches) {
    if (b.shape() != s) {
      throw ShapeError(name_ + ": candidate shapes disagree, " + s.str() + " vs " +
                       b.shape().str());
    }
  }
  if (s.c != channels_) {
    throw ShapeError(name_ + ": expected " + std::to_string(channels_) + " channels, got " +
                     std::to_string(s.c));
  }
  Outputs o;
  Var stacked = concat_channels({branches[0], branches[1], branches[2]});
  Var pooled_maps = concat_channels({channel_mean(stacked), channel_max(stacked)});
  o.spatial = spatial_conv(pooled_maps);

  Var total = add(add(branches[0], branches[1]), branches[2]);
  o.channel = channel_dw(gelu(channel_pw(global_avg_pool(total))));

  std::vector<Var> logits;
  for (int i = 0; i < kBranches; ++i) {
    logits.push_back(mul(slice_channels(o.spatial, i, 1),
                         slice_channels(o.channel, i * channels_, channels_)));
  }
  const Shape joint{s.n, kBranches * s.c, s.h, s.w};
  Var normalised = softmax(reshape(concat_channels(logits), {s.n, kBranches, s.c, s.h * s.w}), 1);
  Var weights = reshape(normalised, joint);
  for (int i = 0; i < kBranches; ++i) {
    o.weights[static_cast<std::size_t>(i)] = slice_channels(weights, i * s.c, s.c);
  }
  o.out = add(add(mul(o.weights[0], branches[0]), mul(o.weights[1], branches[1])),
              mul(o.weights[2], branches[2]));
  return o;
}

Shape Cks::trace(CostTrace& t, Shape in) const {
  const Shape stacked = CostTrace::concat({in, in, in});
  const Shape map = t.channel_reduce(name_ + ".mean", "channel_mean", stacked);
  t.channel_reduce(name_ + ".max", "channel_max", stacked);
  const Shape spatial = spatial_conv.trace(t, CostTrace::concat({map, map}));

  Shape total = t.binary(name_ + ".sum0", "add", in, in);
  total = t.binary(name_ + ".sum1", "add", total, in);
  Shape channel = channel_pw.trace(t, t.global_pool(name_ + ".pool", total));
  channel = channel_dw.trace(t, t.activation(name_ + ".gelu", "gelu", channel));

  const Shape s_i{spatial.n, 1, spatial.h, spatial.w};
  const Shape c_i{channel.n, in.c, 1, 1};
  for (int i = 0; i < kBranches; ++i) {
    t.binary(name_ + ".logit" + std::to_string(i), "mul", s_i, c_i);
  }
  t.activation(name_ + ".softmax", "softmax", {in.n, kBranches * in.c, in.h, in.w});
  for (int i = 0; i < kBranches; ++i) {
    t.binary(name_ + ".weigh" + std::to_string(i), "mul", in, in);
  }
  t.binary(name_ + ".mix0", "add", in, in);
  return t.binary(name_ + ".mix1", "add", in, in);
}

// ---------------------------------------------------------------------------
// Sdlska

ConvSpec Sdlska::small_spec(int channels) { return ConvSpec::square(5, 1, 2, 1, channels); }

ConvSpec Sdlska::strip_h_spec(int channels) {
  ConvSpec s;
  s.kernel = {1, 11};
  s.dilation = {1, 3};
  s.padding = {0, 15};
  s.groups = channels;
  return s;
}

ConvSpec Sdlska::strip_v_spec(int channels) {
  ConvSpec s;
  s.kernel = {11, 1};
  s.dilation = {3, 1};
  s.padding = {15, 0};
  s.groups = channels;
  return s;
}

std::vector<RfPath> Sdlska::rf_paths(const std::string& prefix) {
  const ConvSpec a = small_spec(1), b = strip_h_spec(1), c = strip_v_spec(1);
  auto h = [](const ConvSpec& s) { return RfStep{s.kernel.h, s.dilation.h, s.stride.h}; };
  auto w = [](const ConvSpec& s) { return RfStep{s.kernel.w, s.dilation.w, s.stride.w}; };
  return {
      {prefix + ".small", {h(a)}, {w(a)}},
      {prefix + ".strip_h", {h(a), h(b)}, {w(a), w(b)}},
      {prefix + ".large", {h(a), h(b), h(c)}, {w(a), w(b), w(c)}},
  };
}

Sdlska::Sdlska(ParamStore& store, const std::string& name, int channels)
    : dw_small(store, name + ".dw_small", channels, channels, small_spec(channels), true),
      strip_h(store, name + ".strip_h", channels, channels, strip_h_spec(channels), true),
      strip_v(store, name + ".strip_v", channels, channels, strip_v_spec(channels), true),
      cks(store, name + ".cks", channels),
      pw_out(store, name + ".pw_out", channels, channels, ConvSpec{}, true),
      name_(name),
      channels_(channels) {}

Sdlska::Outputs Sdlska::forward(Var x) const {
  if (x.shape().c != channels_) {
    throw ShapeError(name_ + ": expected " + std::to_string(channels_) + " channels, got " +
                     std::to_string(x.shape().c));
  }
  Outputs o;
  o.y0 = dw_small(x);
  o.y_h = strip_h(o.y0);
  o.y_v = strip_v(o.y_h);
  o.selection = cks.forward({o.y0, o.y_h, o.y_v});
  o.attention = pw_out(o.selection.out);
  o.out = mul(o.attention, x);
  return o;
}

Shape Sdlska::trace(CostTrace& t, Shape in) const {
  Shape s = strip_v.trace(t, strip_h.trace(t, dw_small.trace(t, in)));
  s = pw_out.trace(t, cks.trace(t, s));
  return t.binary(name_ + ".gate", "mul", s, in);
}

// ---------------------------------------------------------------------------
// Cffn

Cffn::Cffn(ParamStore& store, const std::string& name, int channels, int expansion_ratio)
    : expand(store, name + ".expand", channels, channels * expansion_ratio, ConvSpec{}, true),
      dw(store, name + ".dw", channels * expansion_ratio, channels * expansion_ratio,
         ConvSpec::square(3, 1, 1, 1, channels * expansion_ratio), true),
      project(store, name + ".project", channels * expansion_ratio, channels, ConvSpec{}, true),
      name_(name) {
  if (expansion_ratio < 1) throw ShapeError(name + ": expansion ratio must be positive");
}

Var Cffn::operator()(Var x) const { return project(gelu(dw(expand(x)))); }

Shape Cffn::trace(CostTrace& t, Shape in) const {
  Shape s = dw.trace(t, expand.trace(t, in));
  return project.trace(t, t.activation(name_ + ".gelu", "gelu", s));
}

// ---------------------------------------------------------------------------
// Eva

Eva::Eva(ParamStore& store, const std::string& name, int channels, int expansion_ratio)
    : norm1(store, name + ".norm1", channels),
      lka(store, name + ".lka", channels),
      norm2(store, name + ".norm2", channels),
      cffn(store, name + ".cffn", channels, expansion_ratio),
      name_(name) {}

Var Eva::operator()(Var x) const {
  Var u = add(x, lka(norm1(x)));
  return add(u, cffn(norm2(u)));
}

Shape Eva::trace(CostTrace& t, Shape in) const {
  Shape u = t.binary(name_ + ".residual1", "add", in, lka.trace(t, norm1.trace(t, in)));
  return t.binary(name_ + ".residual2", "add", u, cffn.trace(t, norm2.trace(t, u)));
}

}  // namespace lkaseg
