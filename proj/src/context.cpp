#include "lkaseg/context.hpp"

#include "lkaseg/blocks.hpp"
#include "lkaseg/errors.hpp"
#include "lkaseg/log.hpp"

namespace lkaseg {

LskaGate::LskaGate(ParamStore& store, const std::string& name, int channels)
    : dw_small(store, name + ".dw_small", channels, channels, Sdlska::small_spec(channels), true),
      strip_h(store, name + ".strip_h", channels, channels, Sdlska::strip_h_spec(channels), true),
      strip_v(store, name + ".strip_v", channels, channels, Sdlska::strip_v_spec(channels), true),
      pw(store, name + ".pw", channels, channels, ConvSpec{}, true),
      name_(name) {}

Var LskaGate::operator()(Var x) const { return mul(pw(strip_v(strip_h(dw_small(x)))), x); }

Shape LskaGate::trace(CostTrace& t, Shape in) const {
  Shape s = pw.trace(t, strip_v.trace(t, strip_h.trace(t, dw_small.trace(t, in))));
  return t.binary(name_ + ".gate", "mul", s, in);
}

RfPath LskaGate::rf_path(const std::string& name) {
  RfPath p = Sdlska::rf_paths(name).back();
  p.name = name;
  return p;
}

std::vector<PyramidScale> Dlkppm::scales() {
  return {
      {"identity", true, false, {}},
      {"pool5", false, false, PoolSpec{{5, 5}, {2, 2}, {2, 2}}},
      {"pool9", false, false, PoolSpec{{9, 9}, {4, 4}, {4, 4}}},
      {"pool17", false, false, PoolSpec{{17, 17}, {8, 8}, {8, 8}}},
      {"global", false, true, {}},
  };
}

PyramidScale Dlkppm::effective_scale(const PyramidScale& scale, Shape in) {
  if (scale.identity || scale.global) return scale;
  const PoolSpec& p = scale.pool;
  const int span_h = in.h + 2 * p.padding.h - p.kernel.h;
  const int span_w = in.w + 2 * p.padding.w - p.kernel.w;
  if (span_h >= 0 && span_w >= 0 && span_h / p.stride.h + 1 >= 2 && span_w / p.stride.w + 1 >= 2) {
    return scale;
  }
  log::notice_once("pyramid scale " + scale.label + " degenerate on " + std::to_string(in.h) +
                   "x" + std::to_string(in.w) + " input, using global pooling");
  PyramidScale g = scale;
  g.global = true;
  return g;
}

Dlkppm::Dlkppm(ParamStore& store, const std::string& name, int c_in, int hidden, int c_out,
               PpmKind kind)
    : name_(name), kind_(kind), c_in_(c_in), hidden_(hidden) {
  const auto all = scales();
  for (std::size_t i = 0; i < all.size(); ++i) {
    reduce.emplace_back(store, name + ".reduce" + std::to_string(i), c_in, hidden, ConvSpec{});
  }
  const ConvSpec proc = kind == PpmKind::kDlkppm ? ConvSpec::square(3, 1, 2, 2)
                                                 : ConvSpec::square(3, 1, 1, 1);
  for (std::size_t i = 1; i < all.size(); ++i) {
    process.emplace_back(store, name + ".process" + std::to_string(i), hidden, hidden, proc);
  }
  if (kind == PpmKind::kDlkppm) lska = LskaGate(store, name + ".lska", hidden);
  out_proj = NormReluConv(store, name + ".out_proj", hidden * static_cast<int>(all.size()), c_out,
                          ConvSpec{});
  shortcut = NormReluConv(store, name + ".shortcut", c_in, c_out, ConvSpec{});
}

Dlkppm::Outputs Dlkppm::forward(Var x) const {
  const Shape in = x.shape();
  if (in.c != c_in_) {
    throw ShapeError(name_ + ": expected " + std::to_string(c_in_) + " channels, got " +
                     std::to_string(in.c));
  }
  const auto all = scales();
  Outputs o;
  Var r0 = reduce[0](x);
  if (kind_ == PpmKind::kDlkppm) r0 = lska(r0);
  o.levels.push_back(r0);
  for (std::size_t i = 1; i < all.size(); ++i) {
    const PyramidScale s = effective_scale(all[i], in);
    Var pooled = s.global ? global_avg_pool(x) : avg_pool(x, s.pool);
    Var up = bilinear_resize(reduce[i](pooled), in.h, in.w);
    o.levels.push_back(process[i - 1](add(up, o.levels.back())));
  }
  o.fused = out_proj(concat_channels(o.levels));
  o.shortcut = shortcut(x);
  o.out = add(o.fused, o.shortcut);
  return o;
}

Shape Dlkppm::trace(CostTrace& t, Shape in) const {
  const auto all = scales();
  Shape r0 = reduce[0].trace(t, in);
  if (kind_ == PpmKind::kDlkppm) r0 = lska.trace(t, r0);
  std::vector<Shape> levels{r0};
  for (std::size_t i = 1; i < all.size(); ++i) {
    const PyramidScale s = effective_scale(all[i], in);
    const std::string tag = name_ + "." + all[i].label;
    const Shape pooled = s.global ? t.global_pool(tag + ".pool", in)
                                  : t.avg_pool(tag + ".pool", in, s.pool);
    const Shape up = t.resize(tag + ".up", reduce[i].trace(t, pooled), in.h, in.w);
    levels.push_back(process[i - 1].trace(t, t.binary(tag + ".add", "add", up, levels.back())));
  }
  const Shape fused = out_proj.trace(t, CostTrace::concat(levels));
  const Shape sc = shortcut.trace(t, in);
  return t.binary(name_ + ".residual", "add", fused, sc);
}

std::vector<RfPath> Dlkppm::rf_paths() const {
  if (kind_ != PpmKind::kDlkppm) return {};
  return {LskaGate::rf_path(name_ + ".lska")};
}

}  // namespace lkaseg
