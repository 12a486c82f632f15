#include "lkaseg/cost.hpp"

#include <stdexcept>

#include "lkaseg/errors.hpp"

namespace lkaseg {

std::map<std::string, std::int64_t> CostReport::stage_flops() const {
  std::map<std::string, std::int64_t> out;
  for (const LayerCost& l : layers) {
    out[l.name.substr(0, l.name.find('.'))] += l.flops;
  }
  return out;
}

void CostTrace::add(LayerCost record) { layers_.push_back(std::move(record)); }

Shape CostTrace::conv(const std::string& name, Shape in, int c_out, const ConvSpec& spec,
                      bool bias) {
  if (in.c % spec.groups != 0 || c_out % spec.groups != 0) {
    throw ShapeError(name + ": channels not divisible by groups");
  }
  const Shape out = spec.output_shape(in, c_out);
  const std::int64_t outputs = static_cast<std::int64_t>(out.numel());
  const std::int64_t taps = static_cast<std::int64_t>(spec.kernel.h) * spec.kernel.w;
  const std::int64_t cin_g = in.c / spec.groups;
  LayerCost r{name, "conv", 2 * taps * cin_g * outputs + (bias ? outputs : 0),
              taps * cin_g * c_out + (bias ? c_out : 0), out};
  add(std::move(r));
  return out;
}

Shape CostTrace::norm(const std::string& name, Shape in) {
  add({name, "batch_norm", 2 * static_cast<std::int64_t>(in.numel()), 2LL * in.c, in});
  return in;
}

Shape CostTrace::activation(const std::string& name, std::string_view kind, Shape in) {
  add({name, std::string(kind), static_cast<std::int64_t>(in.numel()), 0, in});
  return in;
}

Shape CostTrace::binary(const std::string& name, std::string_view kind, Shape a, Shape b) {
  const Shape out = broadcast_shape(a, b);
  add({name, std::string(kind), static_cast<std::int64_t>(out.numel()), 0, out});
  return out;
}

Shape CostTrace::affine(const std::string& name, Shape in) {
  add({name, "affine", static_cast<std::int64_t>(in.numel()), 0, in});
  return in;
}

Shape CostTrace::avg_pool(const std::string& name, Shape in, const PoolSpec& spec) {
  const Shape out = spec.output_shape(in);
  add({name, "avg_pool",
       static_cast<std::int64_t>(out.numel()) * spec.kernel.h * spec.kernel.w, 0, out});
  return out;
}

Shape CostTrace::global_pool(const std::string& name, Shape in) {
  const Shape out{in.n, in.c, 1, 1};
  add({name, "global_pool", static_cast<std::int64_t>(in.numel()), 0, out});
  return out;
}

Shape CostTrace::channel_reduce(const std::string& name, std::string_view kind, Shape in) {
  const Shape out{in.n, 1, in.h, in.w};
  add({name, std::string(kind), static_cast<std::int64_t>(in.numel()), 0, out});
  return out;
}

Shape CostTrace::resize(const std::string& name, Shape in, int out_h, int out_w) {
  const Shape out{in.n, in.c, out_h, out_w};
  add({name, "resize", 4 * static_cast<std::int64_t>(out.numel()), 0, out});
  return out;
}

Shape CostTrace::concat(const std::vector<Shape>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape out = parts.front();
  out.c = 0;
  for (const Shape& s : parts) {
    if (s.n != out.n || s.h != out.h || s.w != out.w) {
      throw ShapeError("concat: mismatched extents " + s.str());
    }
    out.c += s.c;
  }
  return out;
}

CostReport CostTrace::report(Shape input) const {
  CostReport r;
  r.input = input;
  r.layers = layers_;
  for (const LayerCost& l : layers_) {
    r.total_flops += l.flops;
    r.total_params += l.params;
  }
  return r;
}

int receptive_field(std::span<const RfStep> path) {
  if (path.empty()) throw std::invalid_argument("receptive_field: empty path");
  long long rf = 1;
  long long jump = 1;
  for (const RfStep& s : path) {
    rf += static_cast<long long>(s.kernel - 1) * s.dilation * jump;
    jump *= s.stride;
  }
  return static_cast<int>(rf);
}

RfEntry receptive_field(const RfPath& path) {
  return {path.name, receptive_field(path.h), receptive_field(path.w)};
}

}  // namespace lkaseg
