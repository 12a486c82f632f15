#pragma once

// Pyramid context module for the deepest semantic features: hierarchical
// residual pooling scales with dilated processing convs and a large separable
// kernel gate on the full-resolution scale.

#include <string>
#include <vector>

#include "lkaseg/layers.hpp"

namespace lkaseg {

enum class PpmKind { kDlkppm, kDappm };

/// dw5x5 -> dw1x11 (d3) -> dw11x1 (d3) -> pointwise, used as a multiplicative gate.
class LskaGate {
 public:
  LskaGate() = default;
  LskaGate(ParamStore& store, const std::string& name, int channels);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;
  static RfPath rf_path(const std::string& name);

  Conv2d dw_small;
  Conv2d strip_h;
  Conv2d strip_v;
  Conv2d pw;

 private:
  std::string name_;
};

struct PyramidScale {
  std::string label;
  bool identity = false;
  bool global = false;
  PoolSpec pool;
};

class Dlkppm {
 public:
  struct Outputs {
    std::vector<Var> levels;  // r_0 .. r_k, each at input resolution
    Var fused;                // out_proj(concat(levels))
    Var shortcut;
    Var out;
  };

  /// identity, avg 5/2, avg 9/4, avg 17/8, global.
  static std::vector<PyramidScale> scales();
  /// Scale actually used for an input of `in`: pooled scales whose output
  /// would be smaller than 2x2 fall back to global pooling.
  static PyramidScale effective_scale(const PyramidScale& scale, Shape in);

  Dlkppm() = default;
  Dlkppm(ParamStore& store, const std::string& name, int c_in, int hidden, int c_out,
         PpmKind kind);

  Outputs forward(Var x) const;
  Var operator()(Var x) const { return forward(x).out; }
  Shape trace(CostTrace& t, Shape in) const;
  std::vector<RfPath> rf_paths() const;

  PpmKind kind() const { return kind_; }
  int hidden() const { return hidden_; }

  std::vector<NormReluConv> reduce;   // one per scale
  std::vector<NormReluConv> process;  // one per non-identity scale
  LskaGate lska;                      // DLKPPM only
  NormReluConv out_proj;
  NormReluConv shortcut;

 private:
  std::string name_;
  PpmKind kind_ = PpmKind::kDlkppm;
  int c_in_ = 0;
  int hidden_ = 0;
};

}  // namespace lkaseg
