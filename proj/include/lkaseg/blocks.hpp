#pragma once

// Large-kernel attention machinery: decomposed large-kernel attention with
// joint kernel selection, the convolutional feed-forward unit, and the
// residual block composing them.

#include <array>
#include <string>
#include <vector>

#include "lkaseg/layers.hpp"

namespace lkaseg {

/// Mixes three same-shaped candidate features with weights that depend on both
/// position and channel. Spatial logits come from channel mean/max maps, channel
/// logits from a pooled descriptor; their product is normalised by a softmax over
/// the three candidates, so the weights form a convex combination everywhere.
class Cks {
 public:
  static constexpr int kBranches = 3;

  struct Outputs {
    Var spatial;                        // (n, 3, h, w)
    Var channel;                        // (n, 3c, 1, 1)
    std::array<Var, kBranches> weights; // each (n, c, h, w), sum to one
    Var out;
  };

  Cks() = default;
  Cks(ParamStore& store, const std::string& name, int channels);

  Outputs forward(const std::array<Var, kBranches>& branches) const;
  Var operator()(const std::array<Var, kBranches>& branches) const {
    return forward(branches).out;
  }
  Shape trace(CostTrace& t, Shape in) const;

  Conv2d spatial_conv;  // 2 -> 3, 7x7
  Conv2d channel_pw;    // c -> 3c
  Conv2d channel_dw;    // depthwise over 3c

 private:
  std::string name_;
  int channels_ = 0;
};

/// Sparse decomposed large separable kernel attention:
///   y0 = dw5x5(x), yh = dw1x11_d3(y0), yv = dw11x1_d3(yh)
///   out = pw(cks(y0, yh, yv)) * x
/// The yv path covers a 35x35 window.
class Sdlska {
 public:
  struct Outputs {
    Var y0;
    Var y_h;
    Var y_v;
    Cks::Outputs selection;
    Var attention;
    Var out;
  };

  static ConvSpec small_spec(int channels);
  static ConvSpec strip_h_spec(int channels);
  static ConvSpec strip_v_spec(int channels);
  /// Receptive-field chains of the three candidate paths.
  static std::vector<RfPath> rf_paths(const std::string& prefix);

  Sdlska() = default;
  Sdlska(ParamStore& store, const std::string& name, int channels);

  Outputs forward(Var x) const;
  Var operator()(Var x) const { return forward(x).out; }
  Shape trace(CostTrace& t, Shape in) const;

  Conv2d dw_small;
  Conv2d strip_h;
  Conv2d strip_v;
  Cks cks;
  Conv2d pw_out;

 private:
  std::string name_;
  int channels_ = 0;
};

/// Pointwise expand -> depthwise 3x3 -> GELU -> pointwise project.
class Cffn {
 public:
  Cffn() = default;
  Cffn(ParamStore& store, const std::string& name, int channels, int expansion_ratio);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  Conv2d expand;
  Conv2d dw;
  Conv2d project;

 private:
  std::string name_;
};

/// u = x + sdlska(norm1(x)); out = u + cffn(norm2(u)).
class Eva {
 public:
  Eva() = default;
  Eva(ParamStore& store, const std::string& name, int channels, int expansion_ratio);

  Var operator()(Var x) const;
  Shape trace(CostTrace& t, Shape in) const;

  BatchNorm2d norm1;
  Sdlska lka;
  BatchNorm2d norm2;
  Cffn cffn;

 private:
  std::string name_;
};

}  // namespace lkaseg
