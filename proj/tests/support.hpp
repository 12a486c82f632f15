#pragma once

// Shared test machinery: reference implementations written independently of
// the library kernels, and a central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lkaseg/graph.hpp"
#include "lkaseg/layers.hpp"
#include "lkaseg/ops.hpp"

namespace testing {

using lkaseg::Graph;
using lkaseg::Shape;
using lkaseg::Tensor;
using lkaseg::Var;

/// Direct six-loop cross-correlation with explicit zero padding. Weight layout
/// (c_out, c_in / groups, kh, kw).
inline Tensor reference_conv(const Tensor& x, const Tensor& w, const Tensor* b, int sh, int sw,
                             int ph, int pw, int dh, int dw, int groups) {
  const Shape xs = x.shape(), ws = w.shape();
  const int kh = ws.h, kw = ws.w;
  const int oh = (xs.h + 2 * ph - ((kh - 1) * dh + 1)) / sh + 1;
  const int ow = (xs.w + 2 * pw - ((kw - 1) * dw + 1)) / sw + 1;
  const int cin_g = xs.c / groups, cout_g = ws.n / groups;
  Tensor y({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b ? (*b)[static_cast<std::size_t>(co)] : 0.0;
          const int g = co / cout_g;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * sh - ph + ky * dh;
                const int ix = ox * sw - pw + kx * dw;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, g * cin_g + ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

/// Dilated kernel rewritten as a dense kernel with zeros between taps.
inline Tensor expand_dilation(const Tensor& w, int dh, int dw) {
  const Shape s = w.shape();
  Tensor e({s.n, s.c, (s.h - 1) * dh + 1, (s.w - 1) * dw + 1});
  for (int o = 0; o < s.n; ++o)
    for (int i = 0; i < s.c; ++i)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) e.at(o, i, y * dh, x * dw) = w.at(o, i, y, x);
  return e;
}

/// Depthwise kernel (c, 1, kh, kw) as a dense block-diagonal (c, c, kh, kw) kernel.
inline Tensor depthwise_as_dense(const Tensor& w) {
  const Shape s = w.shape();
  Tensor d({s.n, s.n, s.h, s.w});
  for (int c = 0; c < s.n; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) d.at(c, c, y, x) = w.at(c, 0, y, x);
  return d;
}

// Gradients that vanish exactly (e.g. a per-channel constant feeding a
// train-mode norm) leave only FD noise, so small norms are compared absolutely.
inline constexpr double kGradFloor = 1e-2;
inline constexpr double kKinkTol = 1e-3;

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 0.0) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// Largest |a - b| / max(|a|, |b|, floor).
inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-300) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    const double s = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, d / s);
  }
  return worst;
}

struct GradReport {
  double worst = 0.0;
  std::string where;
  int checked = 0;
  int skipped = 0;

  void note(double err, const std::string& name) {
    ++checked;
    if (err > worst) {
      worst = err;
      where = name;
    }
  }
};

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Central differences on loss = sum(f(inputs) * R) with a fixed random R.
/// Each input and each parameter in `store` (when given) is one tensor whose
/// relative error is ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over up to `per_tensor` sampled entries. Entries whose one-sided
/// differences disagree straddle a ReLU/max kink and are skipped.
inline GradReport grad_check(const Builder& f, std::vector<Tensor> inputs,
                             lkaseg::ParamStore* store, std::uint64_t seed = 1,
                             double eps = 1e-5, int per_tensor = 48,
                             lkaseg::NormMode mode = lkaseg::NormMode::kTrain) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  auto loss_value = [&](const std::vector<Tensor>& xs) {
    Graph g(mode, false);
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(g.input(x));
    const Tensor& out = f(g, vs).value();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
    return s;
  };

  Graph g(mode);
  std::vector<Var> vs;
  for (const auto& x : inputs) vs.push_back(g.variable(x));
  Var out = f(g, vs);
  weights = lkaseg::random_normal(out.shape(), rng);
  if (store) store->zero_grad();
  g.backward(lkaseg::sum(lkaseg::mul(out, g.input(weights))));

  auto sample = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > static_cast<std::size_t>(per_tensor)) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(per_tensor));
    }
    return idx;
  };

  GradReport rep;
  const double base = loss_value(inputs);
  auto central = [&](double lp, double lm, std::vector<double>& num, std::vector<double>& a, double an) {
    const double fwd = (lp - base) / eps, bwd = (base - lm) / eps;
    if (std::abs(fwd - bwd) > kKinkTol * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
      ++rep.skipped;
      return;
    }
    num.push_back((lp - lm) / (2 * eps));
    a.push_back(an);
  };
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor analytic = g.grad_of(vs[t]);
    std::vector<double> a, num;
    for (std::size_t i : sample(inputs[t].size())) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[t][i] += eps;
      minus[t][i] -= eps;
      central(loss_value(plus), loss_value(minus), num, a, analytic[i]);
    }
    rep.note(rel_error(a, num, kGradFloor), "input" + std::to_string(t));
  }
  if (store) {
    for (const auto& p : store->params()) {
      const Tensor analytic = p->grad;
      std::vector<double> a, num;
      for (std::size_t i : sample(p->value.size())) {
        const double keep = p->value[i];
        p->value[i] = keep + eps;
        const double lp = loss_value(inputs);
        p->value[i] = keep - eps;
        const double lm = loss_value(inputs);
        p->value[i] = keep;
        central(lp, lm, num, a, analytic[i]);
      }
      rep.note(rel_error(a, num, kGradFloor), p->name);
    }
  }
  return rep;
}

/// Central differences on a handful of randomly chosen parameter entries of
/// a scalar loss. Returns the relative error of the sampled gradient vector.
inline GradReport spot_check(const std::function<Var(Graph&)>& loss, lkaseg::ParamStore& store,
                             int count, std::uint64_t seed = 1, double eps = 1e-5,
                             lkaseg::NormMode mode = lkaseg::NormMode::kTrain) {
  auto value = [&] {
    Graph g(mode, false);
    return loss(g).value()[0];
  };
  {
    Graph g(mode);
    store.zero_grad();
    g.backward(loss(g));
  }
  std::mt19937_64 rng(seed);
  const auto& params = store.params();
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  const double base = value();
  GradReport rep;
  std::vector<double> a, num;
  std::string names;
  while (static_cast<int>(a.size()) < count) {
    lkaseg::Parameter& p = *params[pick(rng)];
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.value.size() - 1)(rng);
    const double keep = p.value[i];
    p.value[i] = keep + eps;
    const double lp = value();
    p.value[i] = keep - eps;
    const double lm = value();
    p.value[i] = keep;
    const double fwd = (lp - base) / eps, bwd = (base - lm) / eps;
    if (std::abs(fwd - bwd) > kKinkTol * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
      ++rep.skipped;
      continue;
    }
    num.push_back((lp - lm) / (2 * eps));
    a.push_back(p.grad[i]);
    names += (names.empty() ? "" : ",") + p.name + "[" + std::to_string(i) + "]";
  }
  rep.note(rel_error(a, num), names);
  return rep;
}

/// Random normal weights; running variances drawn from [0.5, 2].
inline void randomize_store(lkaseg::ParamStore& store, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> d(0.0, scale);
  std::uniform_real_distribution<double> var(0.5, 2.0);
  for (const auto& p : store.params()) {
    for (double& v : p->value.data()) v = d(rng);
  }
  for (const auto& b : store.buffers()) {
    const bool is_var = b->name.find("running_var") != std::string::npos;
    for (double& v : b->value.data()) v = is_var ? var(rng) : d(rng);
  }
}

// Eval-mode layer references built on the loop convolution.
inline Tensor ref_bn(const lkaseg::BatchNorm2d& bn, const Tensor& x, bool relu) {
  Tensor y(x.shape());
  const lkaseg::Shape s = x.shape();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const auto i = static_cast<std::size_t>(c);
      const double scale = bn.gamma().value[i] / std::sqrt(bn.running_var().value[i] + 1e-5);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const double v = (x.at(n, c, h, w) - bn.running_mean().value[i]) * scale + bn.beta().value[i];
          y.at(n, c, h, w) = relu ? std::max(0.0, v) : v;
        }
    }
  return y;
}

inline Tensor ref_conv(const lkaseg::Conv2d& conv, const Tensor& x) {
  const lkaseg::ConvSpec& s = conv.spec();
  const Tensor* b = conv.bias() ? &conv.bias()->value : nullptr;
  return reference_conv(x, conv.weight().value, b, s.stride.h, s.stride.w, s.padding.h, s.padding.w,
                        s.dilation.h, s.dilation.w, s.groups);
}

inline Tensor ref_nrc(const lkaseg::NormReluConv& m, const Tensor& x) {
  return ref_conv(m.conv, ref_bn(m.bn, x, true));
}

}  // namespace testing
