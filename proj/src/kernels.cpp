#include "lkaseg/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lkaseg/errors.hpp"
#include "lkaseg/instrument.hpp"

namespace lkaseg {
namespace {

// Output positions [lo, hi) for which o * stride + offset lands inside [0, extent).
void valid_range(int extent, int out, int stride, int offset, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = extent - 1 - offset;
  hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (lo > hi) lo = hi;
}

std::string axis_name(int axis) {
  static const std::array<const char*, 4> names{"batch", "channel", "height", "width"};
  return names[static_cast<std::size_t>(axis)];
}

std::array<int, 4> dims(Shape s) { return {s.n, s.c, s.h, s.w}; }

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == Hw{1, 1} && s.stride == Hw{1, 1} && s.padding == Hw{0, 0};
}

void check_conv_shapes(const Shape& in, const Shape& ws, const Tensor* bias, const ConvSpec& spec) {
  spec.validate();
  const int g = spec.groups;
  if (in.c % g != 0) {
    throw ShapeError("conv2d: input channel axis (" + std::to_string(in.c) +
                     ") not divisible by groups " + std::to_string(g));
  }
  if (ws.n % g != 0) {
    throw ShapeError("conv2d: weight output-channel axis (" + std::to_string(ws.n) +
                     ") not divisible by groups " + std::to_string(g));
  }
  if (ws.c != in.c / g) {
    throw ShapeError("conv2d: weight input-channel axis is " + std::to_string(ws.c) +
                     ", expected input channels / groups = " + std::to_string(in.c / g));
  }
  if (ws.h != spec.kernel.h) {
    throw ShapeError("conv2d: weight height axis is " + std::to_string(ws.h) +
                     ", spec kernel height is " + std::to_string(spec.kernel.h));
  }
  if (ws.w != spec.kernel.w) {
    throw ShapeError("conv2d: weight width axis is " + std::to_string(ws.w) +
                     ", spec kernel width is " + std::to_string(spec.kernel.w));
  }
  if (bias != nullptr && bias->size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias->size()) +
                     " does not match output channels " + std::to_string(ws.n));
  }
}

}  // namespace

ConvSpec ConvSpec::square(int k, int stride, int padding, int dilation, int groups) {
  ConvSpec s;
  s.kernel = {k, k};
  s.stride = {stride, stride};
  s.padding = {padding, padding};
  s.dilation = {dilation, dilation};
  s.groups = groups;
  return s;
}

void ConvSpec::validate() const {
  if (kernel.h < 1 || kernel.w < 1) throw ShapeError("ConvSpec: kernel extents must be >= 1");
  if (stride.h < 1 || stride.w < 1) throw ShapeError("ConvSpec: stride must be >= 1");
  if (dilation.h < 1 || dilation.w < 1) throw ShapeError("ConvSpec: dilation must be >= 1");
  if (padding.h < 0 || padding.w < 0) throw ShapeError("ConvSpec: padding must be >= 0");
  if (groups < 1) throw ShapeError("ConvSpec: groups must be >= 1");
}

Shape ConvSpec::output_shape(Shape in, int c_out) const {
  validate();
  const int span_h = in.h + 2 * padding.h - extent_h();
  const int span_w = in.w + 2 * padding.w - extent_w();
  if (span_h < 0) {
    throw ShapeError("conv2d: height axis " + std::to_string(in.h) +
                     " too small for kernel extent " + std::to_string(extent_h()));
  }
  if (span_w < 0) {
    throw ShapeError("conv2d: width axis " + std::to_string(in.w) +
                     " too small for kernel extent " + std::to_string(extent_w()));
  }
  return {in.n, c_out, span_h / stride.h + 1, span_w / stride.w + 1};
}

Shape PoolSpec::output_shape(Shape in) const {
  if (kernel.h < 1 || kernel.w < 1 || stride.h < 1 || stride.w < 1 || padding.h < 0 ||
      padding.w < 0) {
    throw ShapeError("avg_pool: invalid window geometry");
  }
  const int span_h = in.h + 2 * padding.h - kernel.h;
  const int span_w = in.w + 2 * padding.w - kernel.w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel.h) + "x" +
                     std::to_string(kernel.w) + " larger than padded input " + in.str());
  }
  return {in.n, in.c, span_h / stride.h + 1, span_w / stride.w + 1};
}

// ---------------------------------------------------------------------------
// convolution

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const Shape in = x.shape();
  const Shape ws = weight.shape();
  check_conv_shapes(in, ws, bias, spec);
  const Shape out = spec.output_shape(in, ws.n);
  Tensor y(out);

  const int g = spec.groups;
  const int cin_g = in.c / g;
  const int cout_g = ws.n / g;
  const int kh = spec.kernel.h, kw = spec.kernel.w;
  const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
  const std::size_t out_plane = static_cast<std::size_t>(out.h) * out.w;
  const bool pointwise = is_pointwise(spec);

  for (int n = 0; n < in.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      const int grp = oc / cout_g;
      double* yp = y.ptr() + (static_cast<std::size_t>(n) * out.c + oc) * out_plane;
      if (bias != nullptr) std::fill(yp, yp + out_plane, (*bias)[static_cast<std::size_t>(oc)]);
      for (int icg = 0; icg < cin_g; ++icg) {
        const int ic = grp * cin_g + icg;
        const double* xp = x.ptr() + (static_cast<std::size_t>(n) * in.c + ic) * in_plane;
        const double* wp = weight.ptr() + (static_cast<std::size_t>(oc) * cin_g + icg) * kh * kw;
        if (pointwise) {
          const double wv = wp[0];
          for (std::size_t i = 0; i < out_plane; ++i) yp[i] += wv * xp[i];
          continue;
        }
        for (int ky = 0; ky < kh; ++ky) {
          int oy_lo, oy_hi;
          const int off_y = ky * spec.dilation.h - spec.padding.h;
          valid_range(in.h, out.h, spec.stride.h, off_y, oy_lo, oy_hi);
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wp[ky * kw + kx];
            int ox_lo, ox_hi;
            const int off_x = kx * spec.dilation.w - spec.padding.w;
            valid_range(in.w, out.w, spec.stride.w, off_x, ox_lo, ox_hi);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const double* xrow = xp + static_cast<std::size_t>(oy * spec.stride.h + off_y) * in.w;
              double* yrow = yp + static_cast<std::size_t>(oy) * out.w;
              if (spec.stride.w == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox + off_x];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  yrow[ox] += wv * xrow[ox * spec.stride.w + off_x];
                }
              }
            }
          }
        }
      }
    }
  }

  const std::int64_t outputs = static_cast<std::int64_t>(out.numel());
  instrument::add_flops(2LL * kh * kw * cin_g * outputs + (bias != nullptr ? outputs : 0));
  return y;
}

Tensor depthwise(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  if (spec.groups != x.shape().c) {
    throw ShapeError("depthwise: groups (" + std::to_string(spec.groups) +
                     ") must equal the channel axis (" + std::to_string(x.shape().c) + ")");
  }
  return conv2d(x, weight, bias, spec);
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                     const Tensor& grad_out, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
  const Shape in = x.shape();
  const Shape ws = weight.shape();
  const Shape out = grad_out.shape();
  const int g = spec.groups;
  const int cin_g = in.c / g;
  const int cout_g = ws.n / g;
  const int kh = spec.kernel.h, kw = spec.kernel.w;
  const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
  const std::size_t out_plane = static_cast<std::size_t>(out.h) * out.w;
  const bool pointwise = is_pointwise(spec);

  for (int n = 0; n < in.n; ++n) {
    for (int oc = 0; oc < ws.n; ++oc) {
      const int grp = oc / cout_g;
      const double* gyp = grad_out.ptr() + (static_cast<std::size_t>(n) * out.c + oc) * out_plane;
      if (grad_b != nullptr) {
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += gyp[i];
        (*grad_b)[static_cast<std::size_t>(oc)] += s;
      }
      for (int icg = 0; icg < cin_g; ++icg) {
        const int ic = grp * cin_g + icg;
        const std::size_t xoff = (static_cast<std::size_t>(n) * in.c + ic) * in_plane;
        const double* xp = x.ptr() + xoff;
        double* gxp = grad_x != nullptr ? grad_x->ptr() + xoff : nullptr;
        const std::size_t woff = (static_cast<std::size_t>(oc) * cin_g + icg) * kh * kw;
        const double* wp = weight.ptr() + woff;
        double* gwp = grad_w != nullptr ? grad_w->ptr() + woff : nullptr;
        if (pointwise) {
          if (gxp != nullptr) {
            const double wv = wp[0];
            for (std::size_t i = 0; i < out_plane; ++i) gxp[i] += wv * gyp[i];
          }
          if (gwp != nullptr) {
            double acc = 0.0;
            for (std::size_t i = 0; i < out_plane; ++i) acc += gyp[i] * xp[i];
            gwp[0] += acc;
          }
          continue;
        }
        for (int ky = 0; ky < kh; ++ky) {
          int oy_lo, oy_hi;
          const int off_y = ky * spec.dilation.h - spec.padding.h;
          valid_range(in.h, out.h, spec.stride.h, off_y, oy_lo, oy_hi);
          for (int kx = 0; kx < kw; ++kx) {
            const double wv = wp[ky * kw + kx];
            int ox_lo, ox_hi;
            const int off_x = kx * spec.dilation.w - spec.padding.w;
            valid_range(in.w, out.w, spec.stride.w, off_x, ox_lo, ox_hi);
            double acc = 0.0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const std::size_t row = static_cast<std::size_t>(oy * spec.stride.h + off_y) * in.w;
              const double* gyrow = gyp + static_cast<std::size_t>(oy) * out.w;
              const double* xrow = xp + row;
              if (gxp != nullptr) {
                double* gxrow = gxp + row;
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  gxrow[ox * spec.stride.w + off_x] += wv * gyrow[ox];
                }
              }
              if (gwp != nullptr) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  acc += gyrow[ox] * xrow[ox * spec.stride.w + off_x];
                }
              }
            }
            if (gwp != nullptr) gwp[ky * kw + kx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// pooling

Tensor avg_pool(const Tensor& x, const PoolSpec& spec) {
  const Shape in = x.shape();
  const Shape out = spec.output_shape(in);
  Tensor y(out);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < out.h; ++oy) {
        const int y0 = std::max(oy * spec.stride.h - spec.padding.h, 0);
        const int y1 = std::min(oy * spec.stride.h - spec.padding.h + spec.kernel.h, in.h);
        for (int ox = 0; ox < out.w; ++ox) {
          const int x0 = std::max(ox * spec.stride.w - spec.padding.w, 0);
          const int x1 = std::min(ox * spec.stride.w - spec.padding.w + spec.kernel.w, in.w);
          double s = 0.0;
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) s += x.at(n, c, iy, ix);
          }
          const int count = (y1 - y0) * (x1 - x0);
          y.at(n, c, oy, ox) = count > 0 ? s / count : 0.0;
        }
      }
    }
  }
  instrument::add_flops(static_cast<std::int64_t>(out.numel()) * spec.kernel.h * spec.kernel.w);
  return y;
}

void avg_pool_backward(const PoolSpec& spec, const Tensor& grad_out, Tensor& grad_x) {
  const Shape in = grad_x.shape();
  const Shape out = grad_out.shape();
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < out.h; ++oy) {
        const int y0 = std::max(oy * spec.stride.h - spec.padding.h, 0);
        const int y1 = std::min(oy * spec.stride.h - spec.padding.h + spec.kernel.h, in.h);
        for (int ox = 0; ox < out.w; ++ox) {
          const int x0 = std::max(ox * spec.stride.w - spec.padding.w, 0);
          const int x1 = std::min(ox * spec.stride.w - spec.padding.w + spec.kernel.w, in.w);
          const int count = (y1 - y0) * (x1 - x0);
          if (count == 0) continue;
          const double share = grad_out.at(n, c, oy, ox) / count;
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) grad_x.at(n, c, iy, ix) += share;
          }
        }
      }
    }
  }
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape in = x.shape();
  if (in.h < 1 || in.w < 1) throw ShapeError("global_avg_pool: empty spatial extent " + in.str());
  Tensor y({in.n, in.c, 1, 1});
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (std::size_t p = 0; p < y.size(); ++p) {
    const double* xp = x.ptr() + p * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xp[i];
    y[p] = s / static_cast<double>(plane);
  }
  instrument::add_flops(static_cast<std::int64_t>(in.numel()));
  return y;
}

void global_avg_pool_backward(const Tensor& grad_out, Tensor& grad_x) {
  const Shape in = grad_x.shape();
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    const double share = grad_out[p] / static_cast<double>(plane);
    double* gp = grad_x.ptr() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) gp[i] += share;
  }
}

// ---------------------------------------------------------------------------
// batch normalisation

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, NormMode mode, double momentum, double eps,
                  BatchNormCache* cache) {
  const Shape s = x.shape();
  const auto channels = static_cast<std::size_t>(s.c);
  if (gamma.size() != channels || beta.size() != channels || running_mean.size() != channels ||
      running_var.size() != channels) {
    throw ShapeError("batch_norm: channel axis has " + std::to_string(s.c) +
                     " entries but affine/statistics vectors have " + std::to_string(gamma.size()));
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t count = plane * static_cast<std::size_t>(s.n);
  std::vector<double> mean(channels), inv_std(channels);

  if (mode == NormMode::kTrain) {
    if (count == 0) throw ShapeError("batch_norm: empty batch");
    for (int c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (xp[i] - mu) * (xp[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor y(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      const double scale = gamma[c] * inv_std[c];
      const double shift = beta[c] - mean[c] * scale;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
  if (cache != nullptr) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  instrument::add_flops(2 * static_cast<std::int64_t>(s.numel()));
  return y;
}

void batch_norm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                         const Tensor& grad_out, Tensor* grad_x, Tensor* grad_gamma,
                         Tensor* grad_beta) {
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const double count = static_cast<double>(plane) * s.n;
  for (int c = 0; c < s.c; ++c) {
    const double mu = cache.mean[c];
    const double is = cache.inv_std[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = grad_out[off + i];
        sum_dy += dy;
        sum_dy_xhat += dy * (x[off + i] - mu) * is;
      }
    }
    if (grad_gamma != nullptr) (*grad_gamma)[c] += sum_dy_xhat;
    if (grad_beta != nullptr) (*grad_beta)[c] += sum_dy;
    if (grad_x == nullptr) continue;
    const double gscale = gamma[c] * is;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = grad_out[off + i];
        if (cache.mode == NormMode::kTrain) {
          const double xhat = (x[off + i] - mu) * is;
          (*grad_x)[off + i] += gscale * (dy - sum_dy / count - xhat * sum_dy_xhat / count);
        } else {
          (*grad_x)[off + i] += gscale * dy;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// activations

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

template <typename F>
Tensor map_elements(const Tensor& x, F f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  instrument::add_flops(static_cast<std::int64_t>(x.size()));
  return y;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return map_elements(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor gelu(const Tensor& x) { return map_elements(x, gelu_scalar); }
Tensor sigmoid(const Tensor& x) { return map_elements(x, sigmoid_scalar); }

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis > 3) throw ShapeError("softmax: axis must be in [0, 3]");
  const auto d = dims(x.shape());
  std::size_t inner = 1;
  for (int i = axis + 1; i < 4; ++i) inner *= static_cast<std::size_t>(d[i]);
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(d[i]);
  const auto len = static_cast<std::size_t>(d[axis]);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= sum;
    }
  }
  instrument::add_flops(static_cast<std::int64_t>(x.size()));
  return y;
}

void softmax_backward(const Tensor& y, int axis, const Tensor& grad_out, Tensor& grad_x) {
  const auto d = dims(y.shape());
  std::size_t inner = 1;
  for (int i = axis + 1; i < 4; ++i) inner *= static_cast<std::size_t>(d[i]);
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(d[i]);
  const auto len = static_cast<std::size_t>(d[axis]);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += grad_out[base + k * inner] * y[base + k * inner];
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = base + k * inner;
        grad_x[i] += y[i] * (grad_out[i] - dot);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// resampling

namespace {

struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

Taps half_pixel_taps(int in, int out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const int lo = std::min(static_cast<int>(src), in - 1);
    t.lo[o] = lo;
    t.hi[o] = std::min(lo + 1, in - 1);
    t.frac[o] = src - lo;
  }
  return t;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners) {
  if (align_corners) {
    throw std::invalid_argument("bilinear_resize: only align_corners=false is supported");
  }
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const Shape in = x.shape();
  const Taps ty = half_pixel_taps(in.h, out_h);
  const Taps tx = half_pixel_taps(in.w, out_w);
  Tensor y({in.n, in.c, out_h, out_w});
  const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t p = 0; p < static_cast<std::size_t>(in.n) * in.c; ++p) {
    const double* xp = x.ptr() + p * in_plane;
    double* yp = y.ptr() + p * out_plane;
    for (int oy = 0; oy < out_h; ++oy) {
      const double* r0 = xp + static_cast<std::size_t>(ty.lo[oy]) * in.w;
      const double* r1 = xp + static_cast<std::size_t>(ty.hi[oy]) * in.w;
      const double fy = ty.frac[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const double fx = tx.frac[ox];
        const double top = (1.0 - fx) * r0[tx.lo[ox]] + fx * r0[tx.hi[ox]];
        const double bot = (1.0 - fx) * r1[tx.lo[ox]] + fx * r1[tx.hi[ox]];
        yp[static_cast<std::size_t>(oy) * out_w + ox] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  instrument::add_flops(4 * static_cast<std::int64_t>(y.size()));
  return y;
}

void bilinear_resize_backward(const Tensor& grad_out, Tensor& grad_x) {
  const Shape in = grad_x.shape();
  const Shape out = grad_out.shape();
  const Taps ty = half_pixel_taps(in.h, out.h);
  const Taps tx = half_pixel_taps(in.w, out.w);
  const std::size_t in_plane = static_cast<std::size_t>(in.h) * in.w;
  const std::size_t out_plane = static_cast<std::size_t>(out.h) * out.w;
  for (std::size_t p = 0; p < static_cast<std::size_t>(in.n) * in.c; ++p) {
    double* gx = grad_x.ptr() + p * in_plane;
    const double* gy = grad_out.ptr() + p * out_plane;
    for (int oy = 0; oy < out.h; ++oy) {
      double* r0 = gx + static_cast<std::size_t>(ty.lo[oy]) * in.w;
      double* r1 = gx + static_cast<std::size_t>(ty.hi[oy]) * in.w;
      const double fy = ty.frac[oy];
      for (int ox = 0; ox < out.w; ++ox) {
        const double g = gy[static_cast<std::size_t>(oy) * out.w + ox];
        const double fx = tx.frac[ox];
        r0[tx.lo[ox]] += g * (1.0 - fy) * (1.0 - fx);
        r0[tx.hi[ox]] += g * (1.0 - fy) * fx;
        r1[tx.lo[ox]] += g * fy * (1.0 - fx);
        r1[tx.hi[ox]] += g * fy * fx;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// channel reductions

Tensor channel_mean(const Tensor& x) {
  const Shape s = x.shape();
  Tensor y({s.n, 1, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    double* yp = y.ptr() + static_cast<std::size_t>(n) * plane;
    for (int c = 0; c < s.c; ++c) {
      const double* xp = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) yp[i] += xp[i];
    }
    for (std::size_t i = 0; i < plane; ++i) yp[i] /= s.c;
  }
  instrument::add_flops(static_cast<std::int64_t>(s.numel()));
  return y;
}

Tensor channel_max(const Tensor& x, std::vector<int>* argmax) {
  const Shape s = x.shape();
  if (s.c < 1) throw ShapeError("channel_max: empty channel axis");
  Tensor y({s.n, 1, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  if (argmax != nullptr) argmax->assign(y.size(), 0);
  for (int n = 0; n < s.n; ++n) {
    double* yp = y.ptr() + static_cast<std::size_t>(n) * plane;
    const double* x0 = x.ptr() + static_cast<std::size_t>(n) * s.c * plane;
    std::copy(x0, x0 + plane, yp);
    for (int c = 1; c < s.c; ++c) {
      const double* xp = x0 + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (xp[i] > yp[i]) {
          yp[i] = xp[i];
          if (argmax != nullptr) (*argmax)[n * plane + i] = c;
        }
      }
    }
  }
  instrument::add_flops(static_cast<std::int64_t>(s.numel()));
  return y;
}

// ---------------------------------------------------------------------------
// broadcasting arithmetic

Shape broadcast_shape(Shape a, Shape b) {
  const auto da = dims(a), db = dims(b);
  std::array<int, 4> r{};
  for (int i = 0; i < 4; ++i) {
    if (da[i] == db[i] || db[i] == 1) {
      r[i] = da[i];
    } else if (da[i] == 1) {
      r[i] = db[i];
    } else {
      throw ShapeError("broadcast: " + axis_name(i) + " axis mismatch, " + a.str() + " vs " +
                       b.str());
    }
  }
  return {r[0], r[1], r[2], r[3]};
}

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  Tensor y(out);
  auto apply = [op](double u, double v) {
    switch (op) {
      case BinaryOp::kAdd: return u + v;
      case BinaryOp::kSub: return u - v;
      case BinaryOp::kMul: return u * v;
    }
    return 0.0;
  };
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = apply(a[i], b[i]);
  } else {
    const auto da = dims(a.shape()), db = dims(b.shape());
    for (int n = 0; n < out.n; ++n) {
      for (int c = 0; c < out.c; ++c) {
        for (int h = 0; h < out.h; ++h) {
          for (int w = 0; w < out.w; ++w) {
            const double u = a.at(da[0] == 1 ? 0 : n, da[1] == 1 ? 0 : c, da[2] == 1 ? 0 : h,
                                  da[3] == 1 ? 0 : w);
            const double v = b.at(db[0] == 1 ? 0 : n, db[1] == 1 ? 0 : c, db[2] == 1 ? 0 : h,
                                  db[3] == 1 ? 0 : w);
            y.at(n, c, h, w) = apply(u, v);
          }
        }
      }
    }
  }
  instrument::add_flops(static_cast<std::int64_t>(y.size()));
  return y;
}

Tensor reduce_to(const Tensor& grad, Shape target) {
  if (grad.shape() == target) return grad;
  const auto dt = dims(target);
  Tensor r(target);
  const Shape g = grad.shape();
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.c; ++c) {
      for (int h = 0; h < g.h; ++h) {
        for (int w = 0; w < g.w; ++w) {
          r.at(dt[0] == 1 ? 0 : n, dt[1] == 1 ? 0 : c, dt[2] == 1 ? 0 : h, dt[3] == 1 ? 0 : w) +=
              grad.at(n, c, h, w);
        }
      }
    }
  }
  return r;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape out = parts.front()->shape();
  out.c = 0;
  for (const Tensor* p : parts) {
    const Shape s = p->shape();
    if (s.n != out.n || s.h != out.h || s.w != out.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match batch/spatial extents of " +
                       parts.front()->shape().str());
    }
    out.c += s.c;
  }
  Tensor y(out);
  const std::size_t plane = static_cast<std::size_t>(out.h) * out.w;
  for (int n = 0; n < out.n; ++n) {
    double* dst = y.ptr() + static_cast<std::size_t>(n) * out.c * plane;
    for (const Tensor* p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p->shape().c) * plane;
      const double* src = p->ptr() + static_cast<std::size_t>(n) * chunk;
      dst = std::copy(src, src + chunk, dst);
    }
  }
  return y;
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside channel axis of " + s.str());
  }
  Tensor y({s.n, count, s.h, s.w});
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
    std::copy(src, src + count * plane, y.ptr() + static_cast<std::size_t>(n) * count * plane);
  }
  return y;
}

}  // namespace lkaseg
