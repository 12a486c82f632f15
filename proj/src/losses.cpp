#include "lkaseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lkaseg/errors.hpp"
#include "lkaseg/kernels.hpp"

namespace lkaseg {
namespace {

void check_labels(const Shape& s, std::span<const std::int32_t> labels, int ignore_index) {
  if (labels.size() != static_cast<std::size_t>(s.n) * s.h * s.w) {
    throw ShapeError("labels hold " + std::to_string(labels.size()) + " entries, logits " +
                     s.str() + " need " + std::to_string(static_cast<std::size_t>(s.n) * s.h * s.w));
  }
  for (std::int32_t l : labels) {
    if (l == ignore_index) continue;
    if (l < 0 || l >= s.c) {
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(s.c) + ") and not the ignore index");
    }
  }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

Var masked_cross_entropy(Var logits, std::span<const std::int32_t> labels,
                         std::span<const std::uint8_t> keep) {
  const Tensor& z = logits.value();
  const Shape s = z.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  if (keep.size() != labels.size() || labels.size() != plane * s.n) {
    throw ShapeError("masked_cross_entropy: label/keep length mismatch with logits " + s.str());
  }
  double total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t pix = static_cast<std::size_t>(n) * plane + p;
      if (keep[pix] == 0) continue;
      const double* base = z.ptr() + static_cast<std::size_t>(n) * s.c * plane + p;
      double mx = base[0];
      for (int k = 1; k < s.c; ++k) mx = std::max(mx, base[k * plane]);
      double se = 0.0;
      for (int k = 0; k < s.c; ++k) se += std::exp(base[k * plane] - mx);
      total += mx + std::log(se) - base[static_cast<std::size_t>(labels[pix]) * plane];
      ++count;
    }
  }
  const double loss = count > 0 ? total / static_cast<double>(count) : 0.0;
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> kp(keep.begin(), keep.end());
  return logits.graph->record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, lab = std::move(lab), kp = std::move(kp), count](Graph& g, const Tensor& gy) {
        if (count == 0) return;
        const Tensor& zv = g.value(logits.id);
        Tensor& gz = g.grad(logits.id);
        const Shape sh = zv.shape();
        const std::size_t pl = static_cast<std::size_t>(sh.h) * sh.w;
        const double scale = gy[0] / static_cast<double>(count);
        for (int n = 0; n < sh.n; ++n) {
          for (std::size_t p = 0; p < pl; ++p) {
            const std::size_t pix = static_cast<std::size_t>(n) * pl + p;
            if (kp[pix] == 0) continue;
            const std::size_t off = static_cast<std::size_t>(n) * sh.c * pl + p;
            double mx = zv[off];
            for (int k = 1; k < sh.c; ++k) mx = std::max(mx, zv[off + k * pl]);
            double se = 0.0;
            for (int k = 0; k < sh.c; ++k) se += std::exp(zv[off + k * pl] - mx);
            for (int k = 0; k < sh.c; ++k) {
              const double prob = std::exp(zv[off + k * pl] - mx) / se;
              gz[off + k * pl] += scale * (prob - (k == lab[pix] ? 1.0 : 0.0));
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const std::int32_t> labels, int ignore_index) {
  check_labels(logits.shape(), labels, ignore_index);
  std::vector<std::uint8_t> keep(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) keep[i] = labels[i] != ignore_index ? 1 : 0;
  return masked_cross_entropy(logits, labels, keep);
}

std::vector<std::uint8_t> ohem_select(const Tensor& logits, std::span<const std::int32_t> labels,
                                      const OhemConfig& cfg, int ignore_index) {
  const Shape s = logits.shape();
  check_labels(s, labels, ignore_index);
  if (!(cfg.threshold > 0.0 && cfg.threshold <= 1.0)) {
    throw std::invalid_argument("ohem: threshold must lie in (0, 1]");
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const Tensor prob = softmax(logits, 1);

  struct Scored {
    double p;
    std::size_t pix;
  };
  std::vector<Scored> scored;
  scored.reserve(labels.size());
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t pix = static_cast<std::size_t>(n) * plane + p;
      if (labels[pix] == ignore_index) continue;
      const std::size_t off =
          (static_cast<std::size_t>(n) * s.c + static_cast<std::size_t>(labels[pix])) * plane + p;
      scored.push_back({prob[off], pix});
    }
  }
  std::vector<std::uint8_t> keep(labels.size(), 0);
  const auto min_kept = static_cast<std::size_t>(
      std::clamp<std::int64_t>(cfg.min_kept, 0, static_cast<std::int64_t>(scored.size())));
  // A threshold of 1 keeps everything, including pixels whose probability
  // rounds to exactly 1.
  const auto hard = [&](const Scored& e) { return cfg.threshold >= 1.0 || e.p < cfg.threshold; };
  std::size_t below = 0;
  for (const Scored& e : scored) below += hard(e) ? 1 : 0;
  if (below >= min_kept) {
    for (const Scored& e : scored) {
      if (hard(e)) keep[e.pix] = 1;
    }
    return keep;
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& a, const Scored& b) { return a.p < b.p; });
  for (std::size_t i = 0; i < min_kept; ++i) keep[scored[i].pix] = 1;
  return keep;
}

Var ohem_cross_entropy(Var logits, std::span<const std::int32_t> labels, const OhemConfig& cfg,
                       int ignore_index) {
  const auto keep = ohem_select(logits.value(), labels, cfg, ignore_index);
  return masked_cross_entropy(logits, labels, keep);
}

Var boundary_bce(Var logits, std::span<const std::uint8_t> mask) {
  const Tensor& z = logits.value();
  if (z.shape().c != 1) throw ShapeError("boundary_bce: logits must have one channel");
  if (mask.size() != z.size()) {
    throw ShapeError("boundary_bce: mask has " + std::to_string(mask.size()) +
                     " entries, logits " + z.shape().str());
  }
  std::size_t pos = 0;
  for (std::uint8_t m : mask) {
    if (m > 1) throw std::invalid_argument("boundary_bce: mask must be binary");
    pos += m;
  }
  const std::size_t neg = mask.size() - pos;
  const int terms = (pos > 0 ? 1 : 0) + (neg > 0 ? 1 : 0);
  const double w_pos = pos > 0 ? 1.0 / (static_cast<double>(pos) * terms) : 0.0;
  const double w_neg = neg > 0 ? 1.0 / (static_cast<double>(neg) * terms) : 0.0;
  double pos_sum = 0.0, neg_sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (mask[i] != 0) {
      pos_sum += softplus(-z[i]);
    } else {
      neg_sum += softplus(z[i]);
    }
  }
  const double loss = w_pos * pos_sum + w_neg * neg_sum;
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return logits.graph->record(
      "boundary_bce", Tensor::scalar(loss), {logits},
      [logits, m = std::move(m), w_pos, w_neg](Graph& g, const Tensor& gy) {
        const Tensor& zv = g.value(logits.id);
        Tensor& gz = g.grad(logits.id);
        for (std::size_t i = 0; i < zv.size(); ++i) {
          const double sig = sigmoid_scalar(zv[i]);
          gz[i] += gy[0] * (m[i] != 0 ? w_pos * (sig - 1.0) : w_neg * sig);
        }
      });
}

}  // namespace lkaseg
