#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lkaseg/graph.hpp"

namespace lkaseg {

inline constexpr int kIgnoreIndex = 255;

struct OhemConfig {
  /// Pixels whose true-class probability is below this are kept.
  double threshold = 0.7;
  /// Floor on the kept set; clamped to the number of scored pixels.
  std::int64_t min_kept = 1;
};

/// Mean negative log-softmax of the true class over pixels with keep[p] != 0.
/// logits (n, K, h, w); labels and keep have n*h*w entries. An empty kept set
/// yields a zero loss with zero gradients.
Var masked_cross_entropy(Var logits, std::span<const std::int32_t> labels,
                         std::span<const std::uint8_t> keep);

Var cross_entropy(Var logits, std::span<const std::int32_t> labels,
                  int ignore_index = kIgnoreIndex);

/// Hard-pixel selection used by ohem_cross_entropy, exposed for inspection.
std::vector<std::uint8_t> ohem_select(const Tensor& logits, std::span<const std::int32_t> labels,
                                      const OhemConfig& cfg, int ignore_index = kIgnoreIndex);

Var ohem_cross_entropy(Var logits, std::span<const std::int32_t> labels, const OhemConfig& cfg,
                       int ignore_index = kIgnoreIndex);

/// Class-balanced binary cross-entropy on logits (n, 1, h, w): the mean loss
/// over positive pixels and the mean over negative pixels are averaged, each
/// term only when that class is present.
Var boundary_bce(Var logits, std::span<const std::uint8_t> mask);

}  // namespace lkaseg
