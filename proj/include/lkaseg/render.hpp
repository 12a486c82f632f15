#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lkaseg/netpbm.hpp"
#include "lkaseg/tensor.hpp"

namespace lkaseg {

using Rgb = std::array<std::uint8_t, 3>;

/// 19 mutually distinct colours.
const std::vector<Rgb>& default_palette();

/// (1, 3, h, w) image in [0, 1]. Throws if a label has no palette entry.
Tensor colorize(const LabelMap& labels, const std::vector<Rgb>& palette = default_palette());

/// (1 - alpha) * image + alpha * colorize(labels).
Tensor render_overlay(const Tensor& image, const LabelMap& labels, double alpha,
                      const std::vector<Rgb>& palette = default_palette());

}  // namespace lkaseg
