#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lkaseg/netpbm.hpp"
#include "lkaseg/tensor.hpp"

namespace lkaseg {

/// A stack of images with their dense labels and boundary targets.
struct SegBatch {
  Tensor images;                       // (n, 3, h, w), values in [0, 1]
  std::vector<std::int32_t> labels;    // n * h * w
  std::vector<std::uint8_t> boundary;  // n * h * w, binary

  int count() const { return images.shape().n; }
  int height() const { return images.shape().h; }
  int width() const { return images.shape().w; }
};

struct SynthSpec {
  std::uint64_t seed = 0;
  int count = 64;
  int height = 64;
  int width = 64;
  int class_count = 5;
  /// Foreground shapes painted per image.
  int density = 4;
  /// Smallest rectangle side / circle diameter in pixels.
  int min_shape_size = 14;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Deterministic scenes, one single-image SegBatch per entry.
std::vector<SegBatch> synth_dataset(const SynthSpec& spec, int boundary_radius = 2);

/// 1 where some pixel within Chebyshev distance `radius` carries a different
/// label; ignored labels neither mark nor get marked.
std::vector<std::uint8_t> boundary_from_labels(std::span<const std::int32_t> labels, int height,
                                               int width, int radius, int ignore_index = 255);

/// Concatenates single-image batches (all the same size).
SegBatch stack(std::span<const SegBatch* const> items);

LabelMap label_map(const SegBatch& item, int index = 0);

/// Directory layout: img_%05d.ppm, lbl_%05d.pgm, manifest.txt.
void write_dataset(const std::filesystem::path& dir, const SynthSpec& spec,
                   const std::vector<SegBatch>& items);
struct Dataset {
  int class_count = 0;
  std::vector<SegBatch> items;
};
/// Throws IoError if the directory or manifest is missing or malformed.
Dataset read_dataset(const std::filesystem::path& dir, int boundary_radius = 2);

}  // namespace lkaseg
