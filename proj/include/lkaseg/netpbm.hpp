#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lkaseg/tensor.hpp"

namespace lkaseg {

/// Integer label image, row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> values;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Binary P6 (RGB) and P5 (gray) with maxval 255. Images are (1, 3, h, w)
// tensors in [0, 1]; writing rounds half up after scaling by 255.
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(std::string_view bytes);
std::string encode_pgm(const LabelMap& labels);
LabelMap decode_pgm(std::string_view bytes);

Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lkaseg
