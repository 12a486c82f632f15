#include "lkaseg/render.hpp"

#include <stdexcept>
#include <string>

#include "lkaseg/errors.hpp"

namespace lkaseg {

const std::vector<Rgb>& default_palette() {
  static const std::vector<Rgb> palette{
      {0, 0, 0},       {220, 20, 60},   {250, 170, 30}, {0, 0, 142},     {107, 142, 35},
      {70, 130, 180},  {244, 35, 232},  {152, 251, 152}, {102, 102, 156}, {190, 153, 153},
      {153, 153, 153}, {220, 220, 0},   {128, 64, 128}, {70, 70, 70},    {255, 0, 0},
      {0, 0, 70},      {0, 60, 100},    {0, 80, 100},   {119, 11, 32},
  };
  return palette;
}

Tensor colorize(const LabelMap& labels, const std::vector<Rgb>& palette) {
  Tensor out({1, 3, labels.height, labels.width});
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const std::int32_t l = labels.values[static_cast<std::size_t>(y) * labels.width + x];
      if (l < 0 || static_cast<std::size_t>(l) >= palette.size()) {
        throw std::out_of_range("colorize: label " + std::to_string(l) + " has no palette entry (palette size " +
                                std::to_string(palette.size()) + ")");
      }
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = palette[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)] / 255.0;
    }
  }
  return out;
}

Tensor render_overlay(const Tensor& image, const LabelMap& labels, double alpha,
                      const std::vector<Rgb>& palette) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3 || s.h != labels.height || s.w != labels.width) {
    throw ShapeError("render_overlay: image " + s.str() + " does not match labels " +
                     std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("render_overlay: alpha must lie in [0, 1]");
  const Tensor colors = colorize(labels, palette);
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - alpha) * image[i] + alpha * colors[i];
  return out;
}

}  // namespace lkaseg
