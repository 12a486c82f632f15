#include "lkaseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "lkaseg/errors.hpp"

namespace lkaseg {
namespace {

// Base colours, far apart in RGB so that noise never makes classes collide.
constexpr std::array<std::array<double, 3>, 16> kBaseColors{{
    {0.10, 0.10, 0.10}, {0.90, 0.15, 0.15}, {0.15, 0.80, 0.20}, {0.20, 0.30, 0.90},
    {0.95, 0.90, 0.20}, {0.85, 0.25, 0.85}, {0.20, 0.85, 0.85}, {0.95, 0.60, 0.15},
    {0.55, 0.35, 0.15}, {0.60, 0.60, 0.60}, {0.50, 0.90, 0.55}, {0.45, 0.15, 0.55},
    {0.95, 0.70, 0.75}, {0.15, 0.45, 0.40}, {0.70, 0.75, 0.95}, {0.40, 0.40, 0.05},
}};

std::string index_name(const char* prefix, int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d.%s", prefix, i, ext);
  return buf;
}

void paint_scene(std::mt19937_64& rng, const SynthSpec& spec, std::vector<std::int32_t>& lab) {
  const int h = spec.height, w = spec.width;
  const int lo = spec.min_shape_size;
  const int hi = std::max(lo, std::min(h, w) / 2);
  std::uniform_int_distribution<int> cls(1, spec.class_count - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> size(lo, hi);
  for (int s = 0; s < spec.density; ++s) {
    const int k = cls(rng);
    const double kind = unit(rng);
    if (kind < 0.45) {
      const int rh = size(rng), rw = size(rng);
      const int y0 = std::uniform_int_distribution<int>(0, h - rh)(rng);
      const int x0 = std::uniform_int_distribution<int>(0, w - rw)(rng);
      for (int y = y0; y < y0 + rh; ++y) {
        for (int x = x0; x < x0 + rw; ++x) lab[static_cast<std::size_t>(y) * w + x] = k;
      }
    } else if (kind < 0.9) {
      const double r = size(rng) / 2.0;
      const double cy = std::uniform_real_distribution<double>(r, h - r)(rng);
      const double cx = std::uniform_real_distribution<double>(r, w - r)(rng);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          if (dy * dy + dx * dx <= r * r) lab[static_cast<std::size_t>(y) * w + x] = k;
        }
      }
    } else {
      // 2-pixel-wide strip spanning at least half the image.
      const bool vertical = unit(rng) < 0.5;
      const int len_max = vertical ? h : w;
      const int len = std::uniform_int_distribution<int>(len_max / 2, len_max)(rng);
      const int start = std::uniform_int_distribution<int>(0, len_max - len)(rng);
      const int across = std::uniform_int_distribution<int>(0, (vertical ? w : h) - 2)(rng);
      for (int t = start; t < start + len; ++t) {
        for (int d = 0; d < 2; ++d) {
          const int y = vertical ? t : across + d;
          const int x = vertical ? across + d : t;
          lab[static_cast<std::size_t>(y) * w + x] = k;
        }
      }
    }
  }
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (count < 1) fail("count", "must be at least 1");
  if (height < 64 || height % 64 != 0) fail("height", "must be a positive multiple of 64");
  if (width < 64 || width % 64 != 0) fail("width", "must be a positive multiple of 64");
  if (class_count < 2 || class_count > 16) fail("class_count", "must lie in [2, 16]");
  if (density < 0) fail("density", "must be non-negative");
  if (min_shape_size < 2 || min_shape_size > std::min(height, width)) {
    fail("min_shape_size", "must lie in [2, min(height, width)]");
  }
}

std::vector<SegBatch> synth_dataset(const SynthSpec& spec, int boundary_radius) {
  spec.validate();
  const int h = spec.height, w = spec.width;
  std::vector<SegBatch> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    SegBatch b;
    b.labels.assign(static_cast<std::size_t>(h) * w, 0);
    paint_scene(rng, spec, b.labels);
    b.images = Tensor({1, 3, h, w});
    std::normal_distribution<double> noise(0.0, 0.05);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto& base = kBaseColors[static_cast<std::size_t>(b.labels[static_cast<std::size_t>(y) * w + x])];
        for (int c = 0; c < 3; ++c) {
          b.images.at(0, c, y, x) = std::clamp(base[static_cast<std::size_t>(c)] + noise(rng), 0.0, 1.0);
        }
      }
    }
    b.boundary = boundary_from_labels(b.labels, h, w, boundary_radius);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<std::uint8_t> boundary_from_labels(std::span<const std::int32_t> labels, int height,
                                               int width, int radius, int ignore_index) {
  if (labels.size() % (static_cast<std::size_t>(height) * width) != 0) {
    throw ShapeError("boundary_from_labels: label count is not a multiple of height * width");
  }
  if (radius < 1) throw std::invalid_argument("boundary_from_labels: radius must be >= 1");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<std::uint8_t> mask(labels.size(), 0);
  for (std::size_t base = 0; base < labels.size(); base += plane) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::int32_t l = labels[base + static_cast<std::size_t>(y) * width + x];
        if (l == ignore_index) continue;
        bool edge = false;
        for (int dy = -radius; dy <= radius && !edge; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= height) continue;
          for (int dx = -radius; dx <= radius; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= width) continue;
            const std::int32_t o = labels[base + static_cast<std::size_t>(yy) * width + xx];
            if (o != l && o != ignore_index) {
              edge = true;
              break;
            }
          }
        }
        mask[base + static_cast<std::size_t>(y) * width + x] = edge ? 1 : 0;
      }
    }
  }
  return mask;
}

SegBatch stack(std::span<const SegBatch* const> items) {
  if (items.empty()) throw std::invalid_argument("stack: no items");
  const Shape first = items.front()->images.shape();
  int n = 0;
  for (const SegBatch* b : items) {
    const Shape s = b->images.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("stack: image " + s.str() + " differs from " + first.str());
    }
    n += s.n;
  }
  SegBatch out;
  out.images = Tensor({n, first.c, first.h, first.w});
  std::size_t off = 0;
  for (const SegBatch* b : items) {
    std::copy(b->images.data().begin(), b->images.data().end(), out.images.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += b->images.size();
    out.labels.insert(out.labels.end(), b->labels.begin(), b->labels.end());
    out.boundary.insert(out.boundary.end(), b->boundary.begin(), b->boundary.end());
  }
  return out;
}

LabelMap label_map(const SegBatch& item, int index) {
  const std::size_t plane = static_cast<std::size_t>(item.height()) * item.width();
  const auto begin = item.labels.begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(index));
  return {item.height(), item.width(), std::vector<std::int32_t>(begin, begin + static_cast<std::ptrdiff_t>(plane))};
}

void write_dataset(const std::filesystem::path& dir, const SynthSpec& spec,
                   const std::vector<SegBatch>& items) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int idx = static_cast<int>(i);
    write_ppm(dir / index_name("img", idx, "ppm"), items[i].images);
    write_pgm(dir / index_name("lbl", idx, "pgm"), label_map(items[i]));
  }
  std::ostringstream m;
  m << "lkaseg-dataset 1\n"
    << "count " << items.size() << "\n"
    << "height " << spec.height << "\n"
    << "width " << spec.width << "\n"
    << "class_count " << spec.class_count << "\n"
    << "seed " << spec.seed << "\n"
    << "density " << spec.density << "\n"
    << "min_shape_size " << spec.min_shape_size << "\n";
  write_file_atomic(dir / "manifest.txt", m.str());
}

Dataset read_dataset(const std::filesystem::path& dir, int boundary_radius) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::istringstream in(read_file(dir / "manifest.txt"));
  std::string key;
  long long value = 0;
  int count = -1, class_count = -1, height = 0, width = 0;
  if (!(in >> key >> value) || key != "lkaseg-dataset" || value != 1) {
    throw IoError(dir.string() + "/manifest.txt: not a dataset manifest");
  }
  while (in >> key >> value) {
    if (key == "count") count = static_cast<int>(value);
    if (key == "class_count") class_count = static_cast<int>(value);
    if (key == "height") height = static_cast<int>(value);
    if (key == "width") width = static_cast<int>(value);
  }
  if (count < 1 || class_count < 2) throw IoError(dir.string() + "/manifest.txt: missing count or class_count");
  Dataset ds;
  ds.class_count = class_count;
  for (int i = 0; i < count; ++i) {
    SegBatch b;
    b.images = read_ppm(dir / index_name("img", i, "ppm"));
    const LabelMap lm = read_pgm(dir / index_name("lbl", i, "pgm"));
    if (lm.height != b.height() || lm.width != b.width() || lm.height != height || lm.width != width) {
      throw IoError(dir.string() + ": image/label size mismatch at index " + std::to_string(i));
    }
    for (std::int32_t v : lm.values) {
      if (v >= class_count && v != 255) {
        throw IoError(dir.string() + ": label " + std::to_string(v) + " >= class_count at index " + std::to_string(i));
      }
    }
    b.labels = lm.values;
    b.boundary = boundary_from_labels(b.labels, lm.height, lm.width, boundary_radius);
    ds.items.push_back(std::move(b));
  }
  return ds;
}

}  // namespace lkaseg
