#include "lkaseg/netpbm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lkaseg/errors.hpp"

namespace lkaseg {
namespace {

struct Header {
  int width = 0;
  int height = 0;
  std::size_t payload = 0;  // offset of the first raster byte
};

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, std::string_view magic) : bytes_(bytes) {
    if (bytes.substr(0, 2) != magic) {
      throw IoError("netpbm: expected magic " + std::string(magic));
    }
    pos_ = 2;
  }

  int next_int(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      throw IoError(std::string("netpbm: malformed header, missing ") + field);
    }
    long long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000) throw IoError(std::string("netpbm: ") + field + " too large");
    }
    return static_cast<int>(v);
  }

  std::size_t end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw IoError("netpbm: malformed header, no separator before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Header parse_header(std::string_view bytes, std::string_view magic, int channels) {
  HeaderReader r(bytes, magic);
  Header h;
  h.width = r.next_int("width");
  h.height = r.next_int("height");
  const int maxval = r.next_int("maxval");
  if (h.width <= 0 || h.height <= 0) throw IoError("netpbm: zero image dimension");
  if (maxval != 255) throw IoError("netpbm: maxval " + std::to_string(maxval) + " unsupported, need 255");
  h.payload = r.end_of_header();
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * channels;
  if (bytes.size() - h.payload < need) {
    throw IoError("netpbm: truncated raster, " + std::to_string(bytes.size() - h.payload) +
                  " of " + std::to_string(need) + " bytes");
  }
  return h;
}

std::uint8_t quantise(double v) {
  if (std::isnan(v)) throw NumericalError("encode_ppm: NaN pixel");
  const double q = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

}  // namespace

std::string encode_ppm(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("encode_ppm: need (1, 3, h, w), got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(3) * s.h * s.w);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantise(image.at(0, c, y, x))));
    }
  }
  return out;
}

Tensor decode_ppm(std::string_view bytes) {
  const Header h = parse_header(bytes, "P6", 3);
  Tensor img({1, 3, h.height, h.width});
  std::size_t p = h.payload;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = static_cast<unsigned char>(bytes[p++]) / 255.0;
      }
    }
  }
  return img;
}

std::string encode_pgm(const LabelMap& labels) {
  if (labels.values.size() != static_cast<std::size_t>(labels.height) * labels.width) {
    throw ShapeError("encode_pgm: value count does not match dimensions");
  }
  std::string out =
      "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  for (std::int32_t v : labels.values) {
    if (v < 0 || v > 255) throw IoError("encode_pgm: label " + std::to_string(v) + " outside [0, 255]");
    out.push_back(static_cast<char>(v));
  }
  return out;
}

LabelMap decode_pgm(std::string_view bytes) {
  const Header h = parse_header(bytes, "P5", 1);
  LabelMap m{h.height, h.width, {}};
  m.values.resize(static_cast<std::size_t>(h.height) * h.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = static_cast<unsigned char>(bytes[h.payload + i]);
  }
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto " + path.string());
  }
}

Tensor read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  write_file_atomic(path, encode_ppm(image));
}

LabelMap read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  write_file_atomic(path, encode_pgm(labels));
}

}  // namespace lkaseg
