#include "lkaseg/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

#include "lkaseg/errors.hpp"
#include "lkaseg/netpbm.hpp"

namespace lkaseg {
namespace {

using Kind = CheckpointError::Kind;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(Kind::kFormat, std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in pieces.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::int64_t Checkpoint::param_scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : manifest) {
    if (e.trainable) n += static_cast<std::int64_t>(e.shape.numel());
  }
  return n;
}

Checkpoint snapshot(const ParamStore& store) {
  Checkpoint ck;
  auto push = [&ck](const std::string& name, bool trainable, const Tensor& t) {
    ck.manifest.push_back({name, trainable, t.shape(), ck.payload.size()});
    ck.payload.insert(ck.payload.end(), t.data().begin(), t.data().end());
  };
  for (const auto& p : store.params()) push(p->name, true, p->value);
  for (const auto& b : store.buffers()) push(b->name, false, b->value);
  return ck;
}

void restore(ParamStore& store, const Checkpoint& ckpt) {
  std::vector<std::pair<bool, Tensor*>> slots;
  std::vector<const std::string*> names;
  for (const auto& p : store.params()) {
    slots.emplace_back(true, &p->value);
    names.push_back(&p->name);
  }
  for (const auto& b : store.buffers()) {
    slots.emplace_back(false, &b->value);
    names.push_back(&b->name);
  }
  const std::size_t n = std::min(slots.size(), ckpt.manifest.size());
  for (std::size_t i = 0; i < n; ++i) {
    const CheckpointEntry& e = ckpt.manifest[i];
    const Tensor& t = *slots[i].second;
    if (e.name != *names[i] || e.trainable != slots[i].first || e.shape != t.shape()) {
      throw CheckpointError(Kind::kManifest, "checkpoint entry " + std::to_string(i) + " is " +
                                                 e.name + " " + e.shape.str() + ", model expects " +
                                                 *names[i] + " " + t.shape().str());
    }
  }
  if (slots.size() != ckpt.manifest.size()) {
    const std::string first = slots.size() > n ? *names[n] : ckpt.manifest[n].name;
    throw CheckpointError(Kind::kManifest, "checkpoint has " + std::to_string(ckpt.manifest.size()) +
                                               " entries, model " + std::to_string(slots.size()) +
                                               "; first unmatched: " + first);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const CheckpointEntry& e = ckpt.manifest[i];
    Tensor& t = *slots[i].second;
    if (e.offset + t.size() > ckpt.payload.size()) {
      throw CheckpointError(Kind::kFormat, "checkpoint entry " + e.name + " overruns payload");
    }
    std::copy_n(ckpt.payload.begin() + static_cast<std::ptrdiff_t>(e.offset), t.size(), t.data().begin());
  }
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian host");
  std::string out = "LKAS";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.manifest.size()));
  for (const auto& e : ckpt.manifest) {
    out.push_back(static_cast<char>(e.trainable ? 0 : 1));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    for (int d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(out, e.offset);
  }
  put<std::uint64_t>(out, ckpt.payload.size());
  const std::size_t start = out.size();
  out.resize(start + ckpt.payload.size() * sizeof(double));
  if (!ckpt.payload.empty()) std::memcpy(out.data() + start, ckpt.payload.data(), ckpt.payload.size() * sizeof(double));
  put<std::uint32_t>(out, crc_of(std::string_view(out).substr(start)));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != "LKAS") throw CheckpointError(Kind::kFormat, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint version " + std::to_string(version) +
                                              ", this build reads " + std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto kind = r.get<std::uint8_t>("entry kind");
    if (kind > 1) throw CheckpointError(Kind::kFormat, "bad entry kind " + std::to_string(kind));
    e.trainable = kind == 0;
    const auto len = r.get<std::uint32_t>("name length");
    e.name = std::string(r.take(len, "name"));
    e.shape.n = static_cast<int>(r.get<std::uint32_t>("shape"));
    e.shape.c = static_cast<int>(r.get<std::uint32_t>("shape"));
    e.shape.h = static_cast<int>(r.get<std::uint32_t>("shape"));
    e.shape.w = static_cast<int>(r.get<std::uint32_t>("shape"));
    e.offset = r.get<std::uint64_t>("offset");
    ck.manifest.push_back(std::move(e));
  }
  const auto scalars = r.get<std::uint64_t>("payload size");
  if (scalars > r.remaining() / sizeof(double)) {
    throw CheckpointError(Kind::kFormat, "checkpoint truncated while reading payload");
  }
  const std::string_view raw = r.take(scalars * sizeof(double), "payload");
  const auto stored = r.get<std::uint32_t>("crc");
  if (r.remaining() != 0) throw CheckpointError(Kind::kFormat, "trailing bytes after checkpoint");
  if (crc_of(raw) != stored) throw CheckpointError(Kind::kCrc, "checkpoint payload CRC mismatch");
  ck.payload.resize(scalars);
  if (scalars > 0) std::memcpy(ck.payload.data(), raw.data(), raw.size());
  for (const auto& e : ck.manifest) {
    if (e.offset + e.shape.numel() > scalars) {
      throw CheckpointError(Kind::kFormat, "checkpoint entry " + e.name + " overruns payload");
    }
  }
  return ck;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(snapshot(store)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace lkaseg
