#pragma once

// Binary layout, all integers and floats little-endian:
//   "LKAS" | u32 version | u32 entry count
//   per entry: u8 kind (0 param, 1 buffer) | u32 name length | name bytes
//              | 4 x u32 shape (n, c, h, w) | u64 payload offset (in scalars)
//   u64 payload scalar count | payload as f64 | u32 CRC32 of the payload bytes

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lkaseg/graph.hpp"

namespace lkaseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  bool trainable = true;
  Shape shape;
  std::uint64_t offset = 0;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> manifest;
  std::vector<double> payload;

  /// Scalars belonging to trainable entries.
  std::int64_t param_scalar_count() const;
};

Checkpoint snapshot(const ParamStore& store);
/// Copies values into `store`. Throws CheckpointError(kManifest) naming the
/// first entry whose name, kind or shape disagrees.
void restore(ParamStore& store, const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lkaseg
