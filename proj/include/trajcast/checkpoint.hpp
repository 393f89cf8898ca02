#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "trajcast/net.hpp"

namespace trajcast {

struct TrainingMetadata {
  int epoch = 0;
  std::uint64_t seed = 0;
  double lambda = 0.5;
  int horizon = 8;
  bool use_anatomy = true;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  ForecasterParams params;
  TrainingMetadata meta;
};

// Byte layout (all integers little-endian):
//   magic   8 bytes  "TRJCKPT1"
//   length  u64      size in bytes of the JSON header that follows
//   header  JSON     {"net": NetConfig, "meta": TrainingMetadata,
//                     "tensors": [{"name", "shape": [rows, cols], "offset", "count"}]}
//   payload float64  little-endian, row-major, tensors concatenated in header order;
//                    "offset" and "count" are in elements from the payload start.
std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws SchemaError on a malformed buffer.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a temporary file first, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trajcast
