#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cral/tensor.hpp"

namespace cral {

// Binary parameter container, little-endian throughout:
//
//   magic      8 bytes   "CRALCKPT"
//   version    u32       kCheckpointVersion
//   meta_len   u64       length of the metadata blob
//   metadata   bytes     free-form UTF-8 (the model manifest stores JSON here)
//   count      u64       number of records
//   record     × count:
//     name_len u32, name bytes
//     rank     u32, extents u64 × rank
//     values   f64 × product(extents), row-major

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string metadata;
  std::vector<CheckpointRecord> records;

  const Tensor& find(const std::string& name) const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cral
