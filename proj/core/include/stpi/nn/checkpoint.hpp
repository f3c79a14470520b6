#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "stpi/nn/params.hpp"

namespace stpi::nn {

// Binary checkpoint, little-endian:
//   "STPICKPT" | u32 version | u32 meta_len | meta bytes | u64 count |
//   count x ( u32 path_len | path | u8 buffer | u32 rank | u64 dims[rank] | f64 data[] )
// Doubles are stored as raw IEEE-754 bytes, so a round trip is bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  Tensor value;
  bool buffer = false;
};

struct Checkpoint {
  std::string metadata;  // flat key=value text describing the model configuration
  std::map<std::string, CheckpointEntry> entries;
};

void write_checkpoint(const std::filesystem::path& file, const ParameterSet& params, const std::string& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& file);

// Copies every entry of `ckpt` into `params`. Throws std::runtime_error on a
// missing path or a shape mismatch; extra checkpoint entries are an error too.
void load_into(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace stpi::nn
