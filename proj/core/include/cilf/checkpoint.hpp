#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cilf/model.hpp"
#include "cilf/prototype_memory.hpp"

namespace cilf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  IncrementalModel model;
  PrototypeMemory memory;
  /// Number of completed stages.
  std::size_t stage = 0;
};

/// Binary container: "CILF", u32 version, u32 record count, then records of
/// (u32 name length, name, u8 dtype, u32 rank, u64 dims..., little-endian payload).
std::vector<std::uint8_t> encode_checkpoint(const IncrementalModel& model, const PrototypeMemory& memory,
                                            std::size_t stage);
/// Throws FormatError (with byte offset) on malformed input or a version mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const IncrementalModel& model, const PrototypeMemory& memory,
                     std::size_t stage);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cilf
