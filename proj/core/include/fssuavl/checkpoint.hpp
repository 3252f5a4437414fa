#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fssuavl/encoder.hpp"

namespace fssuavl {

struct CheckpointMeta {
  int round = 0;
  std::uint64_t seed = 0;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  int version = 1;
  EncoderConfig encoder;
  CheckpointMeta meta;
  NamedTensors tensors;  // parameters and running buffers
};

// Layout, all integers little-endian:
//   "FSSUAVLC"  u32 version  u64 header_bytes  header (JSON)  payload
// The header echoes the encoder config and lists every tensor with dtype
// ("f32"), shape, byte offset into the payload, byte length and CRC-32. The
// payload is the raw f32 data in header order.
inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'S', 'U', 'A', 'V', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const EncoderModel& model, const CheckpointMeta& meta, const std::filesystem::path& path);

// Validates magic, version, header, sizes, shapes against the echoed config and
// every CRC. Errors are FormatError with the byte offset of the problem.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds the model the checkpoint describes. When `expected` is given, its
// architecture must match the checkpoint's (ContractError otherwise).
EncoderModel model_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig* expected = nullptr);

}  // namespace fssuavl
