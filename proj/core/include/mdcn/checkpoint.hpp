#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mdcn/model.hpp"
#include "mdcn/trainer.hpp"

namespace mdcn {

inline constexpr char kCheckpointMagic[4] = {'M', 'D', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;  // epochs completed
  std::uint64_t seed = 1;
  double best_val_acc = -1.0;
  EpochMetrics metrics;  // last finished epoch
};

struct Checkpoint {
  ModelParams<float> params;
  std::optional<ModelParams<float>> velocity;
  CheckpointMeta meta;
};

/// Layout (little-endian): "MDCN", u32 version, u16 field count then tagged
/// fields (u16 tag, u8 kind 0=u32 1=u64 2=f64, value), u32 tensor count, and
/// per tensor u16 name length, name, u8 rank, u32 dims, f32 payload.
/// Tensors are parameters, BN running statistics, then "velocity."-prefixed
/// momentum buffers when present.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As above, but ConfigError naming both modes when the stored mode differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, StreamMode expected);

}  // namespace mdcn
