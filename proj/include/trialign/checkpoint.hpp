#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "trialign/optimizer.hpp"
#include "trialign/trainer.hpp"

namespace trialign {

/// Binary checkpoint container, little-endian like the embedding files:
///   "TRICKPT1" | u32 version | u64 metadata length | metadata JSON |
///   u32 tensor count | per tensor: u32 name length, name, u64 rows,
///   u64 cols, rows*cols float32 row-major.
/// Head tensors are named "<modality>/<param>"; optimizer moments add
/// "/adam_m" and "/adam_v".
struct Checkpoint {
  HeadSet heads;
  std::optional<OptimState> optimizer;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameter tensors of a head in a fixed order, as optimizer slots.
std::vector<TensorSlot> head_slots(ProjectionHead<float>& head, const HeadGradients<float>& grads);

}  // namespace trialign
