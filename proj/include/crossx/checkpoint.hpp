#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crossx/model.hpp"

namespace crossx {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// On disk: "CRXX", u32 version, u64 config digest, u32 tensor count, then per
/// tensor u32 name length, name bytes, u32 rank, u32 extents, float32 data;
/// then a trailer of u32 epoch, u64 step, u64 seed. All little-endian.
struct Checkpoint {
  std::uint64_t digest = 0;
  std::vector<CheckpointTensor> tensors;
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;

  const CheckpointTensor* find(const std::string& name) const;
};

/// Writes to a temporary sibling and renames, so an existing file is replaced
/// only by a complete one.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters, running statistics and (optionally) one momentum buffer per
/// parameter, stored under "momentum/<parameter name>".
template <typename T>
Checkpoint make_checkpoint(CrossXModel<T>& model, std::uint64_t digest,
                           const std::vector<std::vector<T>>* momentum = nullptr);

/// Loads values by name. Every model tensor must be present with its exact
/// shape; a digest mismatch is rejected. Momentum buffers are filled when
/// `momentum` is given and the checkpoint holds them.
template <typename T>
void load_checkpoint(const Checkpoint& ckpt, CrossXModel<T>& model, std::uint64_t expected_digest,
                     std::vector<std::vector<T>>* momentum = nullptr);

}  // namespace crossx
