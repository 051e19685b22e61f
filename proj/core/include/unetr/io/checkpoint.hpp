#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "UNETRCKP"  u32 version
//   u64 length, model config as key=value text
//   u32 tensor count, then per tensor: u32 name length, name, u32 rank,
//       u64 extents[rank], f32 values
//   u8 has_optimizer; if 1: u64 step, then first and second moments of every
//       tensor in order, f32
//   u64 FNV-1a hash of every preceding byte

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "unetr/model/unetr.hpp"
#include "unetr/pipeline/adamw.hpp"

namespace unetr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

std::string encode_checkpoint(UnetrModel<float>& model, const OptimizerState<float>* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, UnetrModel<float>& model,
                     const OptimizerState<float>* optimizer = nullptr);

struct LoadedCheckpoint {
    ModelConfig config;
    std::unique_ptr<UnetrModel<float>> model;
    std::optional<OptimizerState<float>> optimizer;
};

/// FormatError on bad magic, version mismatch, checksum failure, or missing
/// or unknown tensors; ShapeError on a misshapen tensor. Both name the tensor.
LoadedCheckpoint decode_checkpoint(std::string_view bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the stored tensors into an existing model; shapes must match by name.
void load_parameters(std::string_view bytes, UnetrModel<float>& model);

} // namespace unetr
