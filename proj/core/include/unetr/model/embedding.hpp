#pragma once

// Patch partition and linear patch embedding.
//
// A [C, H, W, D] volume is cut into N = (H*W*D)/P^3 non-overlapping P^3
// patches. Rows follow the patch grid lexicographically (x slowest, z
// fastest). Inside a row the flattening order is z fastest, then y, then x,
// then channel:  column = ((c*P + px)*P + py)*P + pz.

#include <cstddef>
#include <random>

#include "unetr/autodiff/tensor.hpp"
#include "unetr/volume.hpp"

namespace unetr {

struct PatchConfig {
    std::size_t patch = 16;
    std::size_t channels = 1;
    std::size_t embed_dim = 768;
    Dims3 grid{};

    /// Grid for a volume of `dims`, rounding each axis up (high-end padding).
    static PatchConfig for_volume(const Dims3& dims, std::size_t patch, std::size_t channels,
                                  std::size_t embed_dim);

    std::size_t sequence_length() const noexcept { return grid[0] * grid[1] * grid[2]; }
    std::size_t patch_width() const noexcept { return patch * patch * patch * channels; }
    Dims3 volume_dims() const noexcept { return {grid[0] * patch, grid[1] * patch, grid[2] * patch}; }
};

/// Smallest multiple-of-`patch` extent covering `dims`.
Dims3 padded_extent(const Dims3& dims, std::size_t patch);

template <typename T>
struct EmbeddingParams {
    ad::Tensor<T> projection; // E: [P^3*C, K]
    ad::Tensor<T> positions;  // E_pos: [N, K]

    /// E ~ U(+-sqrt(6/(P^3*C + K))), E_pos ~ N(0, 0.02).
    static EmbeddingParams init(const PatchConfig& cfg, std::mt19937_64& rng);
};

/// [C, H, W, D] -> [N, P^3*C]. Throws ShapeError unless every spatial extent
/// is divisible by `patch`. Differentiable (pure permutation).
template <typename T>
ad::Tensor<T> partition(const ad::Tensor<T>& volume, std::size_t patch);

/// Inverse of partition.
template <typename T>
ad::Tensor<T> unpartition(const ad::Tensor<T>& patches, const PatchConfig& cfg);

/// z0 = patches * E + E_pos. No class token.
template <typename T>
ad::Tensor<T> embed(const ad::Tensor<T>& patches, const EmbeddingParams<T>& params);

} // namespace unetr
