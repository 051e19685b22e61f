#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "unetr/volume.hpp"

namespace unetr {

enum class IntensityMode { hu_window, zscore, percentile };

IntensityMode parse_intensity_mode(const std::string& name);
std::string to_string(IntensityMode mode);

/// In place, per channel.
///   hu_window:  clip to [-1000, 1000] then map affinely to [0, 1]
///   zscore:     (v - mean) / std; NumericError when std == 0
///   percentile: p5 -> 0, p95 -> 1 with clipping, percentiles (nearest rank)
///               taken over nonzero voxels; NumericError when p95 == p5
void normalize_intensity(Image& image, IntensityMode mode);

struct PatchSample {
    Image image;
    LabelMap label;
    Dims3 center{};
    bool foreground_centered = false;
};

/// Draws training patches with foreground-centred and background-centred
/// patches at `fg_ratio` : 1 - fg_ratio. Volumes smaller than the patch are
/// zero-padded at the high end first.
class PatchSampler {
public:
    PatchSampler(const VolumeSample& sample, const Dims3& size, double fg_ratio = 0.5);

    PatchSample draw(std::mt19937_64& rng) const;
    bool has_foreground() const noexcept { return !foreground_.empty(); }

private:
    Image image_;
    LabelMap label_;
    Dims3 size_;
    double fg_ratio_;
    std::vector<std::size_t> foreground_;
    std::vector<std::size_t> background_;
};

PatchSample sample_patch(const VolumeSample& sample, const Dims3& size, std::mt19937_64& rng);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n-1 cut by the given ratios (normalised to sum 1);
/// test receives the rounding remainder.
SplitIndices split_dataset(std::size_t n, double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed);

} // namespace unetr
