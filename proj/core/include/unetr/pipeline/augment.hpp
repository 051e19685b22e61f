#pragma once

#include <cstddef>
#include <random>

#include "unetr/volume.hpp"

namespace unetr {

struct AugmentConfig {
    bool rotate = true;
    bool flip = true;
    bool intensity = true;
    double rotate_prob = 0.5;
    double flip_prob = 0.5;      // per axis
    double scale_prob = 0.5;
    double scale_range = 0.1;    // factor in [1 - r, 1 + r]
    double shift_prob = 0.5;
    double shift_range = 0.1;    // offset in [-r, r]
};

/// Quarter turns (k mod 4) in the plane orthogonal to `axis`: out(i, j) = in(j, n - 1 - i)
/// per turn, over the two remaining axes in order. Those two extents must match.
template <typename T>
Volume<T> rotate90(const Volume<T>& v, std::size_t axis, std::size_t k);

template <typename T>
Volume<T> flip(const Volume<T>& v, std::size_t axis);

/// Random rotation by 90/180/270 degrees about a random axis, per-axis flips
/// and image-only intensity scale/shift. Geometry is applied identically to
/// image and label.
void augment(Image& image, LabelMap& label, const AugmentConfig& cfg, std::mt19937_64& rng);

} // namespace unetr
