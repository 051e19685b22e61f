#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unetr/volume.hpp"

namespace unetr {

enum class ShapeFamily { ellipsoid, box };

struct PhantomSpec {
    Dims3 dims{48, 48, 48};
    std::size_t classes = 2;       // J, background included
    std::size_t count = 40;
    ShapeFamily shape = ShapeFamily::ellipsoid;
    std::size_t min_objects = 1;   // per foreground class and volume
    std::size_t max_objects = 1;
    double min_radius = 0.15;      // semi-axis as a fraction of the axis extent
    double max_radius = 0.30;
    std::vector<double> intensity_means{0.0, 1.0}; // one per class
    double noise_std = 0.2;
    Spacing spacing{1.0, 1.0, 1.0};
    std::uint64_t seed = 0;

    /// Throws ConfigError when objects cannot fit (max_radius >= 0.5), counts
    /// are inconsistent or the mean list does not have J entries.
    void validate() const;
};

ShapeFamily parse_shape_family(const std::string& name);

/// Label = class of the last object covering a voxel (0 elsewhere);
/// image = per-class mean + N(0, noise_std). Objects are axis-aligned and
/// lie fully inside the volume. Deterministic for a fixed seed.
std::vector<VolumeSample> generate_phantoms(const PhantomSpec& spec);

/// Foreground fraction range for one object per volume and J = 2: the
/// smallest object shrunk and the largest grown by one voxel per semi-axis.
std::pair<double, double> foreground_fraction_bounds(const PhantomSpec& spec);

} // namespace unetr
