#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "unetr/volume.hpp"

namespace unetr {

using Point3 = std::array<double, 3>;
using SurfacePoints = std::vector<Point3>;

/// 2 |G & P| / (|G| + |P|) over nonzero voxels; 1.0 when both masks are empty.
double dice_score(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred);

/// Centres (index * spacing) of mask voxels with a 6-neighbour outside the
/// mask; voxels on the volume border always count.
SurfacePoints extract_surface(std::span<const std::uint8_t> mask, const Dims3& dims,
                              const Spacing& spacing);

/// Sorted distances from every point of `from` to its nearest point in `to`.
std::vector<double> directed_distances(const SurfacePoints& from, const SurfacePoints& to);

/// Nearest-rank percentile: the ceil(q * m)-th smallest of m sorted values.
double nearest_rank(std::span<const double> sorted, double q);

/// max of both directed 95th percentiles; nullopt when either set is empty.
std::optional<double> hd95(const SurfacePoints& a, const SurfacePoints& b);

/// Exact (100th percentile) Hausdorff distance; nullopt when either set is empty.
std::optional<double> hausdorff(const SurfacePoints& a, const SurfacePoints& b);

/// Binary mask of voxels equal to `cls`.
std::vector<std::uint8_t> class_mask(std::span<const std::uint8_t> labels, std::uint8_t cls);

} // namespace unetr
