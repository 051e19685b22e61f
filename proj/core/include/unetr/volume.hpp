#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unetr/error.hpp"

namespace unetr {

using Dims3 = std::array<std::size_t, 3>;
/// Physical voxel size in millimetres along (H, W, D).
using Spacing = std::array<double, 3>;

inline std::size_t voxel_count(const Dims3& d) noexcept { return d[0] * d[1] * d[2]; }

inline std::string to_string(const Dims3& d)
{
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

/// Channel-first voxel grid: index ((c*H + x)*W + y)*D + z.
template <typename T>
struct Volume {
    std::size_t channels = 0;
    Dims3 dims{};
    std::vector<T> data;

    Volume() = default;
    Volume(std::size_t channel_count, Dims3 extent, T fill = T{})
        : channels(channel_count), dims(extent), data(channel_count * voxel_count(extent), fill)
    {
    }

    std::size_t voxels() const noexcept { return voxel_count(dims); }
    std::size_t index(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const noexcept
    {
        return ((c * dims[0] + x) * dims[1] + y) * dims[2] + z;
    }
    T& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) { return data[index(c, x, y, z)]; }
    const T& at(std::size_t c, std::size_t x, std::size_t y, std::size_t z) const
    {
        return data[index(c, x, y, z)];
    }
    std::span<T> channel(std::size_t c) { return std::span<T>(data).subspan(c * voxels(), voxels()); }
    std::span<const T> channel(std::size_t c) const
    {
        return std::span<const T>(data).subspan(c * voxels(), voxels());
    }

    bool operator==(const Volume&) const = default;
};

using Image = Volume<float>;
using LabelMap = Volume<std::uint8_t>;

/// Image plus its integer label volume (one channel) on the same grid.
struct VolumeSample {
    Image image;
    LabelMap label;
    Spacing spacing{1.0, 1.0, 1.0};
};

/// Box of `size` starting at `origin`; voxels outside the source read as `fill`.
template <typename T>
Volume<T> crop(const Volume<T>& src, const Dims3& origin, const Dims3& size, T fill = T{})
{
    Volume<T> out(src.channels, size, fill);
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t x = 0; x < size[0]; ++x) {
            const std::size_t sx = origin[0] + x;
            if (sx >= src.dims[0])
                continue;
            for (std::size_t y = 0; y < size[1]; ++y) {
                const std::size_t sy = origin[1] + y;
                if (sy >= src.dims[1])
                    continue;
                for (std::size_t z = 0; z < size[2]; ++z) {
                    const std::size_t sz = origin[2] + z;
                    if (sz < src.dims[2])
                        out.at(c, x, y, z) = src.at(c, sx, sy, sz);
                }
            }
        }
    return out;
}

/// Zero-extends at the high end of each axis up to `size` (no-op when equal).
template <typename T>
Volume<T> pad_high(const Volume<T>& src, const Dims3& size)
{
    for (std::size_t a = 0; a < 3; ++a)
        if (size[a] < src.dims[a])
            throw ShapeError("pad_high: target " + to_string(size) + " smaller than " +
                             to_string(src.dims));
    return crop(src, Dims3{0, 0, 0}, size);
}

} // namespace unetr
