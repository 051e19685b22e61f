#include "unetr/pipeline/augment.hpp"

#include <cstdint>

#include "unetr/error.hpp"

namespace unetr {

namespace {

// Axes (p, q) of the plane orthogonal to `axis`.
std::pair<std::size_t, std::size_t> plane_of(std::size_t axis)
{
    switch (axis) {
    case 0:
        return {1, 2};
    case 1:
        return {0, 2};
    case 2:
        return {0, 1};
    default:
        throw ConfigError("rotation axis " + std::to_string(axis) + " out of range");
    }
}

template <typename T>
Volume<T> quarter_turn(const Volume<T>& v, std::size_t axis)
{
    const auto [p, q] = plane_of(axis);
    if (v.dims[p] != v.dims[q])
        throw ShapeError("rotate90: plane " + std::to_string(v.dims[p]) + "x" + std::to_string(v.dims[q]) +
                         " is not square");
    const std::size_t n = v.dims[p];
    Volume<T> out(v.channels, v.dims);
    for (std::size_t c = 0; c < v.channels; ++c)
        for (std::size_t x = 0; x < v.dims[0]; ++x)
            for (std::size_t y = 0; y < v.dims[1]; ++y)
                for (std::size_t z = 0; z < v.dims[2]; ++z) {
                    std::array<std::size_t, 3> src{x, y, z};
                    const std::array<std::size_t, 3> dst{x, y, z};
                    src[p] = dst[q];
                    src[q] = n - 1 - dst[p];
                    out.at(c, x, y, z) = v.at(c, src[0], src[1], src[2]);
                }
    return out;
}

} // namespace

template <typename T>
Volume<T> rotate90(const Volume<T>& v, std::size_t axis, std::size_t k)
{
    plane_of(axis);
    Volume<T> out = v;
    for (std::size_t i = 0; i < k % 4; ++i)
        out = quarter_turn(out, axis);
    return out;
}

template <typename T>
Volume<T> flip(const Volume<T>& v, std::size_t axis)
{
    if (axis > 2)
        throw ConfigError("flip axis " + std::to_string(axis) + " out of range");
    Volume<T> out(v.channels, v.dims);
    for (std::size_t c = 0; c < v.channels; ++c)
        for (std::size_t x = 0; x < v.dims[0]; ++x)
            for (std::size_t y = 0; y < v.dims[1]; ++y)
                for (std::size_t z = 0; z < v.dims[2]; ++z) {
                    std::array<std::size_t, 3> src{x, y, z};
                    src[axis] = v.dims[axis] - 1 - src[axis];
                    out.at(c, x, y, z) = v.at(c, src[0], src[1], src[2]);
                }
    return out;
}

void augment(Image& image, LabelMap& label, const AugmentConfig& cfg, std::mt19937_64& rng)
{
    if (image.dims != label.dims)
        throw ShapeError("augment: image " + to_string(image.dims) + " vs label " + to_string(label.dims));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (cfg.rotate && unit(rng) < cfg.rotate_prob) {
        std::uniform_int_distribution<std::size_t> pick_axis(0, 2);
        std::uniform_int_distribution<std::size_t> pick_turns(1, 3);
        const std::size_t axis = pick_axis(rng);
        const std::size_t turns = pick_turns(rng);
        const auto [p, q] = plane_of(axis);
        if (image.dims[p] == image.dims[q]) {
            image = rotate90(image, axis, turns);
            label = rotate90(label, axis, turns);
        }
    }
    if (cfg.flip)
        for (std::size_t axis = 0; axis < 3; ++axis)
            if (unit(rng) < cfg.flip_prob) {
                image = flip(image, axis);
                label = flip(label, axis);
            }
    if (cfg.intensity) {
        if (unit(rng) < cfg.scale_prob) {
            const double factor = 1.0 + cfg.scale_range * (2.0 * unit(rng) - 1.0);
            for (auto& v : image.data)
                v = static_cast<float>(v * factor);
        }
        if (unit(rng) < cfg.shift_prob) {
            const double offset = cfg.shift_range * (2.0 * unit(rng) - 1.0);
            for (auto& v : image.data)
                v = static_cast<float>(v + offset);
        }
    }
}

template Volume<float> rotate90(const Volume<float>&, std::size_t, std::size_t);
template Volume<std::uint8_t> rotate90(const Volume<std::uint8_t>&, std::size_t, std::size_t);
template Volume<float> flip(const Volume<float>&, std::size_t);
template Volume<std::uint8_t> flip(const Volume<std::uint8_t>&, std::size_t);

} // namespace unetr
