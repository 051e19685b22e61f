#include "unetr/io/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "unetr/error.hpp"

namespace unetr {

void PhantomSpec::validate() const
{
    if (classes < 2 || classes > 256)
        throw ConfigError("phantom: classes must be in [2, 256]");
    if (count == 0 || dims[0] < 4 || dims[1] < 4 || dims[2] < 4)
        throw ConfigError("phantom: need count >= 1 and extents >= 4");
    if (min_objects == 0 || max_objects < min_objects)
        throw ConfigError("phantom: need 1 <= min_objects <= max_objects");
    if (!(min_radius > 0.0) || max_radius < min_radius || !(max_radius < 0.5))
        throw ConfigError("phantom: radius fractions must satisfy 0 < min <= max < 0.5 so shapes fit the volume");
    if (intensity_means.size() != classes)
        throw ConfigError("phantom: " + std::to_string(intensity_means.size()) + " intensity means for " +
                          std::to_string(classes) + " classes");
    if (!(noise_std >= 0.0))
        throw ConfigError("phantom: noise_std must be >= 0");
}

ShapeFamily parse_shape_family(const std::string& name)
{
    if (name == "ellipsoid")
        return ShapeFamily::ellipsoid;
    if (name == "box")
        return ShapeFamily::box;
    throw ConfigError("unknown phantom shape '" + name + "' (expected ellipsoid or box)");
}

std::vector<VolumeSample> generate_phantoms(const PhantomSpec& spec)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> objects(spec.min_objects, spec.max_objects);
    std::vector<VolumeSample> out;
    out.reserve(spec.count);
    for (std::size_t n = 0; n < spec.count; ++n) {
        VolumeSample s;
        s.spacing = spec.spacing;
        s.label = LabelMap(1, spec.dims, 0);
        for (std::size_t cls = 1; cls < spec.classes; ++cls) {
            const std::size_t k = objects(rng);
            for (std::size_t o = 0; o < k; ++o) {
                std::array<double, 3> radius{}, center{};
                for (std::size_t a = 0; a < 3; ++a) {
                    const double extent = static_cast<double>(spec.dims[a]);
                    radius[a] = extent * (spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng));
                    const double lo = radius[a];
                    const double hi = extent - 1.0 - radius[a];
                    center[a] = lo + (hi - lo) * unit(rng);
                }
                for (std::size_t x = 0; x < spec.dims[0]; ++x)
                    for (std::size_t y = 0; y < spec.dims[1]; ++y)
                        for (std::size_t z = 0; z < spec.dims[2]; ++z) {
                            const double u = (static_cast<double>(x) - center[0]) / radius[0];
                            const double v = (static_cast<double>(y) - center[1]) / radius[1];
                            const double w = (static_cast<double>(z) - center[2]) / radius[2];
                            const bool inside = spec.shape == ShapeFamily::ellipsoid
                                                    ? u * u + v * v + w * w <= 1.0
                                                    : std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::abs(w) <= 1.0;
                            if (inside)
                                s.label.at(0, x, y, z) = static_cast<std::uint8_t>(cls);
                        }
            }
        }
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        s.image = Image(1, spec.dims);
        for (std::size_t i = 0; i < s.image.data.size(); ++i) {
            const double mean = spec.intensity_means[s.label.data[i]];
            s.image.data[i] = static_cast<float>(spec.noise_std > 0.0 ? mean + noise(rng) : mean);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<double, double> foreground_fraction_bounds(const PhantomSpec& spec)
{
    const double shape_factor = spec.shape == ShapeFamily::ellipsoid ? 4.0 / 3.0 * std::numbers::pi : 8.0;
    double lo = shape_factor;
    double hi = shape_factor;
    for (std::size_t a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(spec.dims[a]);
        lo *= std::max(0.0, spec.min_radius * extent - 1.0) / extent;
        hi *= (spec.max_radius * extent + 1.0) / extent;
    }
    return {lo, std::min(hi, 1.0)};
}

} // namespace unetr
