#include "unetr/pipeline/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "unetr/autodiff/ops.hpp"
#include "unetr/error.hpp"
#include "unetr/model/decoder.hpp"

namespace unetr {

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, double overlap)
{
    if (!(overlap >= 0.0 && overlap < 1.0))
        throw ConfigError("sliding window: overlap must be in [0, 1)");
    if (window == 0 || extent < window)
        throw ShapeError("sliding window: window " + std::to_string(window) + " does not fit extent " +
                         std::to_string(extent));
    const auto stride = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(window) * (1.0 - overlap))));
    const std::size_t count = (extent + stride - 1) / stride;
    std::vector<std::size_t> starts(count);
    for (std::size_t i = 0; i < count; ++i)
        starts[i] = std::min(i * stride, extent - window);
    return starts;
}

std::vector<Dims3> window_grid(const Dims3& extent, const Dims3& window, double overlap)
{
    const auto xs = window_starts(extent[0], window[0], overlap);
    const auto ys = window_starts(extent[1], window[1], overlap);
    const auto zs = window_starts(extent[2], window[2], overlap);
    std::vector<Dims3> grid;
    grid.reserve(xs.size() * ys.size() * zs.size());
    for (const auto x : xs)
        for (const auto y : ys)
            for (const auto z : zs)
                grid.push_back({x, y, z});
    return grid;
}

Volume<std::uint32_t> coverage_map(const Dims3& extent, const Dims3& window, double overlap)
{
    Volume<std::uint32_t> cov(1, extent, 0);
    for (const auto& o : window_grid(extent, window, overlap))
        for (std::size_t x = 0; x < window[0]; ++x)
            for (std::size_t y = 0; y < window[1]; ++y)
                for (std::size_t z = 0; z < window[2]; ++z)
                    ++cov.at(0, o[0] + x, o[1] + y, o[2] + z);
    return cov;
}

Image predict_window(const UnetrModel<float>& model, const Image& window)
{
    ad::NoGradScope<float> no_grad;
    ad::Tensor<float> x({window.channels, window.dims[0], window.dims[1], window.dims[2]}, window.data);
    const auto probs = probabilities(model.forward(x));
    Image out(model.config().classes, window.dims);
    std::copy(probs.data().begin(), probs.data().end(), out.data.begin());
    return out;
}

Image sliding_window_infer(const UnetrModel<float>& model, const Image& volume, double overlap,
                           std::size_t* windows_used)
{
    const Dims3 window = model.config().input_dims;
    if (volume.channels != model.config().in_channels)
        throw ShapeError("sliding window: volume has " + std::to_string(volume.channels) +
                         " channels, model expects " + std::to_string(model.config().in_channels));
    Dims3 padded = volume.dims;
    for (std::size_t a = 0; a < 3; ++a)
        padded[a] = std::max(padded[a], window[a]);
    const Image source = padded == volume.dims ? volume : pad_high(volume, padded);
    const auto origins = window_grid(padded, window, overlap);
    if (windows_used != nullptr)
        *windows_used = origins.size();

    std::map<Dims3, std::uint32_t> placements;
    for (const auto& o : origins)
        ++placements[o];

    const std::size_t classes = model.config().classes;
    if (placements.size() == 1) {
        const Image probs = predict_window(model, source);
        return padded == volume.dims ? probs : crop(probs, Dims3{0, 0, 0}, volume.dims);
    }

    Volume<double> sum(classes, padded, 0.0);
    Volume<std::uint32_t> count(1, padded, 0);
    for (const auto& [o, times] : placements) {
        const Image probs = predict_window(model, crop(source, o, window));
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t x = 0; x < window[0]; ++x)
                for (std::size_t y = 0; y < window[1]; ++y)
                    for (std::size_t z = 0; z < window[2]; ++z)
                        sum.at(c, o[0] + x, o[1] + y, o[2] + z) += times * static_cast<double>(probs.at(c, x, y, z));
        for (std::size_t x = 0; x < window[0]; ++x)
            for (std::size_t y = 0; y < window[1]; ++y)
                for (std::size_t z = 0; z < window[2]; ++z)
                    count.at(0, o[0] + x, o[1] + y, o[2] + z) += times;
    }

    Image out(classes, volume.dims);
    for (std::size_t x = 0; x < volume.dims[0]; ++x)
        for (std::size_t y = 0; y < volume.dims[1]; ++y)
            for (std::size_t z = 0; z < volume.dims[2]; ++z) {
                const double n = count.at(0, x, y, z);
                double total = 0.0;
                for (std::size_t c = 0; c < classes; ++c)
                    total += sum.at(c, x, y, z) / n;
                for (std::size_t c = 0; c < classes; ++c)
                    out.at(c, x, y, z) = static_cast<float>(sum.at(c, x, y, z) / n / total);
            }
    return out;
}

LabelMap argmax_labels(const Image& probs)
{
    LabelMap out(1, probs.dims, 0);
    const std::size_t voxels = probs.voxels();
    for (std::size_t i = 0; i < voxels; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.channels; ++c)
            if (probs.data[c * voxels + i] > probs.data[best * voxels + i])
                best = c;
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

} // namespace unetr
