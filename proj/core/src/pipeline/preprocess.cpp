#include "unetr/pipeline/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "unetr/error.hpp"
#include "unetr/objective/metrics.hpp"

namespace unetr {

IntensityMode parse_intensity_mode(const std::string& name)
{
    if (name == "hu_window")
        return IntensityMode::hu_window;
    if (name == "zscore")
        return IntensityMode::zscore;
    if (name == "percentile")
        return IntensityMode::percentile;
    throw ConfigError("unknown intensity mode '" + name + "' (expected hu_window, zscore or percentile)");
}

std::string to_string(IntensityMode mode)
{
    switch (mode) {
    case IntensityMode::hu_window:
        return "hu_window";
    case IntensityMode::zscore:
        return "zscore";
    case IntensityMode::percentile:
        return "percentile";
    }
    return "unknown";
}

void normalize_intensity(Image& image, IntensityMode mode)
{
    for (std::size_t c = 0; c < image.channels; ++c) {
        auto v = image.channel(c);
        switch (mode) {
        case IntensityMode::hu_window:
            for (auto& x : v)
                x = static_cast<float>((std::clamp(static_cast<double>(x), -1000.0, 1000.0) + 1000.0) / 2000.0);
            break;
        case IntensityMode::zscore: {
            double mean = 0.0;
            for (const float x : v)
                mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (const float x : v)
                var += (x - mean) * (x - mean);
            const double sd = std::sqrt(var / static_cast<double>(v.size()));
            if (!(sd > 0.0))
                throw NumericError("zscore normalisation: channel " + std::to_string(c) + " has zero std");
            for (auto& x : v)
                x = static_cast<float>((x - mean) / sd);
            break;
        }
        case IntensityMode::percentile: {
            std::vector<double> fg;
            for (const float x : v)
                if (x != 0.0f)
                    fg.push_back(x);
            if (fg.empty())
                throw NumericError("percentile normalisation: channel " + std::to_string(c) +
                                   " has no nonzero voxels");
            std::sort(fg.begin(), fg.end());
            const double lo = nearest_rank(fg, 0.05);
            const double hi = nearest_rank(fg, 0.95);
            if (!(hi > lo))
                throw NumericError("percentile normalisation: channel " + std::to_string(c) +
                                   " has p95 == p5");
            for (auto& x : v)
                x = static_cast<float>(std::clamp((x - lo) / (hi - lo), 0.0, 1.0));
            break;
        }
        }
    }
}

PatchSampler::PatchSampler(const VolumeSample& sample, const Dims3& size, double fg_ratio)
    : size_(size), fg_ratio_(fg_ratio)
{
    if (sample.label.channels != 1 || sample.label.dims != sample.image.dims)
        throw ShapeError("patch sampler: label " + to_string(sample.label.dims) + " does not match image " +
                         to_string(sample.image.dims));
    if (!(fg_ratio >= 0.0 && fg_ratio <= 1.0))
        throw ConfigError("patch sampler: fg_ratio must be within [0, 1]");
    Dims3 padded = sample.image.dims;
    for (std::size_t a = 0; a < 3; ++a)
        padded[a] = std::max(padded[a], size[a]);
    image_ = padded == sample.image.dims ? sample.image : pad_high(sample.image, padded);
    label_ = padded == sample.label.dims ? sample.label : pad_high(sample.label, padded);
    for (std::size_t i = 0; i < label_.data.size(); ++i)
        (label_.data[i] != 0 ? foreground_ : background_).push_back(i);
    if (foreground_.empty())
        std::clog << "warning: volume has no foreground; sampling background only\n";
}

PatchSample PatchSampler::draw(std::mt19937_64& rng) const
{
    std::bernoulli_distribution want_fg(fg_ratio_);
    const bool fg = want_fg(rng) && !foreground_.empty();
    const auto& pool = fg || background_.empty() ? foreground_ : background_;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const std::size_t flat = pool[pick(rng)];
    const Dims3& d = label_.dims;
    const Dims3 center{flat / (d[1] * d[2]), (flat / d[2]) % d[1], flat % d[2]};
    Dims3 origin{};
    for (std::size_t a = 0; a < 3; ++a)
        origin[a] = std::min(center[a] - std::min(center[a], size_[a] / 2), d[a] - size_[a]);
    PatchSample out;
    out.image = crop(image_, origin, size_);
    out.label = crop(label_, origin, size_);
    out.center = center;
    out.foreground_centered = label_.data[flat] != 0;
    return out;
}

PatchSample sample_patch(const VolumeSample& sample, const Dims3& size, std::mt19937_64& rng)
{
    return PatchSampler(sample, size).draw(rng);
}

SplitIndices split_dataset(std::size_t n, double train_ratio, double val_ratio, double test_ratio,
                           std::uint64_t seed)
{
    const double total = train_ratio + val_ratio + test_ratio;
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 || !(total > 0))
        throw ConfigError("split ratios must be non-negative with a positive sum");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_ratio / total));
    const auto n_val = std::min(n - n_train,
                                static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_ratio / total)));
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

} // namespace unetr
