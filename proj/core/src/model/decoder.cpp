#include "unetr/model/decoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "unetr/autodiff/ops.hpp"
#include "unetr/error.hpp"

namespace unetr {

namespace {

Dims3 dims_at(const Dims3& input, std::size_t level)
{
    return {input[0] >> level, input[1] >> level, input[2] >> level};
}

template <typename T>
ad::Tensor<T> uniform_weight(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Tensor<T> t(std::move(shape), true);
    for (auto& v : t.mutable_data())
        v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
ad::Tensor<T> constant(std::size_t n, T value)
{
    ad::Tensor<T> t(ad::Shape{n}, true);
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
    return t;
}

template <typename T>
ConvUnitParams<T> make_conv_unit(std::size_t in, std::size_t out, std::mt19937_64& rng)
{
    return {uniform_weight<T>({out, in, 3, 3, 3}, in * 27, rng), constant<T>(out, T(1)),
            constant<T>(out, T(0))};
}

template <typename T>
DeconvParams<T> make_deconv(std::size_t in, std::size_t out, std::mt19937_64& rng)
{
    return {uniform_weight<T>({in, out, 2, 2, 2}, in, rng), constant<T>(out, T(0))};
}

template <typename T>
UpStageParams<T> make_up_stage(std::size_t in, std::size_t out, std::mt19937_64& rng)
{
    auto up = make_deconv<T>(in, out, rng);
    return {std::move(up), make_conv_unit<T>(out, out, rng)};
}

} // namespace

std::size_t DecoderConfig::levels() const
{
    return static_cast<std::size_t>(std::countr_zero(patch));
}

std::size_t DecoderConfig::skip_level(std::size_t skip) const
{
    return std::min(skip, levels() - 1);
}

void DecoderConfig::validate() const
{
    if (patch < 2 || !std::has_single_bit(patch))
        throw ConfigError("decoder: patch size " + std::to_string(patch) +
                          " must be a power of two >= 2");
    if (embed_dim == 0 || in_channels == 0 || classes == 0 || base_width == 0)
        throw ConfigError("decoder: embed_dim, in_channels, classes and base_width must be positive");
    if (!(slope >= 0.0) || !(norm_eps > 0.0))
        throw ConfigError("decoder: slope must be >= 0 and norm_eps > 0");
}

std::vector<DecoderStage> decoder_table(const DecoderConfig& cfg, const Dims3& input_dims)
{
    cfg.validate();
    const std::size_t u = cfg.levels();
    std::vector<DecoderStage> rows;
    rows.push_back({"raw.conv1", 0, cfg.in_channels, cfg.width(0), input_dims});
    rows.push_back({"raw.conv2", 0, cfg.width(0), cfg.width(0), input_dims});
    for (std::size_t i = 1; i <= 3; ++i) {
        const std::size_t target = cfg.skip_level(i);
        const std::size_t w = cfg.width(target);
        std::size_t in = cfg.embed_dim;
        for (std::size_t s = 0; s < u - target; ++s) {
            const std::size_t level = u - s - 1;
            const std::string base = "skip" + std::to_string(i) + ".stage" + std::to_string(s + 1);
            rows.push_back({base + ".up", level, in, w, dims_at(input_dims, level)});
            rows.push_back({base + ".conv", level, w, w, dims_at(input_dims, level)});
            in = w;
        }
    }
    const std::size_t bottom = cfg.skip_level(3);
    std::size_t prev_width = cfg.width(bottom);
    {
        std::size_t in = cfg.embed_dim;
        for (std::size_t s = 0; s + 1 < u - bottom; ++s) {
            const std::size_t level = u - s - 1;
            const std::string base = "bottleneck.stage" + std::to_string(s + 1);
            rows.push_back({base + ".up", level, in, prev_width, dims_at(input_dims, level)});
            rows.push_back({base + ".conv", level, prev_width, prev_width, dims_at(input_dims, level)});
            in = prev_width;
        }
        rows.push_back({"bottleneck.up", bottom, in, prev_width, dims_at(input_dims, bottom)});
    }
    std::size_t prev_level = bottom;
    const std::array<std::size_t, 4> targets{cfg.skip_level(3), cfg.skip_level(2), cfg.skip_level(1), 0};
    const std::array<const char*, 4> names{"merge.skip3", "merge.skip2", "merge.skip1", "merge.raw"};
    for (std::size_t m = 0; m < 4; ++m) {
        const std::size_t level = targets[m];
        const std::size_t w = cfg.width(level);
        const std::string base = names[m];
        if (level != prev_level) {
            rows.push_back({base + ".up", level, prev_width, w, dims_at(input_dims, level)});
            prev_width = w;
        }
        rows.push_back({base + ".conv1", level, prev_width + w, w, dims_at(input_dims, level)});
        rows.push_back({base + ".conv2", level, w, w, dims_at(input_dims, level)});
        prev_width = w;
        prev_level = level;
    }
    rows.push_back({"head", 0, cfg.width(0), cfg.classes, input_dims});
    return rows;
}

std::string format_decoder_table(const std::vector<DecoderStage>& table)
{
    std::ostringstream out;
    out << std::left << std::setw(24) << "stage" << std::right << std::setw(6) << "level"
        << std::setw(8) << "in" << std::setw(8) << "out" << "  extent\n";
    for (const auto& row : table)
        out << std::left << std::setw(24) << row.name << std::right << std::setw(6) << row.level
            << std::setw(8) << row.in_channels << std::setw(8) << row.out_channels << "  "
            << to_string(row.out_dims) << '\n';
    return out.str();
}

template <typename T>
DecoderParams<T> DecoderParams<T>::init(const DecoderConfig& cfg, std::mt19937_64& rng)
{
    cfg.validate();
    const std::size_t u = cfg.levels();
    DecoderParams p;
    p.raw[0] = make_conv_unit<T>(cfg.in_channels, cfg.width(0), rng);
    p.raw[1] = make_conv_unit<T>(cfg.width(0), cfg.width(0), rng);
    for (std::size_t i = 1; i <= 3; ++i) {
        const std::size_t target = cfg.skip_level(i);
        const std::size_t w = cfg.width(target);
        std::size_t in = cfg.embed_dim;
        for (std::size_t s = 0; s < u - target; ++s) {
            p.skips[i - 1].push_back(make_up_stage<T>(in, w, rng));
            in = w;
        }
    }
    const std::size_t bottom = cfg.skip_level(3);
    std::size_t prev_width = cfg.width(bottom);
    std::size_t in = cfg.embed_dim;
    for (std::size_t s = 0; s + 1 < u - bottom; ++s) {
        p.bottleneck.push_back(make_up_stage<T>(in, prev_width, rng));
        in = prev_width;
    }
    p.bottleneck_up = make_deconv<T>(in, prev_width, rng);
    std::size_t prev_level = bottom;
    const std::array<std::size_t, 4> targets{cfg.skip_level(3), cfg.skip_level(2), cfg.skip_level(1), 0};
    for (std::size_t m = 0; m < 4; ++m) {
        const std::size_t w = cfg.width(targets[m]);
        if (targets[m] != prev_level) {
            p.merges[m].up = make_deconv<T>(prev_width, w, rng);
            prev_width = w;
        }
        p.merges[m].conv1 = make_conv_unit<T>(prev_width + w, w, rng);
        p.merges[m].conv2 = make_conv_unit<T>(w, w, rng);
        prev_width = w;
        prev_level = targets[m];
    }
    p.head_weight = uniform_weight<T>({cfg.classes, cfg.width(0), 1, 1, 1}, cfg.width(0), rng);
    p.head_bias = constant<T>(cfg.classes, T(0));
    return p;
}

template <typename T>
void DecoderParams<T>::visit(const std::function<void(const std::string&, ad::Tensor<T>&)>& fn)
{
    auto conv = [&](const std::string& name, ConvUnitParams<T>& c) {
        fn(name + ".weight", c.weight);
        fn(name + ".gamma", c.gamma);
        fn(name + ".beta", c.beta);
    };
    auto deconv = [&](const std::string& name, DeconvParams<T>& d) {
        fn(name + ".weight", d.weight);
        fn(name + ".bias", d.bias);
    };
    auto stages = [&](const std::string& name, std::vector<UpStageParams<T>>& list) {
        for (std::size_t s = 0; s < list.size(); ++s) {
            const std::string base = name + ".stage" + std::to_string(s + 1);
            deconv(base + ".up", list[s].up);
            conv(base + ".conv", list[s].conv);
        }
    };
    conv("decoder.raw.conv1", raw[0]);
    conv("decoder.raw.conv2", raw[1]);
    for (std::size_t i = 0; i < 3; ++i)
        stages("decoder.skip" + std::to_string(i + 1), skips[i]);
    stages("decoder.bottleneck", bottleneck);
    deconv("decoder.bottleneck.up", bottleneck_up);
    const std::array<const char*, 4> names{"decoder.merge.skip3", "decoder.merge.skip2",
                                           "decoder.merge.skip1", "decoder.merge.raw"};
    for (std::size_t m = 0; m < 4; ++m) {
        if (merges[m].up.weight.defined())
            deconv(std::string(names[m]) + ".up", merges[m].up);
        conv(std::string(names[m]) + ".conv1", merges[m].conv1);
        conv(std::string(names[m]) + ".conv2", merges[m].conv2);
    }
    fn("decoder.head.weight", head_weight);
    fn("decoder.head.bias", head_bias);
}

template <typename T>
ad::Tensor<T> reshape_sequence(const ad::Tensor<T>& z, const PatchConfig& cfg)
{
    if (z.rank() != 2 || z.dim(0) != cfg.sequence_length())
        throw ShapeError("reshape_sequence: sequence " + ad::to_string(z.shape()) + " does not fit grid " +
                         to_string(cfg.grid));
    return ad::reshape(ad::transpose(z), ad::Shape{z.dim(1), cfg.grid[0], cfg.grid[1], cfg.grid[2]});
}

template <typename T>
ad::Tensor<T> conv_unit(const ad::Tensor<T>& x, const ConvUnitParams<T>& p, const DecoderConfig& cfg)
{
    const auto y = ad::conv3d(x, p.weight, ad::Tensor<T>{}, ad::Conv3dOptions{1, 1});
    return ad::leaky_relu(ad::instance_norm(y, p.gamma, p.beta, static_cast<T>(cfg.norm_eps)),
                          static_cast<T>(cfg.slope));
}

template <typename T>
ad::Tensor<T> upsample(const ad::Tensor<T>& x, const DeconvParams<T>& p)
{
    return ad::conv_transpose3d(x, p.weight, p.bias, 2);
}

template <typename T>
ad::Tensor<T> project_skip(const ad::Tensor<T>& grid, const std::vector<UpStageParams<T>>& stages,
                           const DecoderConfig& cfg)
{
    ad::Tensor<T> x = grid;
    for (const auto& stage : stages)
        x = conv_unit(upsample(x, stage.up), stage.conv, cfg);
    return x;
}

template <typename T>
ad::Tensor<T> head(const ad::Tensor<T>& features, const ad::Tensor<T>& weight, const ad::Tensor<T>& bias)
{
    return ad::conv3d(features, weight, bias);
}

template <typename T>
ad::Tensor<T> probabilities(const ad::Tensor<T>& logits)
{
    return ad::softmax(logits, 0);
}

template <typename T>
ad::Tensor<T> decode(const std::map<std::size_t, ad::Tensor<T>>& states, const ad::Tensor<T>& raw_input,
                     const PatchConfig& patch_cfg, const DecoderConfig& cfg,
                     const DecoderParams<T>& params)
{
    if (states.size() != 4)
        throw ShapeError("decode: expected 4 extracted states, got " + std::to_string(states.size()));
    if (raw_input.rank() != 4 || raw_input.dim(0) != cfg.in_channels)
        throw ShapeError("decode: raw input " + ad::to_string(raw_input.shape()) + " is not [" +
                         std::to_string(cfg.in_channels) + ", H, W, D]");
    std::vector<ad::Tensor<T>> grids;
    for (const auto& [layer, z] : states)
        grids.push_back(reshape_sequence(z, patch_cfg));

    std::array<ad::Tensor<T>, 3> skips;
    for (std::size_t i = 0; i < 3; ++i)
        skips[i] = project_skip(grids[i], params.skips[i], cfg);
    ad::Tensor<T> x = upsample(project_skip(grids[3], params.bottleneck, cfg), params.bottleneck_up);

    const auto raw = conv_unit(conv_unit(raw_input, params.raw[0], cfg), params.raw[1], cfg);
    const std::array<const ad::Tensor<T>*, 4> merge_inputs{&skips[2], &skips[1], &skips[0], &raw};
    for (std::size_t m = 0; m < 4; ++m) {
        const auto& mp = params.merges[m];
        if (mp.up.weight.defined())
            x = upsample(x, mp.up);
        x = conv_unit(conv_unit(ad::concat_channels(x, *merge_inputs[m]), mp.conv1, cfg), mp.conv2, cfg);
    }
    return head(x, params.head_weight, params.head_bias);
}

#define UNETR_INSTANTIATE_DECODER(T)                                                              \
    template struct DecoderParams<T>;                                                            \
    template ad::Tensor<T> reshape_sequence(const ad::Tensor<T>&, const PatchConfig&);           \
    template ad::Tensor<T> conv_unit(const ad::Tensor<T>&, const ConvUnitParams<T>&,             \
                                     const DecoderConfig&);                                      \
    template ad::Tensor<T> upsample(const ad::Tensor<T>&, const DeconvParams<T>&);               \
    template ad::Tensor<T> project_skip(const ad::Tensor<T>&, const std::vector<UpStageParams<T>>&, \
                                        const DecoderConfig&);                                   \
    template ad::Tensor<T> head(const ad::Tensor<T>&, const ad::Tensor<T>&, const ad::Tensor<T>&); \
    template ad::Tensor<T> probabilities(const ad::Tensor<T>&);                                  \
    template ad::Tensor<T> decode(const std::map<std::size_t, ad::Tensor<T>>&, const ad::Tensor<T>&, \
                                  const PatchConfig&, const DecoderConfig&, const DecoderParams<T>&);

UNETR_INSTANTIATE_DECODER(float)
UNETR_INSTANTIATE_DECODER(double)

#undef UNETR_INSTANTIATE_DECODER

} // namespace unetr
