#include "unetr/model/embedding.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "unetr/autodiff/ops.hpp"
#include "unetr/error.hpp"

namespace unetr {

namespace {

// Source offset (in a [C, H, W, D] buffer) of every partition output entry.
std::vector<std::size_t> partition_index(const PatchConfig& cfg)
{
    const std::size_t p = cfg.patch;
    const Dims3 dims = cfg.volume_dims();
    const std::size_t width = cfg.patch_width();
    std::vector<std::size_t> index(cfg.sequence_length() * width);
    std::size_t row = 0;
    for (std::size_t gx = 0; gx < cfg.grid[0]; ++gx)
        for (std::size_t gy = 0; gy < cfg.grid[1]; ++gy)
            for (std::size_t gz = 0; gz < cfg.grid[2]; ++gz, ++row) {
                std::size_t col = 0;
                for (std::size_t c = 0; c < cfg.channels; ++c)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t py = 0; py < p; ++py)
                            for (std::size_t pz = 0; pz < p; ++pz, ++col) {
                                const std::size_t x = gx * p + px;
                                const std::size_t y = gy * p + py;
                                const std::size_t z = gz * p + pz;
                                index[row * width + col] =
                                    ((c * dims[0] + x) * dims[1] + y) * dims[2] + z;
                            }
            }
    return index;
}

} // namespace

PatchConfig PatchConfig::for_volume(const Dims3& dims, std::size_t patch, std::size_t channels,
                                    std::size_t embed_dim)
{
    if (patch == 0)
        throw ConfigError("patch size must be positive");
    PatchConfig cfg;
    cfg.patch = patch;
    cfg.channels = channels;
    cfg.embed_dim = embed_dim;
    for (std::size_t a = 0; a < 3; ++a)
        cfg.grid[a] = (dims[a] + patch - 1) / patch;
    return cfg;
}

Dims3 padded_extent(const Dims3& dims, std::size_t patch)
{
    return PatchConfig::for_volume(dims, patch, 1, 1).volume_dims();
}

template <typename T>
EmbeddingParams<T> EmbeddingParams<T>::init(const PatchConfig& cfg, std::mt19937_64& rng)
{
    const std::size_t fan_in = cfg.patch_width();
    const std::size_t k = cfg.embed_dim;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + k));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    std::normal_distribution<double> normal(0.0, 0.02);

    EmbeddingParams params;
    params.projection = ad::Tensor<T>(ad::Shape{fan_in, k}, true);
    for (auto& v : params.projection.mutable_data())
        v = static_cast<T>(uniform(rng));
    params.positions = ad::Tensor<T>(ad::Shape{cfg.sequence_length(), k}, true);
    for (auto& v : params.positions.mutable_data())
        v = static_cast<T>(normal(rng));
    return params;
}

template <typename T>
ad::Tensor<T> partition(const ad::Tensor<T>& volume, std::size_t patch)
{
    if (volume.rank() != 4)
        throw ShapeError("partition expects [C, H, W, D], got " + ad::to_string(volume.shape()));
    if (patch == 0)
        throw ConfigError("partition: patch size must be positive");
    const Dims3 dims{volume.dim(1), volume.dim(2), volume.dim(3)};
    for (const std::size_t d : dims)
        if (d % patch != 0)
            throw ShapeError("partition: volume " + to_string(dims) + " is not divisible by patch " +
                             std::to_string(patch) + "; pad to " +
                             to_string(padded_extent(dims, patch)) + " first");
    const auto cfg = PatchConfig::for_volume(dims, patch, volume.dim(0), 0);
    return ad::gather(volume, partition_index(cfg),
                      ad::Shape{cfg.sequence_length(), cfg.patch_width()});
}

template <typename T>
ad::Tensor<T> unpartition(const ad::Tensor<T>& patches, const PatchConfig& cfg)
{
    if (patches.rank() != 2 || patches.dim(0) != cfg.sequence_length() ||
        patches.dim(1) != cfg.patch_width())
        throw ShapeError("unpartition: patches " + ad::to_string(patches.shape()) +
                         " inconsistent with grid " + to_string(cfg.grid) + " (expected [" +
                         std::to_string(cfg.sequence_length()) + "," +
                         std::to_string(cfg.patch_width()) + "])");
    const auto forward = partition_index(cfg);
    std::vector<std::size_t> inverse(forward.size());
    for (std::size_t i = 0; i < forward.size(); ++i)
        inverse[forward[i]] = i;
    const Dims3 dims = cfg.volume_dims();
    return ad::gather(patches, std::move(inverse), ad::Shape{cfg.channels, dims[0], dims[1], dims[2]});
}

template <typename T>
ad::Tensor<T> embed(const ad::Tensor<T>& patches, const EmbeddingParams<T>& params)
{
    if (patches.rank() != 2 || patches.dim(1) != params.projection.dim(0) ||
        patches.dim(0) != params.positions.dim(0))
        throw ShapeError("embed: patches " + ad::to_string(patches.shape()) + " vs projection " +
                         ad::to_string(params.projection.shape()) + " and positions " +
                         ad::to_string(params.positions.shape()));
    return ad::add(ad::matmul(patches, params.projection), params.positions);
}

template struct EmbeddingParams<float>;
template struct EmbeddingParams<double>;
template ad::Tensor<float> partition(const ad::Tensor<float>&, std::size_t);
template ad::Tensor<double> partition(const ad::Tensor<double>&, std::size_t);
template ad::Tensor<float> unpartition(const ad::Tensor<float>&, const PatchConfig&);
template ad::Tensor<double> unpartition(const ad::Tensor<double>&, const PatchConfig&);
template ad::Tensor<float> embed(const ad::Tensor<float>&, const EmbeddingParams<float>&);
template ad::Tensor<double> embed(const ad::Tensor<double>&, const EmbeddingParams<double>&);

} // namespace unetr
