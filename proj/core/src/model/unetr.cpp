#include "unetr/model/unetr.hpp"

#include <random>

#include "unetr/error.hpp"

namespace unetr {

ModelConfig ModelConfig::vit_b16()
{
    return ModelConfig{};
}

ModelConfig ModelConfig::toy()
{
    ModelConfig cfg;
    cfg.classes = 2;
    cfg.patch = 8;
    cfg.embed_dim = 64;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.mlp_hidden = 256;
    cfg.extract_layers = {1, 2, 3, 4};
    cfg.base_width = 4;
    cfg.input_dims = {32, 32, 32};
    return cfg;
}

EncoderConfig ModelConfig::encoder() const
{
    return {layers, embed_dim, heads, mlp_hidden, extract_layers};
}

DecoderConfig ModelConfig::decoder() const
{
    DecoderConfig d;
    d.patch = patch;
    d.embed_dim = embed_dim;
    d.in_channels = in_channels;
    d.classes = classes;
    d.base_width = base_width;
    return d;
}

PatchConfig ModelConfig::patch_config() const
{
    return PatchConfig::for_volume(input_dims, patch, in_channels, embed_dim);
}

void ModelConfig::validate() const
{
    encoder().validate();
    decoder().validate();
    if (extract_layers.size() != 4)
        throw ConfigError("model: exactly 4 extract layers are required, got " +
                          std::to_string(extract_layers.size()));
    for (std::size_t axis = 0; axis < 3; ++axis)
        if (input_dims[axis] == 0 || input_dims[axis] % patch != 0)
            throw ConfigError("model: input extent " + to_string(input_dims) +
                              " is not divisible by patch " + std::to_string(patch));
}

template <typename T>
UnetrModel<T>::UnetrModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    std::mt19937_64 rng(seed);
    embedding_ = EmbeddingParams<T>::init(config_.patch_config(), rng);
    const auto enc = config_.encoder();
    blocks_.reserve(enc.layers);
    for (std::size_t i = 0; i < enc.layers; ++i)
        blocks_.push_back(BlockParams<T>::init(enc, rng));
    decoder_ = DecoderParams<T>::init(config_.decoder(), rng);
}

template <typename T>
ForwardResult<T> UnetrModel<T>::forward_with_states(const ad::Tensor<T>& x) const
{
    const auto& d = config_.input_dims;
    if (x.rank() != 4 || x.dim(0) != config_.in_channels || x.dim(1) != d[0] || x.dim(2) != d[1] ||
        x.dim(3) != d[2])
        throw ShapeError("model input " + ad::to_string(x.shape()) + " does not match [" +
                         std::to_string(config_.in_channels) + ", " + to_string(d) + "]");
    ForwardResult<T> result;
    const auto z0 = embed(partition(x, config_.patch), embedding_);
    result.states = encode(z0, config_.encoder(), blocks_);
    result.logits = decode(result.states, x, config_.patch_config(), config_.decoder(), decoder_);
    return result;
}

template <typename T>
ad::Tensor<T> UnetrModel<T>::forward(const ad::Tensor<T>& x) const
{
    return forward_with_states(x).logits;
}

template <typename T>
std::vector<NamedTensor<T>> UnetrModel<T>::parameters()
{
    std::vector<NamedTensor<T>> out;
    auto add = [&](const std::string& name, ad::Tensor<T>& t) { out.push_back({name, t}); };
    add("embed.projection", embedding_.projection);
    add("embed.positions", embedding_.positions);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        auto& b = blocks_[i];
        const std::string base = "encoder.layer" + std::to_string(i + 1) + ".";
        add(base + "norm1.gamma", b.norm1_gamma);
        add(base + "norm1.beta", b.norm1_beta);
        add(base + "attn.wq", b.attention.wq);
        add(base + "attn.bq", b.attention.bq);
        add(base + "attn.wk", b.attention.wk);
        add(base + "attn.bk", b.attention.bk);
        add(base + "attn.wv", b.attention.wv);
        add(base + "attn.bv", b.attention.bv);
        add(base + "attn.wo", b.attention.wo);
        add(base + "attn.bo", b.attention.bo);
        add(base + "norm2.gamma", b.norm2_gamma);
        add(base + "norm2.beta", b.norm2_beta);
        add(base + "mlp.w1", b.mlp_w1);
        add(base + "mlp.b1", b.mlp_b1);
        add(base + "mlp.w2", b.mlp_w2);
        add(base + "mlp.b2", b.mlp_b2);
    }
    decoder_.visit(add);
    return out;
}

template <typename T>
std::size_t UnetrModel<T>::parameter_count() const
{
    std::size_t total = 0;
    for (const auto& p : const_cast<UnetrModel*>(this)->parameters())
        total += p.tensor.numel();
    return total;
}

template <typename T>
void UnetrModel<T>::zero_grad()
{
    for (auto& p : parameters())
        p.tensor.zero_grad();
}

template class UnetrModel<float>;
template class UnetrModel<double>;

} // namespace unetr
