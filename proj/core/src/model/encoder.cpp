#include "unetr/model/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unetr/autodiff/ops.hpp"
#include "unetr/error.hpp"

namespace unetr {

namespace {

template <typename T>
ad::Tensor<T> normal_tensor(ad::Shape shape, double stddev, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, stddev);
    ad::Tensor<T> t(std::move(shape), true);
    for (auto& v : t.mutable_data())
        v = static_cast<T>(normal(rng));
    return t;
}

template <typename T>
ad::Tensor<T> filled(ad::Shape shape, T value)
{
    ad::Tensor<T> t(std::move(shape), true);
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
    return t;
}

template <typename T>
ad::Tensor<T> linear(const ad::Tensor<T>& x, const ad::Tensor<T>& w, const ad::Tensor<T>& b)
{
    return ad::add_bias(ad::matmul(x, w), b);
}

} // namespace

void EncoderConfig::validate() const
{
    if (layers == 0 || embed_dim == 0 || heads == 0 || mlp_hidden == 0)
        throw ConfigError("encoder: layers, embed_dim, heads and mlp_hidden must be positive");
    if (embed_dim % heads != 0)
        throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                          " is not divisible by heads " + std::to_string(heads));
    if (extract_layers.empty() || !std::is_sorted(extract_layers.begin(), extract_layers.end()) ||
        std::adjacent_find(extract_layers.begin(), extract_layers.end()) != extract_layers.end() ||
        extract_layers.front() == 0 || extract_layers.back() != layers)
        throw ConfigError("encoder: extract_layers must be strictly increasing within 1.." +
                          std::to_string(layers) + " and end with " + std::to_string(layers));
}

std::vector<std::size_t> EncoderConfig::default_extract_layers(std::size_t layers)
{
    if (layers < 4)
        throw ConfigError("default extraction needs at least 4 layers, got " +
                          std::to_string(layers));
    return {layers / 4, layers / 2, 3 * layers / 4, layers};
}

template <typename T>
HeadParams<T> AttentionParams<T>::head(std::size_t h, std::size_t head_dim) const
{
    const std::size_t begin = h * head_dim;
    auto cols = [&](const ad::Tensor<T>& w) { return ad::slice_columns(w, begin, head_dim); };
    auto part = [&](const ad::Tensor<T>& b) {
        return ad::reshape(ad::slice_columns(ad::reshape(b, ad::Shape{1, b.numel()}), begin, head_dim),
                           ad::Shape{head_dim});
    };
    return {cols(wq), part(bq), cols(wk), part(bk), cols(wv), part(bv)};
}

template <typename T>
BlockParams<T> BlockParams<T>::init(const EncoderConfig& cfg, std::mt19937_64& rng)
{
    const std::size_t k = cfg.embed_dim;
    const std::size_t hidden = cfg.mlp_hidden;
    BlockParams p;
    p.norm1_gamma = filled<T>({k}, T(1));
    p.norm1_beta = filled<T>({k}, T(0));
    p.attention.wq = normal_tensor<T>({k, k}, 0.02, rng);
    p.attention.bq = filled<T>({k}, T(0));
    p.attention.wk = normal_tensor<T>({k, k}, 0.02, rng);
    p.attention.bk = filled<T>({k}, T(0));
    p.attention.wv = normal_tensor<T>({k, k}, 0.02, rng);
    p.attention.bv = filled<T>({k}, T(0));
    p.attention.wo = normal_tensor<T>({k, k}, 0.02, rng);
    p.attention.bo = filled<T>({k}, T(0));
    p.norm2_gamma = filled<T>({k}, T(1));
    p.norm2_beta = filled<T>({k}, T(0));
    p.mlp_w1 = normal_tensor<T>({k, hidden}, 0.02, rng);
    p.mlp_b1 = filled<T>({hidden}, T(0));
    p.mlp_w2 = normal_tensor<T>({hidden, k}, 0.02, rng);
    p.mlp_b2 = filled<T>({k}, T(0));
    return p;
}

template <typename T>
ad::Tensor<T> attention_weights(const ad::Tensor<T>& q, const ad::Tensor<T>& k)
{
    if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
        throw ShapeError("attention_weights: q " + ad::to_string(q.shape()) + " vs k " +
                         ad::to_string(k.shape()));
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
    return ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_scale), 1);
}

template <typename T>
ad::Tensor<T> attend(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& v)
{
    return ad::matmul(attention_weights(q, k), v);
}

template <typename T>
ad::Tensor<T> self_attention(const ad::Tensor<T>& z, const HeadParams<T>& head)
{
    return attend(linear(z, head.wq, head.bq), linear(z, head.wk, head.bk),
                  linear(z, head.wv, head.bv));
}

template <typename T>
ad::Tensor<T> multi_head_attention(const ad::Tensor<T>& z, const AttentionParams<T>& params,
                                   std::size_t heads)
{
    const std::size_t width = params.wq.dim(1);
    if (heads == 0 || width % heads != 0)
        throw ShapeError("multi_head_attention: projection width " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t head_dim = width / heads;
    const auto q = linear(z, params.wq, params.bq);
    const auto k = linear(z, params.wk, params.bk);
    const auto v = linear(z, params.wv, params.bv);
    std::vector<ad::Tensor<T>> outputs;
    outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t begin = h * head_dim;
        outputs.push_back(attend(ad::slice_columns(q, begin, head_dim),
                                 ad::slice_columns(k, begin, head_dim),
                                 ad::slice_columns(v, begin, head_dim)));
    }
    const auto merged = heads == 1 ? outputs.front()
                                   : ad::concat_columns(std::span<const ad::Tensor<T>>(outputs));
    return linear(merged, params.wo, params.bo);
}

template <typename T>
ad::Tensor<T> encoder_block(const ad::Tensor<T>& z, const BlockParams<T>& block, std::size_t heads,
                            T eps)
{
    const auto attn = multi_head_attention(ad::layer_norm(z, block.norm1_gamma, block.norm1_beta, eps),
                                           block.attention, heads);
    const auto mid = ad::add(attn, z);
    const auto hidden =
        ad::gelu(linear(ad::layer_norm(mid, block.norm2_gamma, block.norm2_beta, eps), block.mlp_w1,
                        block.mlp_b1));
    return ad::add(linear(hidden, block.mlp_w2, block.mlp_b2), mid);
}

template <typename T>
std::map<std::size_t, ad::Tensor<T>> encode(const ad::Tensor<T>& z0, const EncoderConfig& cfg,
                                            const std::vector<BlockParams<T>>& blocks)
{
    cfg.validate();
    if (blocks.size() != cfg.layers)
        throw ConfigError("encode: " + std::to_string(blocks.size()) + " blocks for " +
                          std::to_string(cfg.layers) + " layers");
    if (z0.rank() != 2 || z0.dim(1) != cfg.embed_dim)
        throw ShapeError("encode: z0 " + ad::to_string(z0.shape()) + " does not have width " +
                         std::to_string(cfg.embed_dim));
    std::map<std::size_t, ad::Tensor<T>> states;
    ad::Tensor<T> z = z0;
    for (std::size_t layer = 1; layer <= cfg.layers; ++layer) {
        z = encoder_block(z, blocks[layer - 1], cfg.heads);
        if (std::binary_search(cfg.extract_layers.begin(), cfg.extract_layers.end(), layer))
            states.emplace(layer, z);
    }
    return states;
}

#define UNETR_INSTANTIATE_ENCODER(T)                                                              \
    template struct AttentionParams<T>;                                                          \
    template struct BlockParams<T>;                                                              \
    template ad::Tensor<T> attention_weights(const ad::Tensor<T>&, const ad::Tensor<T>&);        \
    template ad::Tensor<T> attend(const ad::Tensor<T>&, const ad::Tensor<T>&,                    \
                                  const ad::Tensor<T>&);                                         \
    template ad::Tensor<T> self_attention(const ad::Tensor<T>&, const HeadParams<T>&);           \
    template ad::Tensor<T> multi_head_attention(const ad::Tensor<T>&, const AttentionParams<T>&, \
                                                std::size_t);                                    \
    template ad::Tensor<T> encoder_block(const ad::Tensor<T>&, const BlockParams<T>&,            \
                                         std::size_t, T);                                        \
    template std::map<std::size_t, ad::Tensor<T>> encode(                                        \
        const ad::Tensor<T>&, const EncoderConfig&, const std::vector<BlockParams<T>>&);

UNETR_INSTANTIATE_ENCODER(float)
UNETR_INSTANTIATE_ENCODER(double)

#undef UNETR_INSTANTIATE_ENCODER

} // namespace unetr
