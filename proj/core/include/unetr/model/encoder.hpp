#pragma once

// Pre-norm transformer encoder over the N x K token sequence.
//
//   z'_i = MSA(LN(z_{i-1})) + z_{i-1}
//   z_i  = MLP(LN(z'_i)) + z'_i,        MLP = linear -> GELU -> linear
//   MSA(z) = [SA_1(z); ...; SA_n(z)] W_msa,   SA(z) = softmax(q k^T / sqrt(K_h)) v

#include <cstddef>
#include <map>
#include <random>
#include <vector>

#include "unetr/autodiff/tensor.hpp"

namespace unetr {

struct EncoderConfig {
    std::size_t layers = 12;
    std::size_t embed_dim = 768;
    std::size_t heads = 12;
    std::size_t mlp_hidden = 3072;
    std::vector<std::size_t> extract_layers{3, 6, 9, 12};

    std::size_t head_dim() const noexcept { return heads == 0 ? 0 : embed_dim / heads; }
    /// Throws ConfigError when K % n != 0 or extract_layers is not a sorted
    /// subset of {1..L} containing L.
    void validate() const;

    /// {L/4, L/2, 3L/4, L}; {3, 6, 9, 12} for L = 12.
    static std::vector<std::size_t> default_extract_layers(std::size_t layers);
};

/// q/k/v projections of a single head (K x K_h each, with biases).
template <typename T>
struct HeadParams {
    ad::Tensor<T> wq, bq, wk, bk, wv, bv;
};

template <typename T>
struct AttentionParams {
    ad::Tensor<T> wq, bq; // [K, n*K_h], [n*K_h]; head h owns columns [h*K_h, (h+1)*K_h)
    ad::Tensor<T> wk, bk;
    ad::Tensor<T> wv, bv;
    ad::Tensor<T> wo, bo; // W_msa: [n*K_h, K]

    /// Slice of the stacked projections belonging to `head`.
    HeadParams<T> head(std::size_t head, std::size_t head_dim) const;
};

template <typename T>
struct BlockParams {
    ad::Tensor<T> norm1_gamma, norm1_beta;
    AttentionParams<T> attention;
    ad::Tensor<T> norm2_gamma, norm2_beta;
    ad::Tensor<T> mlp_w1, mlp_b1; // [K, hidden], [hidden]
    ad::Tensor<T> mlp_w2, mlp_b2; // [hidden, K], [K]

    /// Projections ~ N(0, 0.02), biases 0, norm gamma 1 / beta 0.
    static BlockParams init(const EncoderConfig& cfg, std::mt19937_64& rng);
};

/// A = softmax(q k^T / sqrt(K_h)) with K_h = q's width.
template <typename T>
ad::Tensor<T> attention_weights(const ad::Tensor<T>& q, const ad::Tensor<T>& k);

/// A v for already projected q, k, v of one head.
template <typename T>
ad::Tensor<T> attend(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& v);

/// One head: q = z Wq + bq (likewise k, v); returns A v as [N, K_h].
template <typename T>
ad::Tensor<T> self_attention(const ad::Tensor<T>& z, const HeadParams<T>& head);

template <typename T>
ad::Tensor<T> multi_head_attention(const ad::Tensor<T>& z, const AttentionParams<T>& params,
                                   std::size_t heads);

template <typename T>
ad::Tensor<T> encoder_block(const ad::Tensor<T>& z, const BlockParams<T>& block, std::size_t heads,
                            T eps = T(1e-6));

/// Runs every block; returns hidden states keyed by 1-based layer id for the
/// configured extract_layers.
template <typename T>
std::map<std::size_t, ad::Tensor<T>> encode(const ad::Tensor<T>& z0, const EncoderConfig& cfg,
                                            const std::vector<BlockParams<T>>& blocks);

} // namespace unetr
