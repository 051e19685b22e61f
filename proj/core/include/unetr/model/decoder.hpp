#pragma once

// Convolutional decoder.
//
// Resolution level l holds feature maps at 1/2^l of the input extent and
// base_width * 2^l channels; the token grid sits at level U = log2(P).
//
//   skip i (i = 1, 2, 3 for the three shallower extracted states) targets
//   level a_i = min(i, U - 1) through U - a_i stages of
//   deconv x2 -> conv 3^3 -> norm -> act
//
//   bottleneck: z_L is taken from level U down to a_3
//   merge block: [deconv x2 when levels differ] -> concat(skip) ->
//   2 x (conv 3^3 -> norm -> act); applied for skip 3, 2, 1 and the raw input
//   head: 1x1x1 conv to J logits
//
// For P = 16 this is the 1/16 -> 1/8 -> 1/4 -> 1/2 -> 1/1 ladder.

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "unetr/autodiff/tensor.hpp"
#include "unetr/model/embedding.hpp"

namespace unetr {

struct DecoderConfig {
    std::size_t patch = 16;
    std::size_t embed_dim = 768;
    std::size_t in_channels = 1;
    std::size_t classes = 14;
    std::size_t base_width = 4;
    double slope = 0.01;
    double norm_eps = 1e-5;

    /// U = log2(P).
    std::size_t levels() const;
    std::size_t width(std::size_t level) const { return base_width << level; }
    /// Level of skip i in {1, 2, 3}.
    std::size_t skip_level(std::size_t skip) const;
    /// Throws ConfigError unless P is a power of two >= 2 and widths are positive.
    void validate() const;
};

/// One row of the channel table: a named decoder stage with its channel
/// counts and output extent.
struct DecoderStage {
    std::string name;
    std::size_t level = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    Dims3 out_dims{};
};

/// Every stage of the decoder for an input of `input_dims`, in execution order.
std::vector<DecoderStage> decoder_table(const DecoderConfig& cfg, const Dims3& input_dims);
std::string format_decoder_table(const std::vector<DecoderStage>& table);

/// conv 3^3 (no bias, followed by norm) -> instance norm -> leaky ReLU.
template <typename T>
struct ConvUnitParams {
    ad::Tensor<T> weight; // [Cout, Cin, 3, 3, 3]
    ad::Tensor<T> gamma, beta;
};

template <typename T>
struct DeconvParams {
    ad::Tensor<T> weight; // [Cin, Cout, 2, 2, 2]
    ad::Tensor<T> bias;
};

template <typename T>
struct UpStageParams {
    DeconvParams<T> up;
    ConvUnitParams<T> conv;
};

template <typename T>
struct MergeParams {
    DeconvParams<T> up; // undefined when the merge stays on one level
    ConvUnitParams<T> conv1, conv2;
};

template <typename T>
struct DecoderParams {
    std::array<std::vector<UpStageParams<T>>, 3> skips;
    std::vector<UpStageParams<T>> bottleneck;
    DeconvParams<T> bottleneck_up;
    std::array<ConvUnitParams<T>, 2> raw;
    std::array<MergeParams<T>, 4> merges; // skip 3, skip 2, skip 1, raw
    ad::Tensor<T> head_weight;            // [J, base_width, 1, 1, 1]
    ad::Tensor<T> head_bias;

    /// Conv and deconv weights ~ U(+-sqrt(6 / fan_in)), biases 0, gamma 1, beta 0.
    static DecoderParams init(const DecoderConfig& cfg, std::mt19937_64& rng);

    /// Visits every tensor with a stable dotted name, in a fixed order.
    void visit(const std::function<void(const std::string&, ad::Tensor<T>&)>& fn);
};

/// [N, K] -> [K, H/P, W/P, D/P] (channel-first grid, cells in partition order).
template <typename T>
ad::Tensor<T> reshape_sequence(const ad::Tensor<T>& z, const PatchConfig& cfg);

template <typename T>
ad::Tensor<T> conv_unit(const ad::Tensor<T>& x, const ConvUnitParams<T>& p, const DecoderConfig& cfg);

template <typename T>
ad::Tensor<T> upsample(const ad::Tensor<T>& x, const DeconvParams<T>& p);

/// Brings a reshaped token grid to its level through the given stages.
template <typename T>
ad::Tensor<T> project_skip(const ad::Tensor<T>& grid, const std::vector<UpStageParams<T>>& stages,
                           const DecoderConfig& cfg);

/// 1x1x1 conv to class logits [J, H, W, D].
template <typename T>
ad::Tensor<T> head(const ad::Tensor<T>& features, const ad::Tensor<T>& weight, const ad::Tensor<T>& bias);

/// Softmax over the class axis of [J, H, W, D] logits.
template <typename T>
ad::Tensor<T> probabilities(const ad::Tensor<T>& logits);

/// `states` holds the four extracted sequences, shallowest first, keyed by
/// layer id. `raw_input` is [C, H, W, D]. Returns logits [J, H, W, D].
template <typename T>
ad::Tensor<T> decode(const std::map<std::size_t, ad::Tensor<T>>& states, const ad::Tensor<T>& raw_input,
                     const PatchConfig& patch_cfg, const DecoderConfig& cfg,
                     const DecoderParams<T>& params);

} // namespace unetr
