#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unetr/autodiff/tensor.hpp"
#include "unetr/model/decoder.hpp"
#include "unetr/model/embedding.hpp"
#include "unetr/model/encoder.hpp"
#include "unetr/volume.hpp"

namespace unetr {

struct ModelConfig {
    std::size_t in_channels = 1;
    std::size_t classes = 14;
    std::size_t patch = 16;
    std::size_t embed_dim = 768;
    std::size_t layers = 12;
    std::size_t heads = 12;
    std::size_t mlp_hidden = 3072;
    std::vector<std::size_t> extract_layers{3, 6, 9, 12};
    std::size_t base_width = 4;
    /// Spatial extent of one network input (the training patch / inference window).
    Dims3 input_dims{96, 96, 96};

    /// ViT-B/16 backbone, J = 14, 96^3 input.
    static ModelConfig vit_b16();
    /// Desk-scale model: P = 8, K = 64, L = 4, two heads, J = 2, 32^3 input.
    static ModelConfig toy();

    EncoderConfig encoder() const;
    DecoderConfig decoder() const;
    PatchConfig patch_config() const;
    /// Throws ConfigError on any inconsistency (including input_dims not divisible by P).
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedTensor {
    std::string name;
    ad::Tensor<T> tensor;
};

template <typename T>
struct ForwardResult {
    std::map<std::size_t, ad::Tensor<T>> states;
    ad::Tensor<T> logits; // [J, H, W, D]
};

template <typename T>
class UnetrModel {
public:
    UnetrModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }

    /// x: [C, H, W, D] with (H, W, D) == input_dims. Returns logits [J, H, W, D].
    ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
    ForwardResult<T> forward_with_states(const ad::Tensor<T>& x) const;

    /// Every learnable tensor with its stable name; handles share storage with the model.
    std::vector<NamedTensor<T>> parameters();
    std::size_t parameter_count() const;
    void zero_grad();

    EmbeddingParams<T>& embedding() noexcept { return embedding_; }
    std::vector<BlockParams<T>>& blocks() noexcept { return blocks_; }
    DecoderParams<T>& decoder() noexcept { return decoder_; }

private:
    ModelConfig config_;
    EmbeddingParams<T> embedding_;
    std::vector<BlockParams<T>> blocks_;
    DecoderParams<T> decoder_;
};

} // namespace unetr
