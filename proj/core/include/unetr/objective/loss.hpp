#pragma once

// Soft-Dice + cross-entropy loss over I voxels and J classes:
//
//   L = 1 - (1/J) sum_j (2 a_j + s) / (b_j + c_j + s)  -  (1/I) sum_ij G_ij log Y_ij
//   a_j = sum_i G_ij Y_ij,  b_j = sum_i G_ij^2,  c_j = sum_i Y_ij^2
//
// At s = 0 the Dice ratio of a class absent from both G and Y is taken as 1.

#include <cstddef>
#include <cstdint>
#include <span>

#include "unetr/autodiff/tensor.hpp"

namespace unetr {

inline constexpr double kDefaultSmooth = 1e-5;

struct LossParts {
    double dice = 0.0;
    double cross_entropy = 0.0;
    double total() const noexcept { return dice + cross_entropy; }
};

/// [I] integer labels -> [I, J] one-hot rows. Throws ShapeError on a label >= J.
template <typename T>
ad::Tensor<T> one_hot(std::span<const std::uint8_t> labels, std::size_t classes);

/// Loss on probabilities Y [I, J] against one-hot G [I, J]; differentiable
/// w.r.t. Y. Throws NumericError when a true-class probability is not positive.
template <typename T>
ad::Tensor<T> dice_ce_loss(const ad::Tensor<T>& probs, const ad::Tensor<T>& one_hot_labels,
                           T smooth = T(kDefaultSmooth), LossParts* parts = nullptr);

/// Same loss with the softmax fused in: logits [J, H, W, D] (class-major),
/// labels one per voxel. CE uses log-softmax, so it never produces NaN.
template <typename T>
ad::Tensor<T> dice_ce_loss_logits(const ad::Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                  T smooth = T(kDefaultSmooth), LossParts* parts = nullptr);

} // namespace unetr
