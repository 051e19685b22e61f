#pragma once

// Differentiable tensor operations. Every op records itself on the active
// tape (see TapeScope) when at least one input requires gradients.
//
// Volumetric tensors are channel-first: [C, H, W, D] with D fastest.

#include <cstddef>
#include <span>
#include <vector>

#include "unetr/autodiff/tensor.hpp"

namespace unetr::ad {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
/// x[..., K] + bias[K]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// a[..., M, K] x b[..., K, N]. Batch extents must match, or one operand is
/// rank 2 and broadcasts over the other's batch.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// out[i] = a[indices[i]]; the general permutation/selection primitive.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> indices, Shape shape);

/// Columns [begin, begin + width) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& a, std::size_t begin, std::size_t width);
/// Side-by-side concatenation of rank-2 tensors with equal row counts.
template <typename T>
Tensor<T> concat_columns(std::span<const Tensor<T>> parts);
/// Concatenation along axis 0 (channels for [C, ...] volumes).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

struct Conv3dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// x [Cin, H, W, D], w [Cout, Cin, k, k, k], bias [Cout] or undefined.
/// Output extent per axis: floor((n + 2*padding - k) / stride) + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv3dOptions options = {});

/// x [Cin, H, W, D], w [Cin, Cout, s, s, s] with kernel == stride, so the
/// output is exactly [Cout, s*H, s*W, s*D]. Adjoint of conv3d with the same
/// weight buffer, stride s and no padding.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride);

/// Normalises over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6));
/// Per-channel normalisation over the spatial extent of a [C, ...] tensor.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps = T(1e-5));

/// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
/// Max-subtracted softmax along `axis`. Throws NumericError on NaN input.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

} // namespace unetr::ad
