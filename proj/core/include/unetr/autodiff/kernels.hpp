#pragma once

// Raw numeric kernels over contiguous row-major buffers. No shape checking
// happens here; the differentiable ops in ops.hpp validate and dispatch.
//
// Every kernel assigns each output element to exactly one thread and sums in
// a fixed order, so results do not depend on the OpenMP thread count.

#include <array>
#include <cstddef>

namespace unetr::kernels {

enum class Trans { no, yes };

/// Caps the OpenMP team size for every kernel (n >= 1).
void set_num_threads(int n);
int num_threads();

/// C[m,n] = (accumulate ? C : 0) + op(A)[m,k] * op(B)[k,n].
/// A is stored [m,k] (or [k,m] when transposed), B is [k,n] (or [n,k]).
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::array<std::size_t, 3> in_dims{};
    std::array<std::size_t, 3> out_dims{};
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// Cross-correlation. x: [Cin, in_dims], w: [Cout, Cin, k, k, k], bias may be null.
template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
/// dx += conv3d^T(dy)
template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx);
/// dw += correlation of dy with x
template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw);

/// Transposed convolution with kernel == stride (non-overlapping taps).
/// x: [Cin, in_dims], w: [Cin, Cout, s, s, s], y: [Cout, in_dims * s].
template <typename T>
void deconv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
template <typename T>
void deconv3d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx);
template <typename T>
void deconv3d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw);

/// Per-channel sum over the spatial extent, added into out[c].
template <typename T>
void channel_sums(std::size_t channels, std::size_t spatial, const T* x, T* out);

} // namespace unetr::kernels
