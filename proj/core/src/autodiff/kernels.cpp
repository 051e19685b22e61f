#include "unetr/autodiff/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include <omp.h>

namespace unetr::kernels {

void set_num_threads(int n)
{
    omp_set_num_threads(std::max(1, n));
}

int num_threads()
{
    return omp_get_max_threads();
}

namespace {

using index_t = std::ptrdiff_t;

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols)
{
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[c * rows + r] = src[r * cols + c];
    return out;
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate)
{
    constexpr std::size_t kRows = 8;
    constexpr std::size_t kCols = 128;
    const std::size_t row_blocks = (m + kRows - 1) / kRows;
    const std::size_t col_blocks = (n + kCols - 1) / kCols;
    const auto tiles = static_cast<index_t>(row_blocks * col_blocks);

#pragma omp parallel for schedule(static)
    for (index_t t = 0; t < tiles; ++t) {
        const std::size_t i0 = (static_cast<std::size_t>(t) / col_blocks) * kRows;
        const std::size_t j0 = (static_cast<std::size_t>(t) % col_blocks) * kCols;
        const std::size_t mi = std::min(kRows, m - i0);
        const std::size_t nj = std::min(kCols, n - j0);

        alignas(64) T acc[kRows][kCols];
        for (std::size_t r = 0; r < mi; ++r)
            for (std::size_t j = 0; j < nj; ++j)
                acc[r][j] = accumulate ? c[(i0 + r) * n + j0 + j] : T{0};

        for (std::size_t p = 0; p < k; ++p) {
            const T* brow = b + p * n + j0;
            for (std::size_t r = 0; r < mi; ++r) {
                const T av = a[(i0 + r) * k + p];
                T* out = acc[r];
                for (std::size_t j = 0; j < nj; ++j)
                    out[j] += av * brow[j];
            }
        }

        for (std::size_t r = 0; r < mi; ++r)
            std::copy_n(acc[r], nj, c + (i0 + r) * n + j0);
    }
}

/// Output indices o in [lo, hi) with 0 <= o*stride + tap - pad < in_extent.
std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t in_extent,
                                                std::size_t stride, std::size_t tap,
                                                std::size_t pad)
{
    const auto s = static_cast<index_t>(stride);
    const index_t offset = static_cast<index_t>(tap) - static_cast<index_t>(pad);
    index_t lo = 0;
    if (offset < 0)
        lo = (-offset + s - 1) / s;
    const index_t last_in = static_cast<index_t>(in_extent) - 1 - offset;
    if (last_in < 0)
        return {0, 0};
    index_t hi = last_in / s + 1;
    hi = std::min(hi, static_cast<index_t>(out_extent));
    if (lo >= hi)
        return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Fixed-lane dot product; deterministic and vectorisable without -ffast-math.
template <typename T>
T dot_contiguous(const T* a, const T* b, std::size_t n)
{
    constexpr std::size_t kLanes = 8;
    T lanes[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l)
            lanes[l] += a[i + l] * b[i + l];
    T total{0};
    for (std::size_t l = 0; l < kLanes; ++l)
        total += lanes[l];
    for (; i < n; ++i)
        total += a[i] * b[i];
    return total;
}

} // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate)
{
    if (m == 0 || n == 0)
        return;
    std::vector<T> a_buf;
    std::vector<T> b_buf;
    if (trans_a == Trans::yes) {
        a_buf = transposed(a, k, m);
        a = a_buf.data();
    }
    if (trans_b == Trans::yes) {
        b_buf = transposed(b, n, k);
        b = b_buf.data();
    }
    gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t k = g.kernel;
    const std::size_t s = g.stride;
    const std::size_t p = g.padding;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = k * k * k;

#pragma omp parallel for schedule(static)
    for (index_t co_i = 0; co_i < static_cast<index_t>(g.out_channels); ++co_i) {
        const auto co = static_cast<std::size_t>(co_i);
        T* yc = y + co * out_vol;
        std::fill_n(yc, out_vol, bias != nullptr ? bias[co] : T{0});
        for (std::size_t ox = 0; ox < out_h; ++ox) {
            T* yslice = yc + ox * out_w * out_d;
            for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                const T* xc = x + ci * in_vol;
                const T* wc = w + (co * g.in_channels + ci) * taps;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ix = static_cast<index_t>(ox * s + kx) - static_cast<index_t>(p);
                    if (ix < 0 || ix >= static_cast<index_t>(in_h))
                        continue;
                    const T* xslice = xc + static_cast<std::size_t>(ix) * in_w * in_d;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto [y_lo, y_hi] = valid_range(out_w, in_w, s, ky, p);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            const auto [z_lo, z_hi] = valid_range(out_d, in_d, s, kz, p);
                            const T wv = wc[(kx * k + ky) * k + kz];
                            for (std::size_t oy = y_lo; oy < y_hi; ++oy) {
                                const std::size_t iy = oy * s + ky - p;
                                T* yrow = yslice + oy * out_d;
                                const T* xrow = xslice + iy * in_d;
                                if (s == 1) {
                                    const T* xs = xrow + (z_lo + kz - p);
                                    T* ys = yrow + z_lo;
                                    for (std::size_t t = 0; t < z_hi - z_lo; ++t)
                                        ys[t] += wv * xs[t];
                                } else {
                                    for (std::size_t oz = z_lo; oz < z_hi; ++oz)
                                        yrow[oz] += wv * xrow[oz * s + kz - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t k = g.kernel;
    const std::size_t s = g.stride;
    const std::size_t p = g.padding;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = k * k * k;

#pragma omp parallel for schedule(static)
    for (index_t ci_i = 0; ci_i < static_cast<index_t>(g.in_channels); ++ci_i) {
        const auto ci = static_cast<std::size_t>(ci_i);
        T* dxc = dx + ci * in_vol;
        for (std::size_t ox = 0; ox < out_h; ++ox) {
            for (std::size_t co = 0; co < g.out_channels; ++co) {
                const T* dyslice = dy + co * out_vol + ox * out_w * out_d;
                const T* wc = w + (co * g.in_channels + ci) * taps;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ix = static_cast<index_t>(ox * s + kx) - static_cast<index_t>(p);
                    if (ix < 0 || ix >= static_cast<index_t>(in_h))
                        continue;
                    T* dxslice = dxc + static_cast<std::size_t>(ix) * in_w * in_d;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto [y_lo, y_hi] = valid_range(out_w, in_w, s, ky, p);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            const auto [z_lo, z_hi] = valid_range(out_d, in_d, s, kz, p);
                            const T wv = wc[(kx * k + ky) * k + kz];
                            for (std::size_t oy = y_lo; oy < y_hi; ++oy) {
                                const std::size_t iy = oy * s + ky - p;
                                const T* dyrow = dyslice + oy * out_d;
                                T* dxrow = dxslice + iy * in_d;
                                if (s == 1) {
                                    T* xs = dxrow + (z_lo + kz - p);
                                    const T* ys = dyrow + z_lo;
                                    for (std::size_t t = 0; t < z_hi - z_lo; ++t)
                                        xs[t] += wv * ys[t];
                                } else {
                                    for (std::size_t oz = z_lo; oz < z_hi; ++oz)
                                        dxrow[oz * s + kz - p] += wv * dyrow[oz];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t k = g.kernel;
    const std::size_t s = g.stride;
    const std::size_t p = g.padding;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = k * k * k;
    const auto pairs = static_cast<index_t>(g.out_channels * g.in_channels);

#pragma omp parallel for schedule(static)
    for (index_t pair = 0; pair < pairs; ++pair) {
        const std::size_t co = static_cast<std::size_t>(pair) / g.in_channels;
        const std::size_t ci = static_cast<std::size_t>(pair) % g.in_channels;
        const T* dyc = dy + co * out_vol;
        const T* xc = x + ci * in_vol;
        T* dwc = dw + (co * g.in_channels + ci) * taps;
        for (std::size_t kx = 0; kx < k; ++kx) {
            const auto [x_lo, x_hi] = valid_range(out_h, in_h, s, kx, p);
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto [y_lo, y_hi] = valid_range(out_w, in_w, s, ky, p);
                for (std::size_t kz = 0; kz < k; ++kz) {
                    const auto [z_lo, z_hi] = valid_range(out_d, in_d, s, kz, p);
                    T total{0};
                    for (std::size_t ox = x_lo; ox < x_hi; ++ox) {
                        const std::size_t ix = ox * s + kx - p;
                        for (std::size_t oy = y_lo; oy < y_hi; ++oy) {
                            const std::size_t iy = oy * s + ky - p;
                            const T* dyrow = dyc + (ox * out_w + oy) * out_d;
                            const T* xrow = xc + (ix * in_w + iy) * in_d;
                            if (s == 1) {
                                total += dot_contiguous(dyrow + z_lo, xrow + z_lo + kz - p,
                                                        z_hi - z_lo);
                            } else {
                                for (std::size_t oz = z_lo; oz < z_hi; ++oz)
                                    total += dyrow[oz] * xrow[oz * s + kz - p];
                            }
                        }
                    }
                    dwc[(kx * k + ky) * k + kz] += total;
                }
            }
        }
    }
}

template <typename T>
void deconv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t s = g.stride;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = s * s * s;

#pragma omp parallel for schedule(static)
    for (index_t co_i = 0; co_i < static_cast<index_t>(g.out_channels); ++co_i) {
        const auto co = static_cast<std::size_t>(co_i);
        T* yc = y + co * out_vol;
        std::fill_n(yc, out_vol, bias != nullptr ? bias[co] : T{0});
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            const T* xc = x + ci * in_vol;
            const T* wc = w + (ci * g.out_channels + co) * taps;
            for (std::size_t a = 0; a < s; ++a)
                for (std::size_t b = 0; b < s; ++b)
                    for (std::size_t c = 0; c < s; ++c) {
                        const T wv = wc[(a * s + b) * s + c];
                        for (std::size_t ix = 0; ix < in_h; ++ix)
                            for (std::size_t iy = 0; iy < in_w; ++iy) {
                                T* yrow = yc + ((ix * s + a) * out_w + iy * s + b) * out_d + c;
                                const T* xrow = xc + (ix * in_w + iy) * in_d;
                                for (std::size_t iz = 0; iz < in_d; ++iz)
                                    yrow[iz * s] += wv * xrow[iz];
                            }
                    }
        }
    }
}

template <typename T>
void deconv3d_backward_input(const ConvGeometry& g, const T* dy, const T* w, T* dx)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t s = g.stride;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = s * s * s;

#pragma omp parallel for schedule(static)
    for (index_t ci_i = 0; ci_i < static_cast<index_t>(g.in_channels); ++ci_i) {
        const auto ci = static_cast<std::size_t>(ci_i);
        T* dxc = dx + ci * in_vol;
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            const T* dyc = dy + co * out_vol;
            const T* wc = w + (ci * g.out_channels + co) * taps;
            for (std::size_t a = 0; a < s; ++a)
                for (std::size_t b = 0; b < s; ++b)
                    for (std::size_t c = 0; c < s; ++c) {
                        const T wv = wc[(a * s + b) * s + c];
                        for (std::size_t ix = 0; ix < in_h; ++ix)
                            for (std::size_t iy = 0; iy < in_w; ++iy) {
                                const T* dyrow =
                                    dyc + ((ix * s + a) * out_w + iy * s + b) * out_d + c;
                                T* dxrow = dxc + (ix * in_w + iy) * in_d;
                                for (std::size_t iz = 0; iz < in_d; ++iz)
                                    dxrow[iz] += wv * dyrow[iz * s];
                            }
                    }
        }
    }
}

template <typename T>
void deconv3d_backward_weight(const ConvGeometry& g, const T* dy, const T* x, T* dw)
{
    const auto [in_h, in_w, in_d] = g.in_dims;
    const auto [out_h, out_w, out_d] = g.out_dims;
    const std::size_t s = g.stride;
    const std::size_t in_vol = in_h * in_w * in_d;
    const std::size_t out_vol = out_h * out_w * out_d;
    const std::size_t taps = s * s * s;
    const auto pairs = static_cast<index_t>(g.in_channels * g.out_channels);

#pragma omp parallel for schedule(static)
    for (index_t pair = 0; pair < pairs; ++pair) {
        const std::size_t ci = static_cast<std::size_t>(pair) / g.out_channels;
        const std::size_t co = static_cast<std::size_t>(pair) % g.out_channels;
        const T* xc = x + ci * in_vol;
        const T* dyc = dy + co * out_vol;
        T* dwc = dw + (ci * g.out_channels + co) * taps;
        for (std::size_t a = 0; a < s; ++a)
            for (std::size_t b = 0; b < s; ++b)
                for (std::size_t c = 0; c < s; ++c) {
                    T total{0};
                    for (std::size_t ix = 0; ix < in_h; ++ix)
                        for (std::size_t iy = 0; iy < in_w; ++iy) {
                            const T* dyrow = dyc + ((ix * s + a) * out_w + iy * s + b) * out_d + c;
                            const T* xrow = xc + (ix * in_w + iy) * in_d;
                            for (std::size_t iz = 0; iz < in_d; ++iz)
                                total += xrow[iz] * dyrow[iz * s];
                        }
                    dwc[(a * s + b) * s + c] += total;
                }
    }
}

template <typename T>
void channel_sums(std::size_t channels, std::size_t spatial, const T* x, T* out)
{
    for (std::size_t c = 0; c < channels; ++c) {
        T total{0};
        const T* xc = x + c * spatial;
        for (std::size_t i = 0; i < spatial; ++i)
            total += xc[i];
        out[c] += total;
    }
}

#define UNETR_INSTANTIATE_KERNELS(T)                                                              \
    template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t, const T*,         \
                          const T*, T*, bool);                                                    \
    template void conv3d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);      \
    template void conv3d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);         \
    template void conv3d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);        \
    template void deconv3d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);    \
    template void deconv3d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);       \
    template void deconv3d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);      \
    template void channel_sums<T>(std::size_t, std::size_t, const T*, T*);

UNETR_INSTANTIATE_KERNELS(float)
UNETR_INSTANTIATE_KERNELS(double)

#undef UNETR_INSTANTIATE_KERNELS

} // namespace unetr::kernels
