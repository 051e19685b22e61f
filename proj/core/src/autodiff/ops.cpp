#include "unetr/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "unetr/autodiff/kernels.hpp"
#include "unetr/autodiff/record.hpp"
#include "unetr/error.hpp"

namespace unetr::ad {

namespace {

using detail::grad_target;
using detail::record;
using detail::should_record;
using kernels::Trans;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

std::size_t batch_count(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i)
        n *= shape[i];
    return n;
}

Shape batch_shape(const Shape& shape)
{
    return Shape(shape.begin(), shape.end() - 2);
}

template <typename T>
struct RowStats {
    std::vector<T> normalized; // x_hat, same layout as the input
    std::vector<T> inv_std;    // one per row
};

// Normalises `rows` contiguous rows of length `len` to zero mean, unit variance.
template <typename T>
RowStats<T> normalize_rows(std::span<const T> x, std::size_t rows, std::size_t len, T eps)
{
    RowStats<T> stats;
    stats.normalized.resize(x.size());
    stats.inv_std.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = x.data() + r * len;
        double mean = 0.0;
        for (std::size_t i = 0; i < len; ++i)
            mean += static_cast<double>(row[i]);
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double d = static_cast<double>(row[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(len);
        const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
        stats.inv_std[r] = static_cast<T>(inv_std);
        T* out = stats.normalized.data() + r * len;
        for (std::size_t i = 0; i < len; ++i)
            out[i] = static_cast<T>((static_cast<double>(row[i]) - mean) * inv_std);
    }
    return stats;
}

// dx for x_hat = (x - mean) * inv_std given d(loss)/d(x_hat) for one row.
template <typename T>
void normalize_row_backward(const T* dxhat, const T* xhat, T inv_std, std::size_t len, T* dx)
{
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        mean_d += static_cast<double>(dxhat[i]);
        mean_dx += static_cast<double>(dxhat[i]) * static_cast<double>(xhat[i]);
    }
    mean_d /= static_cast<double>(len);
    mean_dx /= static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i)
        dx[i] += static_cast<T>(static_cast<double>(inv_std) *
                                (static_cast<double>(dxhat[i]) - mean_d -
                                 static_cast<double>(xhat[i]) * mean_dx));
}

} // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] + y[i];
    if (should_record<T>({&a, &b})) {
        record<T>("add", {&a, &b}, out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
            for (auto target : {grad_target(sa), grad_target(sb)})
                for (std::size_t i = 0; i < target.size(); ++i)
                    target[i] += so->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] - y[i];
    if (should_record<T>({&a, &b})) {
        record<T>("sub", {&a, &b}, out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
            auto ga = grad_target(sa);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += so->grad[i];
            auto gb = grad_target(sb);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] -= so->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] * y[i];
    if (should_record<T>({&a, &b})) {
        record<T>("mul", {&a, &b}, out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
            auto ga = grad_target(sa);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += so->grad[i] * sb->data[i];
            auto gb = grad_target(sb);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] += so->grad[i] * sa->data[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    const auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] * factor;
    if (should_record<T>({&a})) {
        record<T>("scale", {&a}, out, [sa = a.storage(), so = out.storage(), factor] {
            auto ga = grad_target(sa);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += so->grad[i] * factor;
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias)
{
    if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back())
        throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
    const std::size_t width = bias.numel();
    const std::size_t rows = x.numel() / width;
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    const auto xv = x.data();
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j)
            o[r * width + j] = xv[r * width + j] + bv[j];
    if (should_record<T>({&x, &bias})) {
        record<T>("add_bias", {&x, &bias}, out,
                  [sx = x.storage(), sb = bias.storage(), so = out.storage(), rows, width] {
                      auto gx = grad_target(sx);
                      for (std::size_t i = 0; i < gx.size(); ++i)
                          gx[i] += so->grad[i];
                      auto gb = grad_target(sb);
                      if (!gb.empty())
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < width; ++j)
                                  gb[j] += so->grad[r * width + j];
                  });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    T total{0};
    for (const T v : a.data())
        total += v;
    Tensor<T> out = Tensor<T>::scalar(total);
    if (should_record<T>({&a})) {
        record<T>("sum", {&a}, out, [sa = a.storage(), so = out.storage()] {
            auto ga = grad_target(sa);
            for (auto& g : ga)
                g += so->grad[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a)
{
    return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
    const std::size_t m = a.shape()[a.rank() - 2];
    const std::size_t k = a.shape().back();
    const std::size_t kb = b.shape()[b.rank() - 2];
    const std::size_t n = b.shape().back();
    const Shape a_batch = batch_shape(a.shape());
    const Shape b_batch = batch_shape(b.shape());
    if (k != kb || (!a_batch.empty() && !b_batch.empty() && a_batch != b_batch))
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));

    Shape out_shape = a_batch.empty() ? b_batch : a_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    const std::size_t batches = batch_count(out_shape);
    const std::size_t a_step = a_batch.empty() ? 0 : m * k;
    const std::size_t b_step = b_batch.empty() ? 0 : k * n;

    Tensor<T> out(out_shape);
    T* c = out.mutable_data().data();
    if (b_step == 0 && a_step != 0) {
        kernels::gemm(Trans::no, Trans::no, batches * m, n, k, a.data().data(), b.data().data(), c,
                      false);
    } else {
        for (std::size_t i = 0; i < batches; ++i)
            kernels::gemm(Trans::no, Trans::no, m, n, k, a.data().data() + i * a_step,
                          b.data().data() + i * b_step, c + i * m * n, false);
    }

    if (should_record<T>({&a, &b})) {
        record<T>("matmul", {&a, &b}, out,
                  [sa = a.storage(), sb = b.storage(), so = out.storage(), m, n, k, batches,
                   a_step, b_step] {
                      const T* g = so->grad.data();
                      auto ga = grad_target(sa);
                      auto gb = grad_target(sb);
                      if (!ga.empty()) {
                          for (std::size_t i = 0; i < batches; ++i)
                              kernels::gemm(Trans::no, Trans::yes, m, k, n, g + i * m * n,
                                            sb->data.data() + i * b_step, ga.data() + i * a_step,
                                            true);
                      }
                      if (!gb.empty()) {
                          if (b_step == 0 && a_step != 0) {
                              kernels::gemm(Trans::yes, Trans::no, k, n, batches * m,
                                            sa->data.data(), g, gb.data(), true);
                          } else {
                              for (std::size_t i = 0; i < batches; ++i)
                                  kernels::gemm(Trans::yes, Trans::no, k, n, m,
                                                sa->data.data() + i * a_step, g + i * m * n,
                                                gb.data() + i * b_step, true);
                          }
                      }
                  });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a)
{
    if (a.rank() < 2)
        throw ShapeError("transpose needs rank >= 2, got " + to_string(a.shape()));
    const std::size_t rows = a.shape()[a.rank() - 2];
    const std::size_t cols = a.shape().back();
    const std::size_t batches = batch_count(a.shape());
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    Tensor<T> out(shape);
    auto o = out.mutable_data();
    const auto x = a.data();
    for (std::size_t bi = 0; bi < batches; ++bi) {
        const std::size_t off = bi * rows * cols;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                o[off + c * rows + r] = x[off + r * cols + c];
    }
    if (should_record<T>({&a})) {
        record<T>("transpose", {&a}, out, [sa = a.storage(), so = out.storage(), rows, cols, batches] {
            auto ga = grad_target(sa);
            for (std::size_t bi = 0; bi < batches; ++bi) {
                const std::size_t off = bi * rows * cols;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                        ga[off + r * cols + c] += so->grad[off + c * rows + r];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    if (numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
    if (should_record<T>({&a})) {
        record<T>("reshape", {&a}, out, [sa = a.storage(), so = out.storage()] {
            auto ga = grad_target(sa);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += so->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> indices, Shape shape)
{
    if (numel(shape) != indices.size())
        throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " +
                         to_string(shape));
    const auto x = a.data();
    std::vector<T> values(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.size())
            throw ShapeError("gather: index " + std::to_string(indices[i]) +
                             " out of range for " + to_string(a.shape()));
        values[i] = x[indices[i]];
    }
    Tensor<T> out(std::move(shape), std::move(values));
    if (should_record<T>({&a})) {
        record<T>("gather", {&a}, out,
                  [sa = a.storage(), so = out.storage(), idx = std::move(indices)] {
                      auto ga = grad_target(sa);
                      for (std::size_t i = 0; i < idx.size(); ++i)
                          ga[idx[i]] += so->grad[i];
                  });
    }
    return out;
}

template <typename T>
Tensor<T> slice_columns(const Tensor<T>& a, std::size_t begin, std::size_t width)
{
    if (a.rank() != 2 || begin + width > a.dim(1))
        throw ShapeError("slice_columns: [" + std::to_string(begin) + "," +
                         std::to_string(begin + width) + ") out of range for " +
                         to_string(a.shape()));
    const std::size_t rows = a.dim(0);
    const std::size_t cols = a.dim(1);
    Tensor<T> out(Shape{rows, width});
    auto o = out.mutable_data();
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.data() + r * cols + begin, width, o.data() + r * width);
    if (should_record<T>({&a})) {
        record<T>("slice_columns", {&a}, out,
                  [sa = a.storage(), so = out.storage(), rows, cols, begin, width] {
                      auto ga = grad_target(sa);
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < width; ++j)
                              ga[r * cols + begin + j] += so->grad[r * width + j];
                  });
    }
    return out;
}

template <typename T>
Tensor<T> concat_columns(std::span<const Tensor<T>> parts)
{
    if (parts.empty())
        throw ShapeError("concat_columns: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw ShapeError("concat_columns: incompatible part " + to_string(p.shape()));
        cols += p.dim(1);
    }
    Tensor<T> out(Shape{rows, cols});
    auto o = out.mutable_data();
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        const auto x = p.data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(x.data() + r * w, w, o.data() + r * cols + offset);
        offset += w;
    }

    bool any = false;
    if (active_tape<T>() != nullptr)
        for (const auto& p : parts)
            any = any || p.requires_grad();
    if (any) {
        typename ComputationTape<T>::Entry entry;
        entry.op = "concat_columns";
        std::vector<std::shared_ptr<TensorStorage<T>>> storages;
        for (const auto& p : parts)
            storages.push_back(p.storage());
        entry.inputs = storages;
        out.set_requires_grad(true);
        entry.output = out.storage();
        entry.backward = [storages, so = out.storage(), rows, cols] {
            std::size_t off = 0;
            for (const auto& s : storages) {
                const std::size_t w = s->shape[1];
                auto g = grad_target(s);
                if (!g.empty())
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < w; ++j)
                            g[r * w + j] += so->grad[r * cols + off + j];
                off += w;
            }
        };
        active_tape<T>()->record(std::move(entry));
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
        throw ShapeError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    Tensor<T> out(shape);
    auto o = out.mutable_data();
    std::copy(a.data().begin(), a.data().end(), o.begin());
    std::copy(b.data().begin(), b.data().end(), o.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    if (should_record<T>({&a, &b})) {
        record<T>("concat_channels", {&a, &b}, out,
                  [sa = a.storage(), sb = b.storage(), so = out.storage()] {
                      auto ga = grad_target(sa);
                      for (std::size_t i = 0; i < ga.size(); ++i)
                          ga[i] += so->grad[i];
                      auto gb = grad_target(sb);
                      const std::size_t off = sa->data.size();
                      for (std::size_t i = 0; i < gb.size(); ++i)
                          gb[i] += so->grad[off + i];
                  });
    }
    return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv3dOptions options)
{
    if (x.rank() != 4 || w.rank() != 5 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3) ||
        w.dim(3) != w.dim(4))
        throw ShapeError("conv3d: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
    if (options.stride == 0)
        throw ConfigError("conv3d: stride must be positive");
    kernels::ConvGeometry g;
    g.in_channels = x.dim(0);
    g.out_channels = w.dim(0);
    g.kernel = w.dim(2);
    g.stride = options.stride;
    g.padding = options.padding;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t n = x.dim(axis + 1) + 2 * options.padding;
        if (n < g.kernel)
            throw ConfigError("conv3d: negative output extent on axis " + std::to_string(axis) +
                              " (input " + to_string(x.shape()) + ", kernel " +
                              std::to_string(g.kernel) + ", padding " +
                              std::to_string(options.padding) + ")");
        g.in_dims[axis] = x.dim(axis + 1);
        g.out_dims[axis] = (n - g.kernel) / options.stride + 1;
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels))
        throw ShapeError("conv3d: bias " + to_string(bias.shape()) + " for " +
                         std::to_string(g.out_channels) + " output channels");

    Tensor<T> out(Shape{g.out_channels, g.out_dims[0], g.out_dims[1], g.out_dims[2]});
    kernels::conv3d_forward(g, x.data().data(), w.data().data(),
                            bias.defined() ? bias.data().data() : nullptr,
                            out.mutable_data().data());

    if (should_record<T>({&x, &w, &bias})) {
        record<T>("conv3d", {&x, &w, &bias}, out,
                  [sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage(), g] {
                      const T* dy = so->grad.data();
                      if (auto gx = grad_target(sx); !gx.empty())
                          kernels::conv3d_backward_input(g, dy, sw->data.data(), gx.data());
                      if (auto gw = grad_target(sw); !gw.empty())
                          kernels::conv3d_backward_weight(g, dy, sx->data.data(), gw.data());
                      if (auto gb = grad_target(sb); !gb.empty())
                          kernels::channel_sums(g.out_channels,
                                                g.out_dims[0] * g.out_dims[1] * g.out_dims[2], dy,
                                                gb.data());
                  });
    }
    return out;
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride)
{
    if (x.rank() != 4 || w.rank() != 5 || w.dim(0) != x.dim(0))
        throw ShapeError("conv_transpose3d: input " + to_string(x.shape()) +
                         " incompatible with weight " + to_string(w.shape()));
    if (stride == 0 || w.dim(2) != stride || w.dim(3) != stride || w.dim(4) != stride)
        throw ShapeError("conv_transpose3d: kernel " + to_string(w.shape()) +
                         " must equal the stride " + std::to_string(stride) + " on every axis");
    kernels::ConvGeometry g;
    g.in_channels = x.dim(0);
    g.out_channels = w.dim(1);
    g.kernel = stride;
    g.stride = stride;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        g.in_dims[axis] = x.dim(axis + 1);
        g.out_dims[axis] = x.dim(axis + 1) * stride;
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels))
        throw ShapeError("conv_transpose3d: bias " + to_string(bias.shape()) + " for " +
                         std::to_string(g.out_channels) + " output channels");

    Tensor<T> out(Shape{g.out_channels, g.out_dims[0], g.out_dims[1], g.out_dims[2]});
    kernels::deconv3d_forward(g, x.data().data(), w.data().data(),
                              bias.defined() ? bias.data().data() : nullptr,
                              out.mutable_data().data());

    if (should_record<T>({&x, &w, &bias})) {
        record<T>("conv_transpose3d", {&x, &w, &bias}, out,
                  [sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage(), g] {
                      const T* dy = so->grad.data();
                      if (auto gx = grad_target(sx); !gx.empty())
                          kernels::deconv3d_backward_input(g, dy, sw->data.data(), gx.data());
                      if (auto gw = grad_target(sw); !gw.empty())
                          kernels::deconv3d_backward_weight(g, dy, sx->data.data(), gw.data());
                      if (auto gb = grad_target(sb); !gb.empty())
                          kernels::channel_sums(g.out_channels,
                                                g.out_dims[0] * g.out_dims[1] * g.out_dims[2], dy,
                                                gb.data());
                  });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    if (x.rank() == 0 || x.shape().back() == 0)
        throw ShapeError("layer_norm: empty normalisation axis in " + to_string(x.shape()));
    const std::size_t width = x.shape().back();
    if (gamma.shape() != Shape{width} || beta.shape() != Shape{width})
        throw ShapeError("layer_norm: affine parameters must be [" + std::to_string(width) + "]");
    const std::size_t rows = x.numel() / width;
    auto stats = normalize_rows(x.data(), rows, width, eps);

    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j)
            o[r * width + j] = stats.normalized[r * width + j] * gv[j] + bv[j];

    if (should_record<T>({&x, &gamma, &beta})) {
        record<T>("layer_norm", {&x, &gamma, &beta}, out,
                  [sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage(),
                   stats = std::move(stats), rows, width] {
                      const T* dy = so->grad.data();
                      if (auto gg = grad_target(sg); !gg.empty())
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < width; ++j)
                                  gg[j] += dy[r * width + j] * stats.normalized[r * width + j];
                      if (auto gb = grad_target(sb); !gb.empty())
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < width; ++j)
                                  gb[j] += dy[r * width + j];
                      if (auto gx = grad_target(sx); !gx.empty()) {
                          std::vector<T> dxhat(width);
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < width; ++j)
                                  dxhat[j] = dy[r * width + j] * sg->data[j];
                              normalize_row_backward(dxhat.data(),
                                                     stats.normalized.data() + r * width,
                                                     stats.inv_std[r], width,
                                                     gx.data() + r * width);
                          }
                      }
                  });
    }
    return out;
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    if (x.rank() < 2 || x.numel() == 0)
        throw ShapeError("instance_norm: expected [C, ...], got " + to_string(x.shape()));
    const std::size_t channels = x.dim(0);
    const std::size_t spatial = x.numel() / channels;
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
        throw ShapeError("instance_norm: affine parameters must be [" + std::to_string(channels) +
                         "]");
    auto stats = normalize_rows(x.data(), channels, spatial, eps);

    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < spatial; ++i)
            o[c * spatial + i] = stats.normalized[c * spatial + i] * gv[c] + bv[c];

    if (should_record<T>({&x, &gamma, &beta})) {
        record<T>("instance_norm", {&x, &gamma, &beta}, out,
                  [sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage(),
                   stats = std::move(stats), channels, spatial] {
                      const T* dy = so->grad.data();
                      auto gg = grad_target(sg);
                      auto gb = grad_target(sb);
                      auto gx = grad_target(sx);
                      std::vector<T> dxhat(spatial);
                      for (std::size_t c = 0; c < channels; ++c) {
                          const T* dyc = dy + c * spatial;
                          const T* xhat = stats.normalized.data() + c * spatial;
                          if (!gg.empty()) {
                              T acc{0};
                              for (std::size_t i = 0; i < spatial; ++i)
                                  acc += dyc[i] * xhat[i];
                              gg[c] += acc;
                          }
                          if (!gb.empty()) {
                              T acc{0};
                              for (std::size_t i = 0; i < spatial; ++i)
                                  acc += dyc[i];
                              gb[c] += acc;
                          }
                          if (!gx.empty()) {
                              for (std::size_t i = 0; i < spatial; ++i)
                                  dxhat[i] = dyc[i] * sg->data[c];
                              normalize_row_backward(dxhat.data(), xhat, stats.inv_std[c], spatial,
                                                     gx.data() + c * spatial);
                          }
                      }
                  });
    }
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x)
{
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = xv[i] * T(0.5) * (T(1) + std::erf(xv[i] * std::numbers::sqrt2_v<T> / T(2)));
    if (should_record<T>({&x})) {
        record<T>("gelu", {&x}, out, [sx = x.storage(), so = out.storage()] {
            auto gx = grad_target(sx);
            const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const T v = sx->data[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * std::numbers::sqrt2_v<T> / T(2)));
                const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                gx[i] += so->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope)
{
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = xv[i] > T(0) ? xv[i] : xv[i] * slope;
    if (should_record<T>({&x})) {
        record<T>("leaky_relu", {&x}, out, [sx = x.storage(), so = out.storage(), slope] {
            auto gx = grad_target(sx);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += so->grad[i] * (sx->data[i] > T(0) ? T(1) : slope);
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis)
{
    if (axis >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
    const auto& shape = x.shape();
    const std::size_t n = shape[axis];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i)
        outer *= shape[i];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < shape.size(); ++i)
        inner *= shape[i];

    const auto xv = x.data();
    for (const T v : xv)
        if (std::isnan(v))
            throw NumericError("softmax: NaN input");

    Tensor<T> out(shape);
    auto o = out.mutable_data();
    for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
            const std::size_t base = a * n * inner + b;
            T peak = xv[base];
            for (std::size_t j = 1; j < n; ++j)
                peak = std::max(peak, xv[base + j * inner]);
            T total{0};
            for (std::size_t j = 0; j < n; ++j) {
                const T e = std::exp(xv[base + j * inner] - peak);
                o[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j)
                o[base + j * inner] /= total;
        }
    }

    if (should_record<T>({&x})) {
        record<T>("softmax", {&x}, out, [sx = x.storage(), so = out.storage(), outer, inner, n] {
            auto gx = grad_target(sx);
            const auto& y = so->data;
            const auto& g = so->grad;
            for (std::size_t a = 0; a < outer; ++a) {
                for (std::size_t b = 0; b < inner; ++b) {
                    const std::size_t base = a * n * inner + b;
                    T dot{0};
                    for (std::size_t j = 0; j < n; ++j)
                        dot += g[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = base + j * inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

#define UNETR_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> scale(const Tensor<T>&, T);                                               \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sum(const Tensor<T>&);                                                    \
    template Tensor<T> mean(const Tensor<T>&);                                                   \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> transpose(const Tensor<T>&);                                              \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
    template Tensor<T> gather(const Tensor<T>&, std::vector<std::size_t>, Shape);                \
    template Tensor<T> slice_columns(const Tensor<T>&, std::size_t, std::size_t);                \
    template Tensor<T> concat_columns(std::span<const Tensor<T>>);                               \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                              Conv3dOptions);                                                    \
    template Tensor<T> conv_transpose3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        std::size_t);                                            \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
    template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
    template Tensor<T> gelu(const Tensor<T>&);                                                   \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                          \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);

UNETR_INSTANTIATE_OPS(float)
UNETR_INSTANTIATE_OPS(double)

#undef UNETR_INSTANTIATE_OPS

} // namespace unetr::ad
