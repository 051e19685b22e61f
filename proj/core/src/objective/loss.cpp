#include "unetr/objective/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "unetr/autodiff/record.hpp"
#include "unetr/error.hpp"

namespace unetr {

namespace {

// Per-class Dice sums; element (i, j) lives at i * row + j * col.
struct DiceSums {
    std::vector<double> a, b, c;
};

template <typename T>
DiceSums dice_sums(std::span<const T> y, std::span<const T> g, std::size_t voxels, std::size_t classes,
                   std::size_t row, std::size_t col)
{
    DiceSums s{std::vector<double>(classes, 0.0), std::vector<double>(classes, 0.0),
               std::vector<double>(classes, 0.0)};
    for (std::size_t j = 0; j < classes; ++j)
        for (std::size_t i = 0; i < voxels; ++i) {
            const double yv = y[i * row + j * col];
            const double gv = g[i * row + j * col];
            s.a[j] += gv * yv;
            s.b[j] += gv * gv;
            s.c[j] += yv * yv;
        }
    return s;
}

double dice_ratio(double a, double b, double c, double smooth)
{
    const double den = b + c + smooth;
    return den == 0.0 ? 1.0 : (2.0 * a + smooth) / den;
}

double dice_term(const DiceSums& s, double smooth)
{
    double acc = 0.0;
    for (std::size_t j = 0; j < s.a.size(); ++j)
        acc += dice_ratio(s.a[j], s.b[j], s.c[j], smooth);
    return 1.0 - acc / static_cast<double>(s.a.size());
}

// d(dice term)/dY_ij = -(1/J) [2 G_ij / den_j - (2 a_j + s) 2 Y_ij / den_j^2]
struct DiceGrad {
    std::vector<double> g_coef; // -(1/J) 2 / den_j
    std::vector<double> y_coef; // (1/J) 2 (2 a_j + s) / den_j^2
};

DiceGrad dice_grad(const DiceSums& s, double smooth)
{
    const std::size_t classes = s.a.size();
    const double inv_j = 1.0 / static_cast<double>(classes);
    DiceGrad d{std::vector<double>(classes, 0.0), std::vector<double>(classes, 0.0)};
    for (std::size_t j = 0; j < classes; ++j) {
        const double den = s.b[j] + s.c[j] + smooth;
        if (den == 0.0)
            continue;
        d.g_coef[j] = -inv_j * 2.0 / den;
        d.y_coef[j] = inv_j * 2.0 * (2.0 * s.a[j] + smooth) / (den * den);
    }
    return d;
}

} // namespace

template <typename T>
ad::Tensor<T> one_hot(std::span<const std::uint8_t> labels, std::size_t classes)
{
    ad::Tensor<T> out(ad::Shape{labels.size(), classes});
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw ShapeError("one_hot: label " + std::to_string(labels[i]) + " at voxel " +
                             std::to_string(i) + " is not below " + std::to_string(classes));
        o[i * classes + labels[i]] = T(1);
    }
    return out;
}

template <typename T>
ad::Tensor<T> dice_ce_loss(const ad::Tensor<T>& probs, const ad::Tensor<T>& one_hot_labels, T smooth,
                           LossParts* parts)
{
    if (probs.rank() != 2 || probs.shape() != one_hot_labels.shape())
        throw ShapeError("dice_ce_loss: probabilities " + ad::to_string(probs.shape()) +
                         " vs labels " + ad::to_string(one_hot_labels.shape()));
    const std::size_t voxels = probs.dim(0);
    const std::size_t classes = probs.dim(1);
    const auto y = probs.data();
    const auto g = one_hot_labels.data();

    double ce = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (g[i] == T(0))
            continue;
        if (!(y[i] > T(0)))
            throw NumericError("dice_ce_loss: non-positive probability at a true class (entry " +
                               std::to_string(i) + ")");
        ce -= static_cast<double>(g[i]) * std::log(static_cast<double>(y[i]));
    }
    ce /= static_cast<double>(voxels);
    const DiceSums sums = dice_sums(y, g, voxels, classes, classes, 1);
    const LossParts lp{dice_term(sums, smooth), ce};
    if (parts != nullptr)
        *parts = lp;

    auto out = ad::Tensor<T>::scalar(static_cast<T>(lp.total()));
    if (ad::detail::should_record<T>({&probs})) {
        ad::detail::record<T>(
            "dice_ce_loss", {&probs, &one_hot_labels}, out,
            [sy = probs.storage(), sg = one_hot_labels.storage(), so = out.storage(), voxels, classes,
             grad = dice_grad(sums, smooth)] {
                auto gy = ad::detail::grad_target(sy);
                if (gy.empty())
                    return;
                const double seed = so->grad[0];
                const auto& y = sy->data;
                const auto& g = sg->data;
                const double inv_i = 1.0 / static_cast<double>(voxels);
                for (std::size_t i = 0; i < voxels; ++i)
                    for (std::size_t j = 0; j < classes; ++j) {
                        const std::size_t idx = i * classes + j;
                        double d = grad.g_coef[j] * g[idx] + grad.y_coef[j] * y[idx];
                        if (g[idx] != T(0))
                            d -= inv_i * g[idx] / y[idx];
                        gy[idx] += static_cast<T>(seed * d);
                    }
            });
    }
    return out;
}

template <typename T>
ad::Tensor<T> dice_ce_loss_logits(const ad::Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                  T smooth, LossParts* parts)
{
    if (logits.rank() < 2)
        throw ShapeError("dice_ce_loss_logits: logits " + ad::to_string(logits.shape()) +
                         " need a class axis and at least one spatial axis");
    const std::size_t classes = logits.dim(0);
    const std::size_t voxels = logits.numel() / classes;
    if (labels.size() != voxels)
        throw ShapeError("dice_ce_loss_logits: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(voxels) + " voxels");
    const auto x = logits.data();

    // Probabilities and one-hot, class-major like the logits.
    std::vector<T> y(x.size());
    std::vector<T> g(x.size(), T(0));
    double ce = 0.0;
    for (std::size_t i = 0; i < voxels; ++i) {
        if (labels[i] >= classes)
            throw ShapeError("dice_ce_loss_logits: label " + std::to_string(labels[i]) +
                             " is not below " + std::to_string(classes));
        T peak = x[i];
        for (std::size_t j = 0; j < classes; ++j) {
            if (std::isnan(x[j * voxels + i]))
                throw NumericError("dice_ce_loss_logits: NaN logit");
            peak = std::max(peak, x[j * voxels + i]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < classes; ++j)
            total += std::exp(static_cast<double>(x[j * voxels + i] - peak));
        for (std::size_t j = 0; j < classes; ++j)
            y[j * voxels + i] = static_cast<T>(std::exp(static_cast<double>(x[j * voxels + i] - peak)) / total);
        const std::size_t t = labels[i];
        g[t * voxels + i] = T(1);
        ce -= static_cast<double>(x[t * voxels + i] - peak) - std::log(total);
    }
    ce /= static_cast<double>(voxels);
    const DiceSums sums = dice_sums<T>(y, g, voxels, classes, 1, voxels);
    const LossParts lp{dice_term(sums, smooth), ce};
    if (parts != nullptr)
        *parts = lp;

    auto out = ad::Tensor<T>::scalar(static_cast<T>(lp.total()));
    if (ad::detail::should_record<T>({&logits})) {
        ad::detail::record<T>(
            "dice_ce_loss_logits", {&logits}, out,
            [sx = logits.storage(), so = out.storage(), y = std::move(y), g = std::move(g), voxels,
             classes, grad = dice_grad(sums, smooth)] {
                auto gx = ad::detail::grad_target(sx);
                if (gx.empty())
                    return;
                const double seed = so->grad[0];
                const double inv_i = 1.0 / static_cast<double>(voxels);
                std::vector<double> dy(classes);
                for (std::size_t i = 0; i < voxels; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < classes; ++j) {
                        const std::size_t idx = j * voxels + i;
                        dy[j] = grad.g_coef[j] * g[idx] + grad.y_coef[j] * y[idx];
                        dot += dy[j] * y[idx];
                    }
                    for (std::size_t j = 0; j < classes; ++j) {
                        const std::size_t idx = j * voxels + i;
                        const double yv = y[idx];
                        const double d = yv * (dy[j] - dot) + inv_i * (yv - g[idx]);
                        gx[idx] += static_cast<T>(seed * d);
                    }
                }
            });
    }
    return out;
}

#define UNETR_INSTANTIATE_LOSS(T)                                                                  \
    template ad::Tensor<T> one_hot<T>(std::span<const std::uint8_t>, std::size_t);               \
    template ad::Tensor<T> dice_ce_loss(const ad::Tensor<T>&, const ad::Tensor<T>&, T, LossParts*); \
    template ad::Tensor<T> dice_ce_loss_logits(const ad::Tensor<T>&, std::span<const std::uint8_t>, \
                                               T, LossParts*);

UNETR_INSTANTIATE_LOSS(float)
UNETR_INSTANTIATE_LOSS(double)

#undef UNETR_INSTANTIATE_LOSS

} // namespace unetr
