#pragma once

// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// with bias-corrected first/second moments m_hat, v_hat.

#include <cstddef>
#include <span>
#include <vector>

#include "unetr/model/unetr.hpp"

namespace unetr {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

template <typename T>
struct OptimizerState {
    std::size_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    bool operator==(const OptimizerState&) const = default;
};

/// One update of every parameter from its accumulated gradient. Moments are
/// allocated on the first call. Throws NumericError naming the first
/// parameter with a non-finite gradient; parameters are left untouched then.
template <typename T>
void adamw_step(std::span<const NamedTensor<T>> params, OptimizerState<T>& state, const AdamWConfig& cfg);

} // namespace unetr
