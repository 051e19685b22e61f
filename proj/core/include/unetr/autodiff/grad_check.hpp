#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "unetr/autodiff/tensor.hpp"

namespace unetr::ad {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Entries probed per input; 0 probes every entry. Probed positions are
    /// drawn uniformly with `seed`.
    std::size_t max_entries_per_input = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(x+eps) - f(x-eps)) / ((x+eps) - (x-eps)), entry by entry, with relative
/// error |a - n| / max(|a|, |n|, 1e-8). `inputs` are the tensors to perturb;
/// they must require gradients and are restored afterwards.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> inputs,
                           const GradCheckOptions& options = {});

} // namespace unetr::ad
