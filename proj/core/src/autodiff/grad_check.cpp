#include "unetr/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "unetr/error.hpp"

namespace unetr::ad {

namespace {

std::vector<std::size_t> probe_positions(std::size_t n, std::size_t limit, std::mt19937_64& rng)
{
    std::vector<std::size_t> positions(n);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    if (limit == 0 || limit >= n)
        return positions;
    std::shuffle(positions.begin(), positions.end(), rng);
    positions.resize(limit);
    std::sort(positions.begin(), positions.end());
    return positions;
}

} // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> inputs,
                           const GradCheckOptions& options)
{
    for (auto& input : inputs) {
        if (!input.requires_grad())
            throw ConfigError("grad_check: every input must require gradients");
        input.mutable_grad();
        input.zero_grad();
    }

    {
        ComputationTape<T> tape;
        TapeScope<T> scope(tape);
        const Tensor<T> loss = f();
        backward(tape, loss);
    }
    std::vector<std::vector<T>> analytic;
    for (const auto& input : inputs)
        analytic.emplace_back(input.grad().begin(), input.grad().end());

    auto evaluate = [&f] {
        NoGradScope<T> no_grad;
        return static_cast<double>(f().item());
    };

    GradCheckResult result;
    std::mt19937_64 rng(options.seed);
    const T eps = static_cast<T>(options.eps);
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        auto values = inputs[which].mutable_data();
        for (const std::size_t i : probe_positions(values.size(), options.max_entries_per_input, rng)) {
            const T saved = values[i];
            const T hi = saved + eps;
            const T lo = saved - eps;
            values[i] = hi;
            const double plus = evaluate();
            values[i] = lo;
            const double minus = evaluate();
            values[i] = saved;

            const double numeric = (plus - minus) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double exact = static_cast<double>(analytic[which][i]);
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            const double rel = std::abs(exact - numeric) / denom;
            ++result.entries_checked;
            if (result.entries_checked == 1 || rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_input = which;
                result.worst_index = i;
                result.worst_analytic = exact;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>()>&,
                                           std::span<Tensor<float>>, const GradCheckOptions&);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>()>&,
                                            std::span<Tensor<double>>, const GradCheckOptions&);

} // namespace unetr::ad
