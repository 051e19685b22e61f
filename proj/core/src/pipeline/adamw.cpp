#include "unetr/pipeline/adamw.hpp"

#include <cmath>

#include "unetr/error.hpp"

namespace unetr {

template <typename T>
void adamw_step(std::span<const NamedTensor<T>> params, OptimizerState<T>& state, const AdamWConfig& cfg)
{
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), T(0));
            state.v.emplace_back(p.tensor.numel(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adamw: optimizer state holds " + std::to_string(state.m.size()) +
                         " tensors for " + std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].tensor.numel())
            throw ShapeError("adamw: moment size mismatch for " + params[i].name);
        if (!params[i].tensor.has_grad())
            continue;
        for (const T g : params[i].tensor.grad())
            if (!std::isfinite(g))
                throw NumericError("adamw: non-finite gradient in " + params[i].name);
    }

    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto tensor = params[i].tensor;
        auto theta = tensor.mutable_data();
        const bool has_grad = tensor.has_grad();
        const auto grad = has_grad ? tensor.grad() : std::span<const T>{};
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double g = has_grad ? static_cast<double>(grad[k]) : 0.0;
            const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
            const double t = theta[k];
            theta[k] = static_cast<T>(t - cfg.lr * (update + cfg.weight_decay * t));
        }
    }
}

template void adamw_step(std::span<const NamedTensor<float>>, OptimizerState<float>&, const AdamWConfig&);
template void adamw_step(std::span<const NamedTensor<double>>, OptimizerState<double>&, const AdamWConfig&);

} // namespace unetr
