#pragma once

// Helpers for implementing differentiable operations on top of the tape.

#include <initializer_list>
#include <memory>
#include <span>
#include <utility>

#include "unetr/autodiff/tensor.hpp"

namespace unetr::ad::detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs)
{
    if (active_tape<T>() == nullptr)
        return false;
    for (const Tensor<T>* t : inputs)
        if (t != nullptr && t->requires_grad())
            return true;
    return false;
}

/// Gradient buffer of an op input, or an empty span when the input does not
/// take gradients.
template <typename T>
std::span<T> grad_target(const std::shared_ptr<TensorStorage<T>>& s)
{
    if (!s || !s->requires_grad)
        return {};
    if (s->grad.empty())
        s->grad.assign(s->data.size(), T{0});
    return s->grad;
}

template <typename T, typename Backward>
void record(const char* op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& output,
            Backward&& backward)
{
    typename ComputationTape<T>::Entry entry;
    entry.op = op;
    for (const Tensor<T>* t : inputs)
        if (t != nullptr && t->defined())
            entry.inputs.push_back(t->storage());
    output.set_requires_grad(true);
    entry.output = output.storage();
    entry.backward = std::forward<Backward>(backward);
    active_tape<T>()->record(std::move(entry));
}

} // namespace unetr::ad::detail
