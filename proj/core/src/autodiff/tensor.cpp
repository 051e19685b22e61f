#include "unetr/autodiff/tensor.hpp"

#include <algorithm>

#include "unetr/error.hpp"

namespace unetr::ad {

namespace {

template <typename T>
thread_local ComputationTape<T>* g_active_tape = nullptr;

} // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : storage_(std::make_shared<TensorStorage<T>>())
{
    storage_->data.assign(ad::numel(shape), T{0});
    storage_->shape = std::move(shape);
    storage_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : storage_(std::make_shared<TensorStorage<T>>())
{
    if (ad::numel(shape) != values.size())
        throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                         std::to_string(ad::numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    storage_->shape = std::move(shape);
    storage_->data = std::move(values);
    storage_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad)
{
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const
{
    if (axis >= rank())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
    return storage_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1)
        throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return storage_->data[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const
{
    if (storage_->grad.empty())
        storage_->grad.assign(storage_->data.size(), T{0});
    return storage_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad()
{
    if (storage_->grad.empty())
        storage_->grad.assign(storage_->data.size(), T{0});
    return storage_->grad;
}

template <typename T>
void Tensor<T>::zero_grad()
{
    std::fill(storage_->grad.begin(), storage_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const
{
    return Tensor(storage_->shape, storage_->data, false);
}

template <typename T>
ComputationTape<T>* active_tape() noexcept
{
    return g_active_tape<T>;
}

template <typename T>
TapeScope<T>::TapeScope(ComputationTape<T>& tape)
    : previous_(g_active_tape<T>)
{
    g_active_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope()
{
    g_active_tape<T> = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope()
    : previous_(g_active_tape<T>)
{
    g_active_tape<T> = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope()
{
    g_active_tape<T> = previous_;
}

template <typename T>
void backward(const ComputationTape<T>& tape, const Tensor<T>& loss)
{
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward needs a scalar loss, got shape " +
                         (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    auto& seed = loss.storage()->grad;
    if (seed.empty())
        seed.assign(1, T{0});
    seed[0] += T{1};

    const auto entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (!it->output->grad.empty())
            it->backward();
    }
    for (const auto& entry : entries)
        for (const auto& input : entry.inputs)
            if (input->requires_grad && input->grad.empty())
                input->grad.assign(input->data.size(), T{0});
}

template class Tensor<float>;
template class Tensor<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template ComputationTape<float>* active_tape<float>() noexcept;
template ComputationTape<double>* active_tape<double>() noexcept;
template void backward<float>(const ComputationTape<float>&, const Tensor<float>&);
template void backward<double>(const ComputationTape<double>&, const Tensor<double>&);

} // namespace unetr::ad
