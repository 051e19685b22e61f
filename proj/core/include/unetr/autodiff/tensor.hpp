#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unetr/autodiff/shape.hpp"

namespace unetr::ad {

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until first accumulation
    bool requires_grad = false;
};

/// Dense row-major array with an optional gradient buffer.
///
/// Tensor is a cheap handle: copies share storage. Values are treated as
/// immutable once an op has consumed them; only parameter updates and
/// gradient accumulation write through a handle.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return storage_ != nullptr; }
    const Shape& shape() const { return storage_->shape; }
    std::size_t rank() const { return storage_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return storage_->data.size(); }

    std::span<const T> data() const { return storage_->data; }
    std::span<T> mutable_data() { return storage_->data; }
    T item() const;

    bool requires_grad() const noexcept { return storage_ && storage_->requires_grad; }
    void set_requires_grad(bool flag) { storage_->requires_grad = flag; }

    bool has_grad() const noexcept { return storage_ && !storage_->grad.empty(); }
    /// Gradient buffer; allocated as zeros on first access.
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    /// Copy of the values without gradient tracking.
    Tensor detach() const;

    const std::shared_ptr<TensorStorage<T>>& storage() const noexcept { return storage_; }

private:
    std::shared_ptr<TensorStorage<T>> storage_;
};

/// Ordered record of executed differentiable operations.
///
/// Entries are appended in execution order, so inputs of an entry are either
/// leaves or outputs of earlier entries.
template <typename T>
class ComputationTape {
public:
    using StoragePtr = std::shared_ptr<TensorStorage<T>>;

    struct Entry {
        std::string op;
        std::vector<StoragePtr> inputs;
        StoragePtr output;
        std::function<void()> backward;
    };

    void record(Entry entry) { entries_.push_back(std::move(entry)); }
    std::span<const Entry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() noexcept { entries_.clear(); }

private:
    std::vector<Entry> entries_;
};

template <typename T>
ComputationTape<T>* active_tape() noexcept;

/// Makes `tape` the recording target on this thread for the scope lifetime.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(ComputationTape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    ComputationTape<T>* previous_;
};

/// Suspends recording on this thread (inference and finite differences).
template <typename T>
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    ComputationTape<T>* previous_;
};

/// Reverse sweep from a scalar loss. Gradients accumulate into existing
/// buffers; every requires_grad input seen on the tape ends with an allocated
/// (possibly zero) gradient.
template <typename T>
void backward(const ComputationTape<T>& tape, const Tensor<T>& loss);

} // namespace unetr::ad
