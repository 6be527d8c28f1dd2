#pragma once

// Dense double-precision tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage, and clone()
// makes a detached deep copy. Operations on tensors that require gradients
// append a backward rule to the calling thread's tape; backward() replays the
// tape in exact reverse recording order and then clears it.
//
// Broadcasting (add/sub/mul): either the shapes are equal, one operand is a
// scalar (one element), or the smaller operand's shape equals the trailing
// dimensions of the larger one with a rank difference of exactly one.

#include <cstddef>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pi/rng.hpp"

namespace pi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned allocations, so vectorized kernels take the same path on
/// every run regardless of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct TensorStorage {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    double item() const;
    double operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad();
    void zero_grad();
    void clear_grad();

    /// Deep copy of values; the copy never requires grad.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    TensorStorage& storage() { return *impl_; }
    const TensorStorage& storage() const { return *impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorStorage> impl) : impl_(std::move(impl)) {}

    std::shared_ptr<TensorStorage> impl_;

    friend Tensor make_tensor(Shape shape, Buffer values);
};

Tensor make_tensor(Shape shape, Buffer values);

/// Recorded operations for the current thread, in forward order.
class Tape {
public:
    struct Entry {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };

    static Tape& current();

    void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);
    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    void clear() noexcept { entries_.clear(); }

    bool enabled() const noexcept { return enabled_; }
    void set_enabled(bool on) noexcept { enabled_ = on; }

private:
    std::vector<Entry> entries_;
    bool enabled_ = true;
};

/// Disables recording for its lifetime (evaluation paths).
class NoGradGuard {
public:
    NoGradGuard() : previous_(Tape::current().enabled()) { Tape::current().set_enabled(false); }
    ~NoGradGuard() { Tape::current().set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Seeds d(loss)/d(loss) = 1, replays the tape backwards, accumulates into
/// every requires_grad tensor and clears the tape.
void backward(const Tensor& loss);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

// Reductions and normalization.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_last(const Tensor& x);  // reduces the last axis
Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Structural.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor repeat(const Tensor& x, std::size_t count);  // new leading axis
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor diagonal(const Tensor& x);
/// Sets entries above the diagonal of the last two axes to a large negative
/// constant; they receive no gradient.
Tensor causal_mask(const Tensor& x);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = false;
};

/// Compares the tape gradient of scalar f at x with central differences.
/// Relative error per entry is |analytic - numeric| / max(floor, |analytic|, |numeric|);
/// the floor keeps entries whose true gradient is zero from dividing roundoff by zero.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double tol = 1e-6, double floor = 1e-3);

}  // namespace pi
