#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msts/errors.h"

namespace msts {

using Shape = std::vector<int64_t>;

enum class DType { f32, f64 };

const char* dtype_name(DType dtype);
DType dtype_from_name(const std::string& name);

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Storage and autodiff bookkeeping shared by all handles to one tensor.
///
/// Values are held in double precision. An f32 tensor keeps every stored
/// value rounded to the nearest single-precision float, so arithmetic
/// results match what an f32 kernel would produce up to reassociation.
struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    std::vector<double> data;
    std::vector<double> grad;  // empty == no gradient
    bool requires_grad = false;
    bool is_leaf = true;
};

/// Reference-semantics handle to a dense row-major array.
///
/// Copying a Tensor copies the handle, not the buffer. Use clone() for a
/// deep copy and detach() for a value that is cut from the tape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
    static Tensor ones(const Shape& shape, DType dtype = DType::f32);
    static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
    static Tensor from_data(const Shape& shape, std::vector<double> values,
                            DType dtype = DType::f32);
    static Tensor scalar(double value, DType dtype = DType::f32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t size(int64_t axis) const;
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    DType dtype() const { return impl_->dtype; }

    std::span<const double> data() const { return impl_->data; }
    /// Direct write access for initialization and optimizer updates.
    /// Values written to an f32 tensor must be rounded with round_to_dtype().
    std::span<double> mutable_data() { return impl_->data; }
    const std::vector<double>& values() const& { return impl_->data; }
    /// Copies on temporaries so `for (double v : f(x).values())` stays valid.
    std::vector<double> values() && { return impl_->data; }
    double item() const;
    double at(std::initializer_list<int64_t> index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const { return impl_->is_leaf; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    Tensor grad_tensor() const;
    void zero_grad() { impl_->grad.clear(); }

    Tensor detach() const;
    Tensor clone() const;
    Tensor to(DType dtype) const;
    void round_to_dtype();

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Gradient accumulation slots handed to a backward rule: one per input,
/// null when that input does not need a gradient.
using GradSlots = std::vector<std::vector<double>*>;

struct TapeNode;
using BackwardFn =
    std::function<void(const TapeNode& node, const std::vector<double>& grad_out, GradSlots& grad_in)>;

struct TapeNode {
    std::string op;
    std::shared_ptr<TensorImpl> output;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;

    const std::vector<double>& in(size_t i) const { return inputs[i]->data; }
    const std::vector<double>& out() const { return output->data; }
};

/// Append-only record of differentiable operations for the current thread.
/// Node order is creation order; backward() visits nodes in reverse.
class Tape {
public:
    static Tape& current();

    void push(TapeNode node) { nodes_.push_back(std::move(node)); }
    const std::vector<TapeNode>& nodes() const { return nodes_; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<TapeNode> nodes_;
};

bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Clears the current tape when it goes out of scope.
class TapeScope {
public:
    TapeScope() = default;
    ~TapeScope() { Tape::current().clear(); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

/// Reverse-mode sweep from a scalar loss. Every leaf with requires_grad that
/// is reachable from `loss` has the gradient added into its grad buffer;
/// unreachable leaves are left untouched. The tape itself is kept so that a
/// second loss sharing the same forward graph can be differentiated.
void backward(const Tensor& loss);

namespace detail {

DType promote(std::initializer_list<Tensor> inputs);
Tensor make_output(const Shape& shape, DType dtype);
void round_values(std::vector<double>& values, DType dtype);
/// Rounds f32 outputs and, when any input requires grad, records a node.
void finish(Tensor& out, std::vector<Tensor> inputs, const char* op, BackwardFn fn);
void ensure_slot(std::vector<double>* slot, size_t n);

}  // namespace detail

}  // namespace msts
