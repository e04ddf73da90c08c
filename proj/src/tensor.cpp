#include "msts/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace msts {

namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType dtype_from_name(const std::string& name) {
    if (name == "f32") return DType::f32;
    if (name == "f64") return DType::f64;
    throw FormatError("unknown dtype '" + name + "'");
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    detail::round_values(impl->data, dtype);
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return full(shape, 0.0, dtype); }
Tensor Tensor::ones(const Shape& shape, DType dtype) { return full(shape, 1.0, dtype); }
Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, DType dtype) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data = std::move(values);
    detail::round_values(impl->data, dtype);
    return Tensor(std::move(impl));
}

int64_t Tensor::size(int64_t axis) const {
    const int64_t d = dim();
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw DimensionError("axis out of range for " + shape_str(shape()));
    return impl_->shape[static_cast<size_t>(axis)];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int64_t>(index.size()) != dim()) throw DimensionError("at(): rank mismatch");
    int64_t offset = 0;
    size_t axis = 0;
    for (auto i : index) {
        const int64_t extent = impl_->shape[axis++];
        if (i < 0 || i >= extent) throw DimensionError("at(): index out of range");
        offset = offset * extent + i;
    }
    return impl_->data[static_cast<size_t>(offset)];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!impl_->is_leaf && !flag) throw ContractError("cannot clear requires_grad on a non-leaf");
    impl_->requires_grad = flag;
    return *this;
}

Tensor Tensor::grad_tensor() const {
    if (!has_grad()) return Tensor();
    return Tensor::from_data(shape(), impl_->grad, DType::f64);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    Tensor out = detach();
    out.impl_->requires_grad = impl_->requires_grad && impl_->is_leaf;
    return out;
}

Tensor Tensor::to(DType dtype) const {
    Tensor out = detach();
    out.impl_->dtype = dtype;
    detail::round_values(out.impl_->data, dtype);
    return out;
}

void Tensor::round_to_dtype() { detail::round_values(impl_->data, impl_->dtype); }

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss is not on the tape");

    std::unordered_map<const TensorImpl*, std::vector<double>> grads;
    grads[loss.impl()] = {1.0};

    auto flush_leaf = [](TensorImpl* impl, const std::vector<double>& g) {
        if (impl->grad.empty()) {
            impl->grad = g;
        } else {
            for (size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
        }
    };

    const auto& nodes = Tape::current().nodes();
    for (auto node = nodes.rbegin(); node != nodes.rend(); ++node) {
        auto it = grads.find(node->output.get());
        if (it == grads.end()) continue;
        std::vector<double> grad_out = std::move(it->second);
        grads.erase(it);

        GradSlots slots(node->inputs.size(), nullptr);
        for (size_t i = 0; i < node->inputs.size(); ++i) {
            if (!node->inputs[i] || !node->inputs[i]->requires_grad) continue;
            auto& slot = grads[node->inputs[i].get()];
            if (slot.empty()) slot.assign(node->inputs[i]->data.size(), 0.0);
            slots[i] = &slot;
        }
        node->backward(*node, grad_out, slots);
    }

    for (auto& [impl, g] : grads) {
        auto* mutable_impl = const_cast<TensorImpl*>(impl);
        if (mutable_impl->is_leaf && mutable_impl->requires_grad) flush_leaf(mutable_impl, g);
    }
}

namespace detail {

DType promote(std::initializer_list<Tensor> inputs) {
    for (const auto& t : inputs) {
        if (t.defined() && t.dtype() == DType::f64) return DType::f64;
    }
    return DType::f32;
}

Tensor make_output(const Shape& shape, DType dtype) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dtype;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    return Tensor(std::move(impl));
}

void round_values(std::vector<double>& values, DType dtype) {
    if (dtype != DType::f32) return;
    for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

void finish(Tensor& out, std::vector<Tensor> inputs, const char* op, BackwardFn fn) {
    round_values(out.impl()->data, out.dtype());
    if (!grad_enabled()) return;
    bool needs = false;
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
    if (!needs) return;

    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
    TapeNode node;
    node.op = op;
    node.output = out.impl_ptr();
    node.inputs.reserve(inputs.size());
    for (auto& t : inputs) node.inputs.push_back(t.impl_ptr());
    node.backward = std::move(fn);
    Tape::current().push(std::move(node));
}

void ensure_slot(std::vector<double>* slot, size_t n) {
    if (slot && slot->size() != n) slot->assign(n, 0.0);
}

}  // namespace detail

}  // namespace msts
