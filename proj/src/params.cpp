#include "msts/params.h"

#include <cmath>

#include "msts/ops.h"

namespace msts {

const Tensor& ParamSet::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.tensor;
    }
    throw ContractError("no parameter named '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

int64_t ParamSet::count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

Tensor ParamSet::add(const std::string& name, Tensor t, ParamGroup group) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    entries_.push_back({name, t, group});
    return t;
}

Tensor ParamSet::xavier(const std::string& name, const Shape& shape, int64_t fan_in, int64_t fan_out,
                        ParamGroup group) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng_.uniform(-bound, bound);
    return add(name, Tensor::from_data(shape, std::move(v), dtype_), group);
}

Tensor ParamSet::zeros(const std::string& name, const Shape& shape, ParamGroup group) {
    return add(name, Tensor::zeros(shape, dtype_), group);
}

Tensor ParamSet::ones(const std::string& name, const Shape& shape, ParamGroup group) {
    return add(name, Tensor::ones(shape, dtype_), group);
}

Tensor ParamSet::normal(const std::string& name, const Shape& shape, double stddev, ParamGroup group) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = stddev * rng_.normal();
    return add(name, Tensor::from_data(shape, std::move(v), dtype_), group);
}

void ParamSet::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::set_requires_grad(bool flag) {
    for (auto& e : entries_) e.tensor.set_requires_grad(flag);
}

Linear Linear::make(ParamSet& ps, const std::string& name, int64_t in, int64_t out, ParamGroup group) {
    return {ps.xavier(name + ".weight", {in, out}, in, out, group), ps.zeros(name + ".bias", {out}, group)};
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNormParams LayerNormParams::make(ParamSet& ps, const std::string& name, int64_t width) {
    return {ps.ones(name + ".gamma", {width}), ps.zeros(name + ".beta", {width})};
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

Conv2d Conv2d::make(ParamSet& ps, const std::string& name, int64_t cin, int64_t cout, int64_t kernel,
                    int64_t stride, ParamGroup group) {
    Conv2d c;
    c.weight = ps.xavier(name + ".weight", {cout, cin, kernel, kernel}, cin * kernel * kernel,
                         cout * kernel * kernel, group);
    c.bias = ps.zeros(name + ".bias", {cout}, group);
    c.stride = stride;
    c.pad = (kernel - 1) / 2;
    return c;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

}  // namespace msts
