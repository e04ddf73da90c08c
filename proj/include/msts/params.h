#pragma once

#include <string>
#include <vector>

#include "msts/rng.h"
#include "msts/tensor.h"

namespace msts {

/// Optimizer groups. Backbone parameters train at a reduced learning rate.
enum class ParamGroup { base, backbone };

struct NamedParam {
    std::string name;
    Tensor tensor;
    ParamGroup group = ParamGroup::base;
};

/// Ordered registry of trainable leaves. Names are unique and the order is
/// the creation order, which fixes checkpoint layout and optimizer state.
class ParamSet {
public:
    explicit ParamSet(DType dtype = DType::f32, uint64_t seed = 0) : dtype_(dtype), rng_(seed) {}

    DType dtype() const { return dtype_; }
    const std::vector<NamedParam>& entries() const { return entries_; }
    std::vector<NamedParam>& entries() { return entries_; }
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    int64_t count() const;

    /// Xavier-uniform over (fan_in, fan_out).
    Tensor xavier(const std::string& name, const Shape& shape, int64_t fan_in, int64_t fan_out,
                  ParamGroup group = ParamGroup::base);
    Tensor zeros(const std::string& name, const Shape& shape, ParamGroup group = ParamGroup::base);
    Tensor ones(const std::string& name, const Shape& shape, ParamGroup group = ParamGroup::base);
    Tensor normal(const std::string& name, const Shape& shape, double stddev, ParamGroup group = ParamGroup::base);

    void zero_grad();
    void set_requires_grad(bool flag);

private:
    Tensor add(const std::string& name, Tensor t, ParamGroup group);

    DType dtype_;
    Rng rng_;
    std::vector<NamedParam> entries_;
};

/// Linear layer with weight[in, out] and bias[out].
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear make(ParamSet& ps, const std::string& name, int64_t in, int64_t out,
                       ParamGroup group = ParamGroup::base);
    Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    static LayerNormParams make(ParamSet& ps, const std::string& name, int64_t width);
    Tensor operator()(const Tensor& x) const;
};

struct Conv2d {
    Tensor weight;
    Tensor bias;
    int64_t stride = 1;
    int64_t pad = 0;

    static Conv2d make(ParamSet& ps, const std::string& name, int64_t cin, int64_t cout, int64_t kernel,
                       int64_t stride, ParamGroup group = ParamGroup::base);
    Tensor operator()(const Tensor& x) const;
};

}  // namespace msts
