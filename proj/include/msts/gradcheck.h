#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msts/rng.h"
#include "msts/tensor.h"

namespace msts {

/// A differentiable function of f64 leaves checked against central differences.
struct GradCase {
    std::string module;  // tensor_core, attention, encdec, heads
    std::string name;
    /// Builds fresh f64 inputs; every returned tensor is differentiated.
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    /// Scalar function of the inputs.
    std::function<Tensor(const std::vector<Tensor>&)> loss;
};

struct GradCheckResult {
    std::string module;
    std::string name;
    double max_rel_error = 0.0;
    int64_t coordinates = 0;
    bool passed = false;
};

struct GradCheckOptions {
    int points_per_input = 5;
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor in |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
};

/// Compares tape gradients with central finite differences at randomly chosen
/// coordinates of every input.
GradCheckResult check_gradient(const GradCase& c, uint64_t seed, const GradCheckOptions& opt = {});

/// sum(x * w) for fixed pseudo-random w; turns any tensor into a scalar probe.
Tensor random_projection(const Tensor& x, uint64_t seed);

/// f64 tensor with standard normal entries (not a parameter).
Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0, DType dtype = DType::f64);

}  // namespace msts
