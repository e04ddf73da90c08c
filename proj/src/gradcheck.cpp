#include "msts/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "msts/ops.h"

namespace msts {

Tensor randn(const Shape& shape, Rng& rng, double stddev, DType dtype) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor::from_data(shape, std::move(v), dtype);
}

Tensor random_projection(const Tensor& x, uint64_t seed) {
    Rng rng(seed);
    Tensor w = randn(x.shape(), rng, 1.0, x.dtype());
    return sum_all(mul(x, w));
}

GradCheckResult check_gradient(const GradCase& c, uint64_t seed, const GradCheckOptions& opt) {
    GradCheckResult result{c.module, c.name, 0.0, 0, true};
    Rng rng(seed);
    std::vector<Tensor> inputs = c.make_inputs(rng);
    for (auto& t : inputs) {
        if (t.dtype() != DType::f64) throw ContractError("check_gradient: inputs must be f64 (" + c.name + ")");
        t.set_requires_grad(true);
        t.zero_grad();
    }

    {
        TapeScope scope;
        Tensor loss = c.loss(inputs);
        backward(loss);
    }

    auto evaluate = [&]() {
        NoGradGuard guard;
        return c.loss(inputs).item();
    };

    for (auto& t : inputs) {
        const int64_t n = t.numel();
        std::vector<int64_t> coords;
        if (n <= opt.points_per_input) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            while (static_cast<int>(coords.size()) < opt.points_per_input) {
                const int64_t i = rng.uniform_int(0, n - 1);
                if (std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);
            }
        }
        for (int64_t i : coords) {
            auto data = t.mutable_data();
            const double original = data[i];
            data[i] = original + opt.step;
            const double plus = evaluate();
            data[i] = original - opt.step;
            const double minus = evaluate();
            data[i] = original;
            const double numeric = (plus - minus) / (2.0 * opt.step);
            const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), opt.floor});
            const double rel = std::fabs(analytic - numeric) / denom;
            result.max_rel_error = std::max(result.max_rel_error, rel);
            ++result.coordinates;
        }
    }
    result.passed = result.max_rel_error < opt.tolerance;
    return result;
}

}  // namespace msts
