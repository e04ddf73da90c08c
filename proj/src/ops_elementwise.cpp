#include <cmath>
#include <numbers>

#include "kernels.h"
#include "msts/ops.h"

namespace msts {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

/// Elementwise map whose derivative is expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
    Tensor out = detail::make_output(x.shape(), x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (size_t i = 0; i < y.size(); ++i) y[i] = fwd(xs[i]);
    detail::finish(out, {x}, op, [deriv](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
        const auto& xv = node.in(0);
        const auto& yv = node.out();
        auto& gx = *gin[0];
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = detail::make_output(a.shape(), detail::promote({a, b}));
    auto& y = out.impl()->data;
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
    detail::finish(out, {a, b}, "add", [](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        for (auto* slot : gin) {
            if (!slot) continue;
            for (size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = detail::make_output(a.shape(), detail::promote({a, b}));
    auto& y = out.impl()->data;
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] - b.values()[i];
    detail::finish(out, {a, b}, "sub", [](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        if (gin[0])
            for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
            for (size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = detail::make_output(a.shape(), detail::promote({a, b}));
    auto& y = out.impl()->data;
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
    detail::finish(out, {a, b}, "mul", [](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
        if (gin[0])
            for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * node.in(1)[i];
        if (gin[1])
            for (size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * node.in(0)[i];
    });
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    for (double v : b.values()) {
        if (v == 0.0) throw NumericError("div: division by zero");
    }
    Tensor out = detail::make_output(a.shape(), detail::promote({a, b}));
    auto& y = out.impl()->data;
    for (size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] / b.values()[i];
    detail::finish(out, {a, b}, "div", [](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
        const auto& x = node.in(0);
        const auto& d = node.in(1);
        if (gin[0])
            for (size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / d[i];
        if (gin[1])
            for (size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i] * x[i] / (d[i] * d[i]);
    });
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.values()) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
    }
    return unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary(
        x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
        [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary(
        x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, "clamp", [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum_all(const Tensor& x) {
    Tensor out = detail::make_output({1}, x.dtype());
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    out.impl()->data[0] = acc;
    detail::finish(out, {x}, "sum_all", [](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        auto& gx = *gin[0];
        for (auto& v : gx) v += g[0];
    });
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int64_t axis, bool keepdim) {
    const int64_t ax = kernels::normalize_axis(axis, x.dim());
    const auto split = kernels::split_at(x.shape(), ax);
    Shape shape = x.shape();
    if (keepdim) shape[ax] = 1;
    else shape.erase(shape.begin() + ax);
    if (shape.empty()) shape = {1};

    Tensor out = detail::make_output(shape, x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (int64_t o = 0; o < split.outer; ++o)
        for (int64_t a = 0; a < split.extent; ++a)
            for (int64_t i = 0; i < split.inner; ++i)
                y[o * split.inner + i] += xs[(o * split.extent + a) * split.inner + i];

    detail::finish(out, {x}, "sum", [split](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        auto& gx = *gin[0];
        for (int64_t o = 0; o < split.outer; ++o)
            for (int64_t a = 0; a < split.extent; ++a)
                for (int64_t i = 0; i < split.inner; ++i)
                    gx[(o * split.extent + a) * split.inner + i] += g[o * split.inner + i];
    });
    return out;
}

Tensor mean(const Tensor& x, int64_t axis, bool keepdim) {
    const int64_t ax = kernels::normalize_axis(axis, x.dim());
    return scale(sum(x, ax, keepdim), 1.0 / static_cast<double>(x.shape()[ax]));
}

}  // namespace msts
