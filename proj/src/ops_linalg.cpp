#include "kernels.h"
#include "msts/ops.h"

namespace msts {

namespace {

struct BatchPlan {
    Shape batch;
    std::vector<int64_t> a_offsets;  // matrix index into a, per output batch
    std::vector<int64_t> b_offsets;
};

BatchPlan plan_batches(const Shape& a_batch, const Shape& b_batch, const Shape& a_full, const Shape& b_full) {
    const size_t rank = std::max(a_batch.size(), b_batch.size());
    Shape pa(rank - a_batch.size(), 1), pb(rank - b_batch.size(), 1);
    pa.insert(pa.end(), a_batch.begin(), a_batch.end());
    pb.insert(pb.end(), b_batch.begin(), b_batch.end());
    BatchPlan plan;
    plan.batch.resize(rank);
    for (size_t d = 0; d < rank; ++d) {
        if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
            throw DimensionError("matmul: batch extents of " + shape_str(a_full) + " and " + shape_str(b_full) +
                                 " do not broadcast");
        }
        plan.batch[d] = std::max(pa[d], pb[d]);
    }
    int64_t count = 1;
    for (auto d : plan.batch) count *= d;
    plan.a_offsets.resize(count);
    plan.b_offsets.resize(count);
    std::vector<int64_t> counter(rank, 0);
    for (int64_t k = 0; k < count; ++k) {
        int64_t ia = 0, ib = 0;
        for (size_t d = 0; d < rank; ++d) {
            ia = ia * pa[d] + (pa[d] == 1 ? 0 : counter[d]);
            ib = ib * pb[d] + (pb[d] == 1 ? 0 : counter[d]);
        }
        plan.a_offsets[k] = ia;
        plan.b_offsets[k] = ib;
        for (size_t d = rank; d-- > 0;) {
            if (++counter[d] < plan.batch[d]) break;
            counter[d] = 0;
        }
    }
    return plan;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || b.dim() < 2) {
        throw DimensionError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int64_t m = a.size(-2), k = a.size(-1), n = b.size(-1);
    if (b.size(-2) != k) {
        throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    auto plan = std::make_shared<BatchPlan>(plan_batches(a_batch, b_batch, a.shape(), b.shape()));

    Shape out_shape = plan->batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = detail::make_output(out_shape, detail::promote({a, b}));
    auto& y = out.impl()->data;
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    for (size_t i = 0; i < plan->a_offsets.size(); ++i) {
        kernels::gemm_nn(ap + plan->a_offsets[i] * m * k, bp + plan->b_offsets[i] * k * n, y.data() + i * m * n, m,
                         k, n);
    }
    detail::finish(out, {a, b}, "matmul",
                   [plan, m, k, n](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
                       const double* ap = node.in(0).data();
                       const double* bp = node.in(1).data();
                       for (size_t i = 0; i < plan->a_offsets.size(); ++i) {
                           const double* gp = g.data() + i * m * n;
                           if (gin[0]) {
                               kernels::gemm_nt(gp, bp + plan->b_offsets[i] * k * n,
                                                gin[0]->data() + plan->a_offsets[i] * m * k, m, n, k);
                           }
                           if (gin[1]) {
                               kernels::gemm_tn(ap + plan->a_offsets[i] * m * k, gp,
                                                gin[1]->data() + plan->b_offsets[i] * k * n, k, m, n);
                           }
                       }
                   });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.dim() != 2) throw DimensionError("linear: weight must be 2-D, got " + shape_str(weight.shape()));
    const int64_t in = weight.size(0), out_features = weight.size(1);
    if (x.size(-1) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    if (bias.defined() && (bias.dim() != 1 || bias.size(0) != out_features)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const int64_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_features;
    Tensor out = detail::make_output(out_shape, detail::promote({x, weight, bias}));
    auto& y = out.impl()->data;
    if (bias.defined()) {
        for (int64_t r = 0; r < rows; ++r)
            std::copy(bias.values().begin(), bias.values().end(), y.begin() + r * out_features);
    }
    kernels::gemm_nn(x.values().data(), weight.values().data(), y.data(), rows, in, out_features);
    detail::finish(out, {x, weight, bias}, "linear",
                   [rows, in, out_features](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
                       if (gin[0]) kernels::gemm_nt(g.data(), node.in(1).data(), gin[0]->data(), rows, out_features, in);
                       if (gin[1]) kernels::gemm_tn(node.in(0).data(), g.data(), gin[1]->data(), in, rows, out_features);
                       if (gin[2]) {
                           auto& gb = *gin[2];
                           for (int64_t r = 0; r < rows; ++r)
                               for (int64_t j = 0; j < out_features; ++j) gb[j] += g[r * out_features + j];
                       }
                   });
    return out;
}

}  // namespace msts
