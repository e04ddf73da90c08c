#include <algorithm>
#include <numeric>

#include "kernels.h"
#include "msts/ops.h"

namespace msts {

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = detail::make_output(shape, x.dtype());
    out.impl()->data = x.values();
    detail::finish(out, {x}, "reshape", [](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        auto& gx = *gin[0];
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

namespace {

/// For each output element, the linear offset of the source element.
std::vector<int64_t> permute_index(const Shape& in_shape, const std::vector<int64_t>& dims) {
    const size_t rank = in_shape.size();
    std::vector<int64_t> in_strides(rank, 1);
    for (size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    Shape out_shape(rank);
    std::vector<int64_t> strides(rank);
    for (size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[dims[i]];
        strides[i] = in_strides[dims[i]];
    }
    const int64_t n = shape_numel(in_shape);
    std::vector<int64_t> index(static_cast<size_t>(n));
    std::vector<int64_t> counter(rank, 0);
    int64_t offset = 0;
    for (int64_t k = 0; k < n; ++k) {
        index[k] = offset;
        for (size_t d = rank; d-- > 0;) {
            if (++counter[d] < out_shape[d]) {
                offset += strides[d];
                break;
            }
            offset -= strides[d] * (out_shape[d] - 1);
            counter[d] = 0;
        }
    }
    return index;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int64_t>& dims) {
    const int64_t rank = x.dim();
    if (static_cast<int64_t>(dims.size()) != rank) throw DimensionError("permute: rank mismatch");
    std::vector<int64_t> sorted(dims);
    for (auto& d : sorted) d = kernels::normalize_axis(d, rank);
    std::vector<int64_t> norm = sorted;
    std::sort(sorted.begin(), sorted.end());
    for (int64_t i = 0; i < rank; ++i) {
        if (sorted[i] != i) throw DimensionError("permute: dims are not a permutation");
    }
    Shape out_shape(rank);
    for (int64_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[norm[i]];

    auto index = std::make_shared<std::vector<int64_t>>(permute_index(x.shape(), norm));
    Tensor out = detail::make_output(out_shape, x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (size_t k = 0; k < y.size(); ++k) y[k] = xs[(*index)[k]];
    detail::finish(out, {x}, "permute", [index](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        auto& gx = *gin[0];
        for (size_t k = 0; k < g.size(); ++k) gx[(*index)[k]] += g[k];
    });
    return out;
}

Tensor transpose(const Tensor& x, int64_t a, int64_t b) {
    std::vector<int64_t> dims(static_cast<size_t>(x.dim()));
    std::iota(dims.begin(), dims.end(), 0);
    std::swap(dims[kernels::normalize_axis(a, x.dim())], dims[kernels::normalize_axis(b, x.dim())]);
    return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const int64_t ax = kernels::normalize_axis(axis, parts[0].dim());
    Shape shape = parts[0].shape();
    shape[ax] = 0;
    DType dtype = DType::f32;
    std::vector<int64_t> extents;
    for (const auto& p : parts) {
        if (p.dim() != parts[0].dim()) throw DimensionError("concat: rank mismatch");
        for (int64_t d = 0; d < p.dim(); ++d) {
            if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
                throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                                     shape_str(p.shape()));
            }
        }
        shape[ax] += p.shape()[ax];
        extents.push_back(p.shape()[ax]);
        if (p.dtype() == DType::f64) dtype = DType::f64;
    }
    const auto split = kernels::split_at(shape, ax);
    Tensor out = detail::make_output(shape, dtype);
    auto& y = out.impl()->data;
    int64_t base = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
        const auto& xs = parts[p].values();
        const int64_t block = extents[p] * split.inner;
        for (int64_t o = 0; o < split.outer; ++o) {
            std::copy_n(xs.begin() + o * block, block, y.begin() + o * split.extent * split.inner + base);
        }
        base += block;
    }
    detail::finish(out, parts, "concat",
                   [extents, split](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
                       int64_t base = 0;
                       for (size_t p = 0; p < gin.size(); ++p) {
                           const int64_t block = extents[p] * split.inner;
                           if (gin[p]) {
                               auto& gx = *gin[p];
                               for (int64_t o = 0; o < split.outer; ++o) {
                                   const int64_t src = o * split.extent * split.inner + base;
                                   for (int64_t i = 0; i < block; ++i) gx[o * block + i] += g[src + i];
                               }
                           }
                           base += block;
                       }
                   });
    return out;
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t length) {
    const int64_t ax = kernels::normalize_axis(axis, x.dim());
    const int64_t extent = x.shape()[ax];
    if (start < 0 || length <= 0 || start + length > extent) {
        throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside axis of extent " + std::to_string(extent));
    }
    const auto split = kernels::split_at(x.shape(), ax);
    Shape shape = x.shape();
    shape[ax] = length;
    Tensor out = detail::make_output(shape, x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    const int64_t block = length * split.inner;
    for (int64_t o = 0; o < split.outer; ++o) {
        std::copy_n(xs.begin() + (o * extent + start) * split.inner, block, y.begin() + o * block);
    }
    detail::finish(out, {x}, "slice",
                   [split, extent, start, block](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
                       auto& gx = *gin[0];
                       for (int64_t o = 0; o < split.outer; ++o) {
                           const int64_t dst = (o * extent + start) * split.inner;
                           for (int64_t i = 0; i < block; ++i) gx[dst + i] += g[o * block + i];
                       }
                   });
    return out;
}

Tensor expand(const Tensor& x, const Shape& shape) {
    const size_t rank = shape.size();
    if (static_cast<size_t>(x.dim()) > rank) throw DimensionError("expand: target rank too small");
    Shape padded(rank - x.shape().size(), 1);
    padded.insert(padded.end(), x.shape().begin(), x.shape().end());
    for (size_t d = 0; d < rank; ++d) {
        if (padded[d] != shape[d] && padded[d] != 1) {
            throw DimensionError("expand: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
        }
    }
    std::vector<int64_t> src_strides(rank, 0);
    int64_t stride = 1;
    for (size_t d = rank; d-- > 0;) {
        src_strides[d] = padded[d] == 1 ? 0 : stride;
        stride *= padded[d];
    }
    const int64_t n = shape_numel(shape);
    auto index = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    std::vector<int64_t> counter(rank, 0);
    int64_t offset = 0;
    for (int64_t k = 0; k < n; ++k) {
        (*index)[k] = offset;
        for (size_t d = rank; d-- > 0;) {
            if (++counter[d] < shape[d]) {
                offset += src_strides[d];
                break;
            }
            offset -= src_strides[d] * (shape[d] - 1);
            counter[d] = 0;
        }
    }
    Tensor out = detail::make_output(shape, x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (size_t k = 0; k < y.size(); ++k) y[k] = xs[(*index)[k]];
    detail::finish(out, {x}, "expand", [index](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
        auto& gx = *gin[0];
        for (size_t k = 0; k < g.size(); ++k) gx[(*index)[k]] += g[k];
    });
    return out;
}

}  // namespace msts
