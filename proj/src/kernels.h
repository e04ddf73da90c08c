#pragma once

#include <cstdint>
#include <vector>

#include "msts/tensor.h"

namespace msts::kernels {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    int64_t m, int64_t k, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline int64_t normalize_axis(int64_t axis, int64_t rank) {
    const int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    }
    return a;
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
    int64_t outer = 1;
    int64_t extent = 1;
    int64_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, int64_t axis) {
    AxisSplit s;
    for (int64_t i = 0; i < static_cast<int64_t>(shape.size()); ++i) {
        if (i < axis) s.outer *= shape[i];
        else if (i == axis) s.extent = shape[i];
        else s.inner *= shape[i];
    }
    return s;
}

}  // namespace msts::kernels
