#pragma once

#include <vector>

#include "msts/tensor.h"

// Differentiable tensor operations. Binary elementwise ops require equal
// shapes; use expand() to broadcast explicitly. Outputs are f64 when any
// input is f64, f32 otherwise.
namespace msts {

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum(const Tensor& x, int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, int64_t axis, bool keepdim = false);

// Layout
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& dims);
Tensor transpose(const Tensor& x, int64_t a, int64_t b);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t length);
/// Broadcasts size-1 axes and prepends leading axes to reach `shape`.
Tensor expand(const Tensor& x, const Shape& shape);

// Linear algebra
/// Batched product of [.., m, k] and [.., k, n]; batch axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[.., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());

// Neural network primitives
/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int64_t axis);
Tensor log_softmax(const Tensor& x, int64_t axis);
/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Cross-correlation of x[N, Cin, H, W] with weight[Cout, Cin, k, k].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int64_t stride = 1,
              int64_t pad = 0);
/// Bilinear resize of the two trailing axes, align-corners=false.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor upsample_bilinear_x2(const Tensor& x);

}  // namespace msts
