#include <cmath>

#include "kernels.h"
#include "msts/ops.h"

namespace msts {

Tensor softmax(const Tensor& x, int64_t axis) {
    const int64_t ax = kernels::normalize_axis(axis, x.dim());
    const auto s = kernels::split_at(x.shape(), ax);
    Tensor out = detail::make_output(x.shape(), x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
            const int64_t base = o * s.extent * s.inner + i;
            double mx = xs[base];
            for (int64_t a = 1; a < s.extent; ++a) mx = std::max(mx, xs[base + a * s.inner]);
            double total = 0.0;
            for (int64_t a = 0; a < s.extent; ++a) {
                const double e = std::exp(xs[base + a * s.inner] - mx);
                y[base + a * s.inner] = e;
                total += e;
            }
            for (int64_t a = 0; a < s.extent; ++a) y[base + a * s.inner] /= total;
        }
    }
    detail::finish(out, {x}, "softmax", [s](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
        const auto& yv = node.out();
        auto& gx = *gin[0];
        for (int64_t o = 0; o < s.outer; ++o) {
            for (int64_t i = 0; i < s.inner; ++i) {
                const int64_t base = o * s.extent * s.inner + i;
                double dot = 0.0;
                for (int64_t a = 0; a < s.extent; ++a) dot += g[base + a * s.inner] * yv[base + a * s.inner];
                for (int64_t a = 0; a < s.extent; ++a) {
                    const int64_t k = base + a * s.inner;
                    gx[k] += yv[k] * (g[k] - dot);
                }
            }
        }
    });
    return out;
}

Tensor log_softmax(const Tensor& x, int64_t axis) {
    const int64_t ax = kernels::normalize_axis(axis, x.dim());
    const auto s = kernels::split_at(x.shape(), ax);
    Tensor out = detail::make_output(x.shape(), x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t i = 0; i < s.inner; ++i) {
            const int64_t base = o * s.extent * s.inner + i;
            double mx = xs[base];
            for (int64_t a = 1; a < s.extent; ++a) mx = std::max(mx, xs[base + a * s.inner]);
            double total = 0.0;
            for (int64_t a = 0; a < s.extent; ++a) total += std::exp(xs[base + a * s.inner] - mx);
            const double lse = mx + std::log(total);
            for (int64_t a = 0; a < s.extent; ++a) y[base + a * s.inner] = xs[base + a * s.inner] - lse;
        }
    }
    detail::finish(out, {x}, "log_softmax", [s](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
        const auto& yv = node.out();
        auto& gx = *gin[0];
        for (int64_t o = 0; o < s.outer; ++o) {
            for (int64_t i = 0; i < s.inner; ++i) {
                const int64_t base = o * s.extent * s.inner + i;
                double gsum = 0.0;
                for (int64_t a = 0; a < s.extent; ++a) gsum += g[base + a * s.inner];
                for (int64_t a = 0; a < s.extent; ++a) {
                    const int64_t k = base + a * s.inner;
                    gx[k] += g[k] - std::exp(yv[k]) * gsum;
                }
            }
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t c = x.size(-1);
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(c) + " entries");
    }
    const int64_t rows = x.numel() / c;
    Tensor out = detail::make_output(x.shape(), detail::promote({x, gamma, beta}));
    auto& y = out.impl()->data;
    // Normalized values and reciprocal std are kept for the backward rule.
    auto xhat = std::make_shared<std::vector<double>>(x.values().size());
    auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const auto& xs = x.values();
    const auto& gm = gamma.values();
    const auto& bt = beta.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xs.data() + r * c;
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = inv;
        for (int64_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * inv;
            (*xhat)[r * c + j] = h;
            y[r * c + j] = h * gm[j] + bt[j];
        }
    }
    detail::finish(out, {x, gamma, beta}, "layer_norm",
                   [rows, c, xhat, rstd](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
                       const auto& gm = node.in(1);
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* gr = g.data() + r * c;
                           const double* hr = xhat->data() + r * c;
                           if (gin[0]) {
                               double mean_g = 0.0, mean_gh = 0.0;
                               for (int64_t j = 0; j < c; ++j) {
                                   const double gh = gr[j] * gm[j];
                                   mean_g += gh;
                                   mean_gh += gh * hr[j];
                               }
                               mean_g /= static_cast<double>(c);
                               mean_gh /= static_cast<double>(c);
                               auto& gx = *gin[0];
                               for (int64_t j = 0; j < c; ++j) {
                                   gx[r * c + j] += (*rstd)[r] * (gr[j] * gm[j] - mean_g - hr[j] * mean_gh);
                               }
                           }
                           if (gin[1])
                               for (int64_t j = 0; j < c; ++j) (*gin[1])[j] += gr[j] * hr[j];
                           if (gin[2])
                               for (int64_t j = 0; j < c; ++j) (*gin[2])[j] += gr[j];
                       }
                   });
    return out;
}

namespace {

struct ConvGeometry {
    int64_t n, cin, h, w, cout, k, stride, pad, ho, wo;
    int64_t patch() const { return cin * k * k; }
    int64_t positions() const { return ho * wo; }
};

// cols[cin*k*k, ho*wo] for one image
void im2col(const double* x, const ConvGeometry& g, double* cols) {
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                double* row = cols + ((c * g.k + ky) * g.k + kx) * g.positions();
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    for (int64_t ox = 0; ox < g.wo; ++ox) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        row[oy * g.wo + ox] =
                            (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : 0.0;
                    }
                }
            }
}

void col2im(const double* cols, const ConvGeometry& g, double* x) {
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols + ((c * g.k + ky) * g.k + kx) * g.positions();
                for (int64_t oy = 0; oy < g.ho; ++oy) {
                    const int64_t iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int64_t ox = 0; ox < g.wo; ++ox) {
                        const int64_t ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) x[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int64_t stride, int64_t pad) {
    if (x.dim() != 4 || weight.dim() != 4) {
        throw DimensionError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) + " and " +
                             shape_str(weight.shape()));
    }
    if (x.size(1) != weight.size(1)) {
        throw DimensionError("conv2d: input channels " + shape_str(x.shape()) + " do not match weight " +
                             shape_str(weight.shape()));
    }
    if (weight.size(2) != weight.size(3) || weight.size(2) % 2 == 0) {
        throw DimensionError("conv2d: kernel must be square with odd extent, got " + shape_str(weight.shape()));
    }
    if (stride < 1 || pad < 0) throw ContractError("conv2d: stride must be >= 1 and pad >= 0");
    ConvGeometry geo{x.size(0), x.size(1), x.size(2), x.size(3), weight.size(0), weight.size(2), stride, pad, 0, 0};
    geo.ho = (geo.h + 2 * pad - geo.k) / stride + 1;
    geo.wo = (geo.w + 2 * pad - geo.k) / stride + 1;
    if (geo.ho <= 0 || geo.wo <= 0) throw DimensionError("conv2d: kernel larger than padded input");
    if (bias.defined() && bias.numel() != geo.cout) throw DimensionError("conv2d: bias extent mismatch");

    Tensor out = detail::make_output({geo.n, geo.cout, geo.ho, geo.wo}, detail::promote({x, weight, bias}));
    auto& y = out.impl()->data;
    std::vector<double> cols(static_cast<size_t>(geo.patch() * geo.positions()));
    const int64_t in_image = geo.cin * geo.h * geo.w;
    const int64_t out_image = geo.cout * geo.positions();
    for (int64_t b = 0; b < geo.n; ++b) {
        im2col(x.values().data() + b * in_image, geo, cols.data());
        double* yb = y.data() + b * out_image;
        if (bias.defined())
            for (int64_t o = 0; o < geo.cout; ++o)
                std::fill_n(yb + o * geo.positions(), geo.positions(), bias.values()[o]);
        kernels::gemm_nn(weight.values().data(), cols.data(), yb, geo.cout, geo.patch(), geo.positions());
    }
    detail::finish(out, {x, weight, bias}, "conv2d",
                   [geo, in_image, out_image](const TapeNode& node, const std::vector<double>& g, GradSlots& gin) {
                       std::vector<double> cols(static_cast<size_t>(geo.patch() * geo.positions()));
                       for (int64_t b = 0; b < geo.n; ++b) {
                           const double* gb = g.data() + b * out_image;
                           if (gin[1]) {
                               im2col(node.in(0).data() + b * in_image, geo, cols.data());
                               kernels::gemm_nt(gb, cols.data(), gin[1]->data(), geo.cout, geo.positions(),
                                                geo.patch());
                           }
                           if (gin[0]) {
                               std::fill(cols.begin(), cols.end(), 0.0);
                               kernels::gemm_tn(node.in(1).data(), gb, cols.data(), geo.patch(), geo.cout,
                                                geo.positions());
                               col2im(cols.data(), geo, gin[0]->data() + b * in_image);
                           }
                           if (gin[2]) {
                               for (int64_t o = 0; o < geo.cout; ++o)
                                   for (int64_t p = 0; p < geo.positions(); ++p)
                                       (*gin[2])[o] += gb[o * geo.positions() + p];
                           }
                       }
                   });
    return out;
}

namespace {

struct Taps {
    std::vector<int64_t> lo, hi;
    std::vector<double> frac;
};

Taps bilinear_taps(int64_t in, int64_t out) {
    Taps t;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        int64_t lo = static_cast<int64_t>(src);
        if (lo > in - 1) lo = in - 1;
        const int64_t hi = lo < in - 1 ? lo + 1 : lo;
        t.lo.push_back(lo);
        t.hi.push_back(hi);
        t.frac.push_back(src - static_cast<double>(lo));
    }
    return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.dim() < 2) throw DimensionError("resize_bilinear: need at least 2 axes");
    if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: output extents must be positive");
    const int64_t h = x.size(-2), w = x.size(-1);
    const int64_t planes = x.numel() / (h * w);
    auto ty = std::make_shared<Taps>(bilinear_taps(h, out_h));
    auto tx = std::make_shared<Taps>(bilinear_taps(w, out_w));
    Shape shape = x.shape();
    shape[shape.size() - 2] = out_h;
    shape[shape.size() - 1] = out_w;
    Tensor out = detail::make_output(shape, x.dtype());
    auto& y = out.impl()->data;
    const auto& xs = x.values();
    for (int64_t p = 0; p < planes; ++p) {
        const double* src = xs.data() + p * h * w;
        double* dst = y.data() + p * out_h * out_w;
        for (int64_t i = 0; i < out_h; ++i) {
            const double fy = ty->frac[i];
            const double* r0 = src + ty->lo[i] * w;
            const double* r1 = src + ty->hi[i] * w;
            for (int64_t j = 0; j < out_w; ++j) {
                const double fx = tx->frac[j];
                const int64_t x0 = tx->lo[j], x1 = tx->hi[j];
                const double top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                const double bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[i * out_w + j] = top + (bot - top) * fy;
            }
        }
    }
    detail::finish(out, {x}, "resize_bilinear",
                   [planes, h, w, out_h, out_w, ty, tx](const TapeNode&, const std::vector<double>& g, GradSlots& gin) {
                       auto& gx = *gin[0];
                       for (int64_t p = 0; p < planes; ++p) {
                           double* dst = gx.data() + p * h * w;
                           const double* gp = g.data() + p * out_h * out_w;
                           for (int64_t i = 0; i < out_h; ++i) {
                               const double fy = ty->frac[i];
                               double* r0 = dst + ty->lo[i] * w;
                               double* r1 = dst + ty->hi[i] * w;
                               for (int64_t j = 0; j < out_w; ++j) {
                                   const double fx = tx->frac[j];
                                   const double v = gp[i * out_w + j];
                                   const int64_t x0 = tx->lo[j], x1 = tx->hi[j];
                                   r0[x0] += v * (1.0 - fy) * (1.0 - fx);
                                   r0[x1] += v * (1.0 - fy) * fx;
                                   r1[x0] += v * fy * (1.0 - fx);
                                   r1[x1] += v * fy * fx;
                               }
                           }
                       }
                   });
    return out;
}

Tensor upsample_bilinear_x2(const Tensor& x) { return resize_bilinear(x, 2 * x.size(-2), 2 * x.size(-1)); }

}  // namespace msts
