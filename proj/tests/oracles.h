#pragma once

// Straight-line reference implementations used only by tests. None of these
// call into the library's ops; they work on raw value arrays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec matmul(const Vec& a, const Vec& b, int64_t m, int64_t k, int64_t n) {
    Vec c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

inline Vec softmax(const Vec& x) {
    long double mx = x[0];
    for (double v : x) mx = std::max<long double>(mx, v);
    long double total = 0;
    for (double v : x) total += std::exp(static_cast<long double>(v) - mx);
    Vec y;
    for (double v : x) y.push_back(static_cast<double>(std::exp(static_cast<long double>(v) - mx) / total));
    return y;
}

inline Vec conv2d(const Vec& x, const Vec& w, const Vec& b, int64_t n, int64_t cin, int64_t h, int64_t wd,
                  int64_t cout, int64_t k, int64_t stride, int64_t pad) {
    const int64_t ho = (h + 2 * pad - k) / stride + 1;
    const int64_t wo = (wd + 2 * pad - k) / stride + 1;
    Vec y(static_cast<size_t>(n * cout * ho * wo), 0.0);
    for (int64_t bi = 0; bi < n; ++bi)
        for (int64_t o = 0; o < cout; ++o)
            for (int64_t oy = 0; oy < ho; ++oy)
                for (int64_t ox = 0; ox < wo; ++ox) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (int64_t c = 0; c < cin; ++c)
                        for (int64_t ky = 0; ky < k; ++ky)
                            for (int64_t kx = 0; kx < k; ++kx) {
                                const int64_t iy = oy * stride - pad + ky;
                                const int64_t ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += x[((bi * cin + c) * h + iy) * wd + ix] * w[((o * cin + c) * k + ky) * k + kx];
                            }
                    y[((bi * cout + o) * ho + oy) * wo + ox] = acc;
                }
    return y;
}

/// Bilinear sample of one plane at output pixel (i, j) for an (oh, ow) grid,
/// half-pixel centers, edge clamped.
inline double bilinear_pixel(const Vec& plane, int64_t h, int64_t w, int64_t oh, int64_t ow, int64_t i, int64_t j) {
    auto coord = [](int64_t dst, int64_t in, int64_t out) {
        double s = (dst + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        return s < 0 ? 0.0 : s;
    };
    const double sy = coord(i, h, oh), sx = coord(j, w, ow);
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sy)), h - 1);
    const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sx)), w - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1), x1 = std::min<int64_t>(x0 + 1, w - 1);
    const double fy = sy - y0, fx = sx - x0;
    return plane[y0 * w + x0] * (1 - fy) * (1 - fx) + plane[y0 * w + x1] * (1 - fy) * fx +
           plane[y1 * w + x0] * fy * (1 - fx) + plane[y1 * w + x1] * fy * fx;
}

inline Vec layer_norm_row(const Vec& x, const Vec& g, const Vec& b, double eps) {
    double mu = 0;
    for (double v : x) mu += v;
    mu /= x.size();
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= x.size();
    Vec y;
    for (size_t i = 0; i < x.size(); ++i) y.push_back((x[i] - mu) / std::sqrt(var + eps) * g[i] + b[i]);
    return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Single-head attention of `tokens` query rows against `keys` rows.
/// q_in[nq, c], kv_in[nk, c], weights [c, c] row-major (x * W).
inline Vec attention(const Vec& q_in, const Vec& k_in, const Vec& v_in, int64_t nq, int64_t nk, int64_t c,
                     const Vec& wq, const Vec& wk, const Vec& wv, Vec* weights_out = nullptr) {
    Vec q = matmul(q_in, wq, nq, c, c), k = matmul(k_in, wk, nk, c, c), v = matmul(v_in, wv, nk, c, c);
    Vec out(static_cast<size_t>(nq * c), 0.0);
    for (int64_t i = 0; i < nq; ++i) {
        Vec scores(static_cast<size_t>(nk));
        for (int64_t j = 0; j < nk; ++j) {
            double d = 0;
            for (int64_t p = 0; p < c; ++p) d += q[i * c + p] * k[j * c + p];
            scores[j] = d / std::sqrt(static_cast<double>(c));
        }
        Vec w = softmax(scores);
        if (weights_out) weights_out->insert(weights_out->end(), w.begin(), w.end());
        for (int64_t j = 0; j < nk; ++j)
            for (int64_t p = 0; p < c; ++p) out[i * c + p] += w[j] * v[j * c + p];
    }
    return out;
}

}  // namespace oracle
