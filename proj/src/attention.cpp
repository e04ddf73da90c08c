#include "msts/attention.h"

#include <cmath>

#include "msts/ops.h"

namespace msts {

void ScaleFeatures::validate() const {
    if (!data.defined() || data.dim() != 3) throw DimensionError("ScaleFeatures: data must be [S, T, C]");
    if (data.size(0) != height * width) {
        throw DimensionError("ScaleFeatures: level " + std::to_string(level) + " has " +
                             std::to_string(data.size(0)) + " positions but extents " + std::to_string(height) +
                             "x" + std::to_string(width));
    }
}

AttentionParams AttentionParams::make(ParamSet& ps, const std::string& name, int64_t channels, int64_t mlp_ratio,
                                      int heads) {
    if (heads < 1 || channels % heads != 0) {
        throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide channels (" +
                          std::to_string(channels) + ")");
    }
    AttentionParams p;
    p.w_q = ps.xavier(name + ".w_q", {channels, channels}, channels, channels);
    p.w_k = ps.xavier(name + ".w_k", {channels, channels}, channels, channels);
    p.w_v = ps.xavier(name + ".w_v", {channels, channels}, channels, channels);
    p.norm_attn = LayerNormParams::make(ps, name + ".norm_attn", channels);
    p.norm_mlp = LayerNormParams::make(ps, name + ".norm_mlp", channels);
    p.mlp_in = Linear::make(ps, name + ".mlp_in", channels, mlp_ratio * channels);
    p.mlp_out = Linear::make(ps, name + ".mlp_out", mlp_ratio * channels, channels);
    p.heads = heads;
    return p;
}

InterScaleParams InterScaleParams::make(ParamSet& ps, const std::string& name, int64_t channels, int64_t mlp_ratio,
                                        int heads) {
    InterScaleParams p;
    p.w_p = ps.xavier(name + ".w_p", {2 * channels, channels}, 2 * channels, channels);
    p.attn = AttentionParams::make(ps, name + ".attn", channels, mlp_ratio, heads);
    return p;
}

MsStsParams MsStsParams::make(ParamSet& ps, const std::string& name, int levels, int64_t channels,
                              int64_t mlp_ratio, int heads) {
    if (levels < 2) throw ConfigError("MS-STS needs at least 2 pyramid levels, got " + std::to_string(levels));
    MsStsParams p;
    for (int l = 0; l < levels; ++l) {
        p.intra.push_back(AttentionParams::make(ps, name + ".intra" + std::to_string(l), channels, mlp_ratio, heads));
    }
    for (int l = 0; l + 1 < levels; ++l) {
        p.inter.push_back(InterScaleParams::make(ps, name + ".inter" + std::to_string(l), channels, mlp_ratio, heads));
    }
    return p;
}

Tensor attend(const Tensor& queries, const Tensor& keys, const Tensor& values, const Tensor& w_q, const Tensor& w_k,
              const Tensor& w_v, int heads, Tensor* weights) {
    if (queries.dim() != 3 || keys.dim() != 3 || values.dim() != 3) {
        throw DimensionError("attend: expected [B, N, C] tokens, got " + shape_str(queries.shape()));
    }
    const int64_t batch = queries.size(0), nq = queries.size(1), nk = keys.size(1), c = queries.size(2);
    const int64_t d = c / heads;
    Tensor q = matmul(queries, w_q);
    Tensor k = matmul(keys, w_k);
    Tensor v = matmul(values, w_v);
    if (heads > 1) {
        q = permute(reshape(q, {batch, nq, heads, d}), {0, 2, 1, 3});
        k = permute(reshape(k, {batch, nk, heads, d}), {0, 2, 1, 3});
        v = permute(reshape(v, {batch, nk, heads, d}), {0, 2, 1, 3});
    }
    Tensor scores = scale(matmul(q, transpose(k, -1, -2)), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor attn = softmax(scores, -1);
    if (weights) *weights = heads > 1 ? attn : reshape(attn, {batch, 1, nq, nk});
    Tensor out = matmul(attn, v);
    if (heads > 1) out = reshape(permute(out, {0, 2, 1, 3}), {batch, nq, c});
    return out;
}

Tensor attention_block(const Tensor& tokens, const AttentionParams& p, Tensor* weights) {
    Tensor normed = p.norm_attn(tokens);
    Tensor y = add(tokens, attend(normed, normed, normed, p.w_q, p.w_k, p.w_v, p.heads, weights));
    Tensor hidden = gelu(p.mlp_in(p.norm_mlp(y)));
    return add(y, p.mlp_out(hidden));
}

Tensor intra_scale_attention(const Tensor& z, const AttentionParams& params, Tensor* weights) {
    if (z.dim() != 3) throw DimensionError("intra_scale_attention: expected [S, T, C], got " + shape_str(z.shape()));
    // Positions are the batch axis; attention runs across frames only.
    return attention_block(z, params, weights);
}

Tensor combine_scales(const ScaleFeatures& fine, const ScaleFeatures& coarse, const Tensor& w_p) {
    fine.validate();
    coarse.validate();
    if (fine.height != 2 * coarse.height || fine.width != 2 * coarse.width) {
        throw DimensionError("combine_scales: coarse extents " + std::to_string(coarse.height) + "x" +
                             std::to_string(coarse.width) + " are not half of " + std::to_string(fine.height) + "x" +
                             std::to_string(fine.width));
    }
    const int64_t t = fine.frames(), c = fine.channels();
    if (coarse.frames() != t || coarse.channels() != c) {
        throw DimensionError("combine_scales: frame/channel mismatch " + shape_str(fine.data.shape()) + " vs " +
                             shape_str(coarse.data.shape()));
    }
    Tensor grid = permute(reshape(coarse.data, {coarse.height, coarse.width, t, c}), {2, 3, 0, 1});
    Tensor up = upsample_bilinear_x2(grid);  // [T, C, H, W]
    Tensor back = reshape(permute(up, {2, 3, 0, 1}), {fine.positions(), t, c});
    return matmul(concat({fine.data, back}, 2), w_p);
}

Tensor inter_scale_attention(const Tensor& h, const AttentionParams& params, Tensor* weights) {
    if (h.dim() != 3) throw DimensionError("inter_scale_attention: expected [S, T, C], got " + shape_str(h.shape()));
    const Shape shape = h.shape();
    Tensor tokens = reshape(h, {1, shape[0] * shape[1], shape[2]});
    return reshape(attention_block(tokens, params, weights), shape);
}

EnrichedPyramid ms_sts_module(const ScalePyramid& pyramid, const MsStsParams& params) {
    const size_t levels = pyramid.size();
    if (levels < 2) throw ConfigError("ms_sts_module: pyramid needs at least 2 levels");
    if (params.intra.size() != levels || params.inter.size() != levels - 1) {
        throw ConfigError("ms_sts_module: parameters built for " + std::to_string(params.intra.size()) +
                          " levels, pyramid has " + std::to_string(levels));
    }
    EnrichedPyramid out;
    out.intra.resize(levels);
    out.enriched.resize(levels);
    out.combined.resize(levels);
    for (size_t l = 0; l < levels; ++l) {
        pyramid[l].validate();
        out.intra[l] = intra_scale_attention(pyramid[l].data, params.intra[l]);
    }
    out.enriched[levels - 1] = out.intra[levels - 1];
    for (size_t l = levels - 1; l-- > 0;) {
        ScaleFeatures fine{static_cast<int>(l), out.intra[l], pyramid[l].height, pyramid[l].width};
        ScaleFeatures coarse{static_cast<int>(l + 1), params.progressive ? out.enriched[l + 1] : out.intra[l + 1],
                             pyramid[l + 1].height, pyramid[l + 1].width};
        out.combined[l] = combine_scales(fine, coarse, params.inter[l].w_p);
        out.enriched[l] = inter_scale_attention(out.combined[l], params.inter[l].attn);
    }
    return out;
}

AttentionFlops attention_flops(int64_t frames, const std::vector<int64_t>& positions, int64_t channels,
                               int64_t mlp_ratio) {
    if (frames < 1 || channels < 1 || positions.empty()) throw ContractError("attention_flops: extents must be positive");
    AttentionFlops f;
    int64_t total_positions = 0;
    const int64_t c2 = channels * channels;
    for (size_t l = 0; l < positions.size(); ++l) {
        const int64_t s = positions[l];
        if (s < 1) throw ContractError("attention_flops: extents must be positive");
        total_positions += s;
        const int64_t tokens = s * frames;
        f.intra += s * frames * frames * channels;
        f.split_projection += 3 * tokens * c2;
        f.split_mlp += 2 * mlp_ratio * tokens * c2;
        if (l + 1 < positions.size()) {
            f.inter += tokens * tokens * channels;
            f.split_projection += 2 * tokens * c2 + 3 * tokens * c2;
            f.split_mlp += 2 * mlp_ratio * tokens * c2;
        }
    }
    const int64_t joint_tokens = total_positions * frames;
    f.split = f.intra + f.inter;
    f.joint = joint_tokens * joint_tokens * channels;
    f.joint_projection = 3 * joint_tokens * c2;
    f.joint_mlp = 2 * mlp_ratio * joint_tokens * c2;
    return f;
}

int64_t attention_flops(int64_t frames, const std::vector<int64_t>& positions, int64_t channels, AttentionMode mode) {
    const auto f = attention_flops(frames, positions, channels);
    return mode == AttentionMode::split ? f.split : f.joint;
}

}  // namespace msts
