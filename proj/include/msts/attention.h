#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msts/params.h"
#include "msts/tensor.h"

namespace msts {

/// One pyramid level. `data` is laid out [S, T, C] with S = height * width in
/// row-major spatial order. Level 0 is the finest scale.
struct ScaleFeatures {
    int level = 0;
    Tensor data;
    int64_t height = 0;
    int64_t width = 0;

    int64_t positions() const { return height * width; }
    int64_t frames() const { return data.size(1); }
    int64_t channels() const { return data.size(2); }
    void validate() const;
};

using ScalePyramid = std::vector<ScaleFeatures>;

/// Pre-norm attention block: y = x + SA(LN(x)); out = y + MLP(LN(y)).
/// Query/key/value projections are square C x C without bias.
struct AttentionParams {
    Tensor w_q, w_k, w_v;
    LayerNormParams norm_attn;
    LayerNormParams norm_mlp;
    Linear mlp_in;
    Linear mlp_out;
    int heads = 1;

    static AttentionParams make(ParamSet& ps, const std::string& name, int64_t channels, int64_t mlp_ratio = 4,
                                int heads = 1);
    int64_t channels() const { return w_q.size(0); }
};

struct InterScaleParams {
    Tensor w_p;  // [2C, C]
    AttentionParams attn;

    static InterScaleParams make(ParamSet& ps, const std::string& name, int64_t channels, int64_t mlp_ratio = 4,
                                 int heads = 1);
};

struct MsStsParams {
    std::vector<AttentionParams> intra;     // one per level
    std::vector<InterScaleParams> inter;    // one per level except the coarsest
    /// Feed the already-enriched coarser level into combine_scales. When
    /// false, each pair is combined from intra-scale outputs only.
    bool progressive = true;

    static MsStsParams make(ParamSet& ps, const std::string& name, int levels, int64_t channels,
                            int64_t mlp_ratio = 4, int heads = 1);
};

/// Intermediates of the module. `enriched` is the output; `intra` holds the
/// intra-scale results per level and `combined` the cross-scale inputs H^l
/// (undefined for the coarsest level).
struct EnrichedPyramid {
    std::vector<Tensor> enriched;
    std::vector<Tensor> intra;
    std::vector<Tensor> combined;
};

/// Scaled dot-product attention over tokens [B, N, C] -> [B, Nq, C]. When
/// `weights` is non-null it receives the softmax matrix [B, heads, Nq, Nk].
Tensor attend(const Tensor& queries, const Tensor& keys, const Tensor& values, const Tensor& w_q,
              const Tensor& w_k, const Tensor& w_v, int heads = 1, Tensor* weights = nullptr);

/// The residual attention + MLP block applied to tokens [B, N, C].
Tensor attention_block(const Tensor& tokens, const AttentionParams& params, Tensor* weights = nullptr);

/// Temporal attention at one scale: every spatial position attends across
/// its own T frames. z is [S, T, C].
Tensor intra_scale_attention(const Tensor& z, const AttentionParams& params, Tensor* weights = nullptr);

/// Upsamples the coarse level x2, concatenates it after the fine level along
/// channels and projects 2C -> C with w_p.
Tensor combine_scales(const ScaleFeatures& fine, const ScaleFeatures& coarse, const Tensor& w_p);

/// Joint spatio-temporal attention over all S*T tokens of h [S, T, C].
Tensor inter_scale_attention(const Tensor& h, const AttentionParams& params, Tensor* weights = nullptr);

EnrichedPyramid ms_sts_module(const ScalePyramid& pyramid, const MsStsParams& params);

enum class AttentionMode { split, joint };

/// Analytic multiply-add counts of the attention cost structure.
struct AttentionFlops {
    int64_t intra = 0;       // sum_l S_l * T^2 * C
    int64_t inter = 0;       // sum_{l<L} (S_l * T)^2 * C
    int64_t split = 0;       // intra + inter
    int64_t joint = 0;       // ((sum_l S_l) * T)^2 * C
    int64_t split_projection = 0;
    int64_t split_mlp = 0;
    int64_t joint_projection = 0;
    int64_t joint_mlp = 0;
};

AttentionFlops attention_flops(int64_t frames, const std::vector<int64_t>& positions, int64_t channels,
                               int64_t mlp_ratio = 4);
int64_t attention_flops(int64_t frames, const std::vector<int64_t>& positions, int64_t channels,
                        AttentionMode mode);

}  // namespace msts
