#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msts/attention.h"
#include "msts/params.h"
#include "msts/tensor.h"

namespace msts {

/// Architecture hyperparameters shared by the encoder, decoder and heads.
struct ModelConfig {
    int64_t channels = 32;      // C
    int levels = 2;             // L
    int layers = 2;             // N_d, for both encoder and decoder
    int64_t frames = 3;         // T
    int64_t queries = 8;        // n
    int64_t classes = 3;        // K, excluding no-object
    int64_t image_height = 64;
    int64_t image_width = 64;
    int64_t mlp_ratio = 4;
    int heads = 1;
    int64_t fusion_kernel = 1;
    int64_t mask_channels = 16;
    std::vector<int64_t> stem_widths{16, 32, 32};
    bool ms_sts = true;
    bool progressive = true;
    bool temporal_decoder = true;
    bool cross_all_levels = false;

    void validate() const;
    /// Padded input extents: the smallest multiples of 2^(L+2) that fit the image.
    int64_t padded_height() const;
    int64_t padded_width() const;
    /// Spatial extents of pyramid level l (0 = finest, stride 8).
    int64_t level_height(int l) const;
    int64_t level_width(int l) const;
};

struct BackboneParams {
    std::vector<Conv2d> stem;        // stride-2 3x3 convs down to stride 8
    std::vector<Conv2d> downsample;  // one extra stride-2 conv per coarser level
    std::vector<Conv2d> project;     // per-level 1x1 conv to C

    static BackboneParams make(ParamSet& ps, const ModelConfig& cfg);
};

/// Closed-form parameter count of BackboneParams for `cfg`.
int64_t backbone_param_count(const ModelConfig& cfg);

/// Zero padding applied to the bottom/right of the input by backbone_stem.
struct StemPadding {
    int64_t bottom = 0;
    int64_t right = 0;
};

/// frames [T, 3, H, W] -> L levels of [S^l, T, C].
ScalePyramid backbone_stem(const Tensor& frames, const BackboneParams& params, const ModelConfig& cfg,
                           StemPadding* padding = nullptr);

/// Fixed 2-D sinusoidal encoding [H*W, C]; the first half of the channels
/// encodes the row, the second half the column.
Tensor positional_encoding_2d(int64_t height, int64_t width, int64_t channels);

/// Per-level parameters of one encoder layer.
struct EncoderLevelParams {
    LayerNormParams norm_base;
    Tensor w_q, w_k, w_v;
    Conv2d fusion;  // 2C -> C with MS-STS, C -> C without
    LayerNormParams norm_mlp;
    Linear mlp_in, mlp_out;
};

struct EncoderLayerParams {
    std::vector<EncoderLevelParams> levels;
    bool has_ms_sts = false;
    MsStsParams ms_sts;

    static EncoderLayerParams make(ParamSet& ps, const std::string& name, const ModelConfig& cfg);
};

/// Base path only: per-frame attention within each level with positional
/// encodings on queries and keys. Returns [S^l, T, C] per level.
std::vector<Tensor> encoder_base_path(const ScalePyramid& pyramid, const EncoderLayerParams& params,
                                      const ModelConfig& cfg);

ScalePyramid encoder_layer(const ScalePyramid& pyramid, const EncoderLayerParams& params, const ModelConfig& cfg);

struct EncoderState {
    std::vector<ScalePyramid> layers;  // output of every layer
    ScalePyramid output;               // E
};

EncoderState encode(const ScalePyramid& features, const std::vector<EncoderLayerParams>& layers,
                    const ModelConfig& cfg);

struct DecoderLayerParams {
    Tensor sa_q, sa_k, sa_v;
    LayerNormParams norm_sa;
    bool has_temporal = false;
    Tensor ta_q, ta_k, ta_v;
    LayerNormParams norm_ta;
    Tensor ca_q, ca_k, ca_v;
    LayerNormParams norm_ca;
    Linear mlp_in, mlp_out;
    LayerNormParams norm_mlp;

    static DecoderLayerParams make(ParamSet& ps, const std::string& name, const ModelConfig& cfg);
};

/// Temporal attention over box queries [T, n, C]: each query index attends
/// across its own T frame embeddings. Returns the attention output (no
/// residual) and optionally weights [n, 1, T, T].
Tensor decoder_temporal_attention(const Tensor& box_queries, const DecoderLayerParams& params,
                                  Tensor* weights = nullptr);

/// Keys/values for cross-attention: [T, K, C] tokens and their encodings.
struct CrossMemory {
    Tensor tokens;
    Tensor positions;
};

CrossMemory cross_memory(const ScalePyramid& encoded, const ModelConfig& cfg);

/// Post-norm decoder layer on box queries [T, n, C].
Tensor decoder_layer(const Tensor& box_queries, const CrossMemory& memory, const DecoderLayerParams& params);

struct DecoderOutput {
    Tensor box_features;       // B^O [T, n, C]
    Tensor instance_features;  // I^O [n, C]
};

DecoderOutput decode(const Tensor& instance_queries, const ScalePyramid& encoded,
                     const std::vector<DecoderLayerParams>& layers, const ModelConfig& cfg);

/// [S, T, C] level data -> [T, C, H, W] feature maps and back.
Tensor level_to_maps(const Tensor& data, int64_t height, int64_t width);
Tensor maps_to_level(const Tensor& maps);

}  // namespace msts
