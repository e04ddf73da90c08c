#include "msts/encdec.h"

#include <cmath>

#include "msts/errors.h"
#include "msts/ops.h"

namespace msts {

namespace {

int64_t round_up(int64_t value, int64_t multiple) { return (value + multiple - 1) / multiple * multiple; }

Tensor square_weight(ParamSet& ps, const std::string& name, int64_t c) { return ps.xavier(name, {c, c}, c, c); }

}  // namespace

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(channels >= 4 && channels % 4 == 0, "channels must be a positive multiple of 4");
    require(levels >= 1, "levels must be >= 1");
    require(!ms_sts || levels >= 2, "ms_sts needs levels >= 2");
    require(layers >= 1, "layers must be >= 1");
    require(frames >= 1, "frames must be >= 1");
    require(queries >= 1, "queries must be >= 1");
    require(classes >= 1, "classes must be >= 1");
    require(image_height >= 1 && image_width >= 1, "image extents must be positive");
    require(mlp_ratio >= 1, "mlp_ratio must be >= 1");
    require(heads >= 1 && channels % heads == 0, "heads must divide channels");
    require(fusion_kernel >= 1 && fusion_kernel % 2 == 1, "fusion_kernel must be odd");
    require(mask_channels >= 1, "mask_channels must be >= 1");
    require(stem_widths.size() == 3, "stem_widths needs exactly 3 entries (strides 2, 4, 8)");
    for (auto w : stem_widths) require(w >= 1, "stem widths must be positive");
}

int64_t ModelConfig::padded_height() const { return round_up(image_height, int64_t{1} << (levels + 2)); }
int64_t ModelConfig::padded_width() const { return round_up(image_width, int64_t{1} << (levels + 2)); }
int64_t ModelConfig::level_height(int l) const { return padded_height() >> (l + 3); }
int64_t ModelConfig::level_width(int l) const { return padded_width() >> (l + 3); }

BackboneParams BackboneParams::make(ParamSet& ps, const ModelConfig& cfg) {
    BackboneParams p;
    int64_t cin = 3;
    for (size_t i = 0; i < cfg.stem_widths.size(); ++i) {
        p.stem.push_back(Conv2d::make(ps, "backbone.stem" + std::to_string(i), cin, cfg.stem_widths[i], 3, 2,
                                      ParamGroup::backbone));
        cin = cfg.stem_widths[i];
    }
    for (int l = 1; l < cfg.levels; ++l) {
        p.downsample.push_back(Conv2d::make(ps, "backbone.down" + std::to_string(l), cin, cin, 3, 2,
                                            ParamGroup::backbone));
    }
    for (int l = 0; l < cfg.levels; ++l) {
        p.project.push_back(Conv2d::make(ps, "backbone.proj" + std::to_string(l), cin, cfg.channels, 1, 1,
                                         ParamGroup::backbone));
    }
    return p;
}

int64_t backbone_param_count(const ModelConfig& cfg) {
    const auto& w = cfg.stem_widths;
    int64_t total = (3 * 9 + 1) * w[0] + (w[0] * 9 + 1) * w[1] + (w[1] * 9 + 1) * w[2];
    total += (cfg.levels - 1) * (w[2] * 9 + 1) * w[2];
    total += cfg.levels * (w[2] + 1) * cfg.channels;
    return total;
}

Tensor level_to_maps(const Tensor& data, int64_t height, int64_t width) {
    const int64_t t = data.size(1), c = data.size(2);
    return permute(reshape(data, {height, width, t, c}), {2, 3, 0, 1});
}

Tensor maps_to_level(const Tensor& maps) {
    const int64_t t = maps.size(0), c = maps.size(1), h = maps.size(2), w = maps.size(3);
    return reshape(permute(maps, {2, 3, 0, 1}), {h * w, t, c});
}

ScalePyramid backbone_stem(const Tensor& frames, const BackboneParams& params, const ModelConfig& cfg,
                           StemPadding* padding) {
    if (frames.dim() != 4 || frames.size(1) != 3) {
        throw DimensionError("backbone_stem: expected [T, 3, H, W], got " + shape_str(frames.shape()));
    }
    const int64_t t = frames.size(0), h = frames.size(2), w = frames.size(3);
    const int64_t multiple = int64_t{1} << (cfg.levels + 2);
    const int64_t ph = round_up(h, multiple), pw = round_up(w, multiple);
    Tensor x = frames;
    if (ph != h) x = concat({x, Tensor::zeros({t, 3, ph - h, w}, frames.dtype())}, 2);
    if (pw != w) x = concat({x, Tensor::zeros({t, 3, ph, pw - w}, frames.dtype())}, 3);
    if (padding) *padding = {ph - h, pw - w};

    for (const auto& conv : params.stem) x = relu(conv(x));
    ScalePyramid pyramid;
    for (int l = 0; l < cfg.levels; ++l) {
        if (l > 0) x = relu(params.downsample[static_cast<size_t>(l - 1)](x));
        Tensor maps = params.project[static_cast<size_t>(l)](x);
        pyramid.push_back({l, maps_to_level(maps), maps.size(2), maps.size(3)});
    }
    return pyramid;
}

Tensor positional_encoding_2d(int64_t height, int64_t width, int64_t channels) {
    if (channels % 4 != 0) throw ConfigError("positional_encoding_2d: channels must be a multiple of 4");
    const int64_t quarter = channels / 4;
    std::vector<double> pe(static_cast<size_t>(height * width * channels));
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            double* row = pe.data() + (y * width + x) * channels;
            for (int64_t i = 0; i < quarter; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
                row[2 * i] = std::sin(static_cast<double>(y) * freq);
                row[2 * i + 1] = std::cos(static_cast<double>(y) * freq);
                row[2 * quarter + 2 * i] = std::sin(static_cast<double>(x) * freq);
                row[2 * quarter + 2 * i + 1] = std::cos(static_cast<double>(x) * freq);
            }
        }
    }
    return Tensor::from_data({height * width, channels}, std::move(pe), DType::f64);
}

EncoderLayerParams EncoderLayerParams::make(ParamSet& ps, const std::string& name, const ModelConfig& cfg) {
    const int64_t c = cfg.channels;
    EncoderLayerParams p;
    p.has_ms_sts = cfg.ms_sts;
    for (int l = 0; l < cfg.levels; ++l) {
        const std::string base = name + ".level" + std::to_string(l);
        EncoderLevelParams lp;
        lp.norm_base = LayerNormParams::make(ps, base + ".norm_base", c);
        lp.w_q = square_weight(ps, base + ".w_q", c);
        lp.w_k = square_weight(ps, base + ".w_k", c);
        lp.w_v = square_weight(ps, base + ".w_v", c);
        lp.fusion = Conv2d::make(ps, base + ".fusion", cfg.ms_sts ? 2 * c : c, c, cfg.fusion_kernel, 1);
        if (cfg.ms_sts) {
            // The enriched half starts at zero so the layer initially computes the base path.
            auto wv = lp.fusion.weight.mutable_data();
            const int64_t k2 = cfg.fusion_kernel * cfg.fusion_kernel;
            for (int64_t o = 0; o < c; ++o) {
                for (int64_t i = c; i < 2 * c; ++i) {
                    for (int64_t k = 0; k < k2; ++k) wv[static_cast<size_t>((o * 2 * c + i) * k2 + k)] = 0.0;
                }
            }
        }
        lp.norm_mlp = LayerNormParams::make(ps, base + ".norm_mlp", c);
        lp.mlp_in = Linear::make(ps, base + ".mlp_in", c, cfg.mlp_ratio * c);
        lp.mlp_out = Linear::make(ps, base + ".mlp_out", cfg.mlp_ratio * c, c);
        p.levels.push_back(std::move(lp));
    }
    if (cfg.ms_sts) {
        p.ms_sts = MsStsParams::make(ps, name + ".ms_sts", cfg.levels, c, cfg.mlp_ratio, cfg.heads);
        p.ms_sts.progressive = cfg.progressive;
    }
    return p;
}

std::vector<Tensor> encoder_base_path(const ScalePyramid& pyramid, const EncoderLayerParams& params,
                                      const ModelConfig& cfg) {
    std::vector<Tensor> out;
    for (size_t l = 0; l < pyramid.size(); ++l) {
        const auto& level = pyramid[l];
        level.validate();
        const auto& lp = params.levels.at(l);
        const int64_t t = level.frames(), c = level.channels(), s = level.positions();
        Tensor frames_first = permute(level.data, {1, 0, 2});  // [T, S, C]
        Tensor normed = lp.norm_base(frames_first);
        Tensor pos = expand(reshape(positional_encoding_2d(level.height, level.width, c).to(level.data.dtype()),
                                    {1, s, c}),
                            {t, s, c});
        Tensor qk = add(normed, pos);
        Tensor attended = attend(qk, qk, normed, lp.w_q, lp.w_k, lp.w_v, cfg.heads);
        out.push_back(permute(attended, {1, 0, 2}));
    }
    return out;
}

ScalePyramid encoder_layer(const ScalePyramid& pyramid, const EncoderLayerParams& params, const ModelConfig& cfg) {
    std::vector<Tensor> base = encoder_base_path(pyramid, params, cfg);
    EnrichedPyramid enriched;
    if (params.has_ms_sts) enriched = ms_sts_module(pyramid, params.ms_sts);

    ScalePyramid out;
    for (size_t l = 0; l < pyramid.size(); ++l) {
        const auto& level = pyramid[l];
        const auto& lp = params.levels[l];
        Tensor fused_in = params.has_ms_sts ? concat({base[l], enriched.enriched[l]}, 2) : base[l];
        Tensor fused = maps_to_level(lp.fusion(level_to_maps(fused_in, level.height, level.width)));
        Tensor y = add(level.data, fused);
        Tensor z = add(y, lp.mlp_out(gelu(lp.mlp_in(lp.norm_mlp(y)))));
        out.push_back({level.level, z, level.height, level.width});
    }
    return out;
}

EncoderState encode(const ScalePyramid& features, const std::vector<EncoderLayerParams>& layers,
                    const ModelConfig& cfg) {
    if (layers.empty()) throw ConfigError("encode: at least one encoder layer is required");
    EncoderState state;
    const ScalePyramid* current = &features;
    for (const auto& layer : layers) {
        state.layers.push_back(encoder_layer(*current, layer, cfg));
        current = &state.layers.back();
    }
    state.output = state.layers.back();
    return state;
}

DecoderLayerParams DecoderLayerParams::make(ParamSet& ps, const std::string& name, const ModelConfig& cfg) {
    const int64_t c = cfg.channels;
    DecoderLayerParams p;
    p.sa_q = square_weight(ps, name + ".sa_q", c);
    p.sa_k = square_weight(ps, name + ".sa_k", c);
    p.sa_v = square_weight(ps, name + ".sa_v", c);
    p.norm_sa = LayerNormParams::make(ps, name + ".norm_sa", c);
    p.has_temporal = cfg.temporal_decoder;
    if (p.has_temporal) {
        p.ta_q = square_weight(ps, name + ".ta_q", c);
        p.ta_k = square_weight(ps, name + ".ta_k", c);
        p.ta_v = square_weight(ps, name + ".ta_v", c);
        p.norm_ta = LayerNormParams::make(ps, name + ".norm_ta", c);
    }
    p.ca_q = square_weight(ps, name + ".ca_q", c);
    p.ca_k = square_weight(ps, name + ".ca_k", c);
    p.ca_v = square_weight(ps, name + ".ca_v", c);
    p.norm_ca = LayerNormParams::make(ps, name + ".norm_ca", c);
    p.mlp_in = Linear::make(ps, name + ".mlp_in", c, cfg.mlp_ratio * c);
    p.mlp_out = Linear::make(ps, name + ".mlp_out", cfg.mlp_ratio * c, c);
    p.norm_mlp = LayerNormParams::make(ps, name + ".norm_mlp", c);
    return p;
}

Tensor decoder_temporal_attention(const Tensor& box_queries, const DecoderLayerParams& params, Tensor* weights) {
    if (!params.has_temporal) throw ContractError("decoder_temporal_attention: layer was built without it");
    Tensor per_query = permute(box_queries, {1, 0, 2});  // [n, T, C]
    Tensor out = attend(per_query, per_query, per_query, params.ta_q, params.ta_k, params.ta_v, 1, weights);
    return permute(out, {1, 0, 2});
}

CrossMemory cross_memory(const ScalePyramid& encoded, const ModelConfig& cfg) {
    const size_t used = cfg.cross_all_levels ? encoded.size() : 1;
    std::vector<Tensor> tokens, positions;
    for (size_t l = 0; l < used; ++l) {
        const auto& level = encoded[l];
        const int64_t t = level.frames(), c = level.channels(), s = level.positions();
        tokens.push_back(permute(level.data, {1, 0, 2}));
        Tensor pe = positional_encoding_2d(level.height, level.width, c).to(level.data.dtype());
        positions.push_back(expand(reshape(pe, {1, s, c}), {t, s, c}));
    }
    if (used == 1) return {tokens[0], positions[0]};
    return {concat(tokens, 1), concat(positions, 1)};
}

Tensor decoder_layer(const Tensor& box_queries, const CrossMemory& memory, const DecoderLayerParams& params) {
    if (box_queries.dim() != 3) {
        throw DimensionError("decoder_layer: expected [T, n, C], got " + shape_str(box_queries.shape()));
    }
    Tensor x = box_queries;
    x = params.norm_sa(add(x, attend(x, x, x, params.sa_q, params.sa_k, params.sa_v)));
    if (params.has_temporal) x = params.norm_ta(add(x, decoder_temporal_attention(x, params)));
    Tensor keys = add(memory.tokens, memory.positions);
    x = params.norm_ca(add(x, attend(x, keys, memory.tokens, params.ca_q, params.ca_k, params.ca_v)));
    x = params.norm_mlp(add(x, params.mlp_out(gelu(params.mlp_in(x)))));
    return x;
}

DecoderOutput decode(const Tensor& instance_queries, const ScalePyramid& encoded,
                     const std::vector<DecoderLayerParams>& layers, const ModelConfig& cfg) {
    if (instance_queries.dim() != 2 || instance_queries.size(0) < 1) {
        throw DimensionError("decode: instance queries must be [n, C] with n >= 1");
    }
    const int64_t n = instance_queries.size(0), c = instance_queries.size(1);
    const int64_t t = encoded.at(0).frames();
    CrossMemory memory = cross_memory(encoded, cfg);
    Tensor x = expand(reshape(instance_queries, {1, n, c}), {t, n, c});
    for (const auto& layer : layers) x = decoder_layer(x, memory, layer);
    return {x, mean(x, 0)};
}

}  // namespace msts
