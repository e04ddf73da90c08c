#include "msts/grad_cases.h"

#include <cmath>
#include <memory>

#include "msts/attention.h"
#include "msts/encdec.h"
#include "msts/heads.h"
#include "msts/ops.h"

namespace msts {

namespace {

GradCase unary_case(const std::string& name, Tensor (*fn)(const Tensor&)) {
    return {"tensor_core", name, [](Rng& rng) { return std::vector<Tensor>{randn({3, 4}, rng)}; },
            [fn](const std::vector<Tensor>& in) { return random_projection(fn(in[0]), 99); }};
}

/// Appends every tensor of `ps` after `inputs` so parameters are checked too.
std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamSet& ps) {
    for (const auto& e : ps.entries()) inputs.push_back(e.tensor);
    return inputs;
}

/// Moves parameters off their initial values; zero biases put ReLU inputs
/// exactly on the kink, where one-sided differences disagree with the rule.
void jitter(ParamSet& ps, uint64_t seed) {
    Rng rng(seed);
    for (auto& e : ps.entries())
        for (auto& v : e.tensor.mutable_data()) v += 0.1 * rng.normal();
}

void add_core_cases(std::vector<GradCase>& cases) {
    cases.push_back(unary_case("exp", &msts::exp));
    cases.push_back(unary_case("sigmoid", &msts::sigmoid));
    cases.push_back(unary_case("gelu", &msts::gelu));
    cases.push_back(unary_case("square", &msts::square));
    cases.push_back(unary_case("relu", &msts::relu));
    cases.push_back(unary_case("abs", &msts::abs));
    cases.push_back({"tensor_core", "leaky_relu_clamp", [](Rng& rng) { return std::vector<Tensor>{randn({3, 4}, rng)}; },
                     [](const std::vector<Tensor>& in) {
                         return random_projection(add(leaky_relu(in[0], 0.2), clamp(in[0], -0.5, 0.5)), 11);
                     }});
    cases.push_back({"tensor_core", "log", [](Rng& rng) {
                         auto t = randn({5}, rng);
                         for (auto& v : t.mutable_data()) v = std::fabs(v) + 0.5;
                         return std::vector<Tensor>{t};
                     },
                     [](const std::vector<Tensor>& in) { return random_projection(log(in[0]), 1); }});
    cases.push_back({"tensor_core", "add_mul_sub",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 3}, rng), randn({2, 3}, rng)}; },
                     [](const std::vector<Tensor>& in) {
                         return random_projection(sub(mul(in[0], in[1]), add(in[0], in[1])), 2);
                     }});
    cases.push_back({"tensor_core", "div_scale", [](Rng& rng) {
                         auto d = randn({2, 3}, rng);
                         for (auto& v : d.mutable_data()) v = std::fabs(v) + 0.5;
                         return std::vector<Tensor>{randn({2, 3}, rng), d};
                     },
                     [](const std::vector<Tensor>& in) {
                         return random_projection(add_scalar(scale(div(in[0], in[1]), 1.5), 2.0), 12);
                     }});
    cases.push_back({"tensor_core", "matmul_batched",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 3, 4}, rng), randn({4, 2}, rng)}; },
                     [](const std::vector<Tensor>& in) { return random_projection(matmul(in[0], in[1]), 3); }});
    cases.push_back({"tensor_core", "linear",
                     [](Rng& rng) {
                         return std::vector<Tensor>{randn({2, 3, 4}, rng), randn({4, 5}, rng), randn({5}, rng)};
                     },
                     [](const std::vector<Tensor>& in) { return random_projection(linear(in[0], in[1], in[2]), 4); }});
    cases.push_back({"tensor_core", "softmax",
                     [](Rng& rng) { return std::vector<Tensor>{randn({3, 4}, rng)}; },
                     [](const std::vector<Tensor>& in) { return random_projection(softmax(in[0], 0), 5); }});
    cases.push_back({"tensor_core", "log_softmax",
                     [](Rng& rng) { return std::vector<Tensor>{randn({3, 4}, rng)}; },
                     [](const std::vector<Tensor>& in) { return random_projection(log_softmax(in[0], -1), 6); }});
    cases.push_back({"tensor_core", "layer_norm",
                     [](Rng& rng) {
                         return std::vector<Tensor>{randn({3, 6}, rng), randn({6}, rng), randn({6}, rng)};
                     },
                     [](const std::vector<Tensor>& in) {
                         return random_projection(layer_norm(in[0], in[1], in[2]), 7);
                     }});
    cases.push_back({"tensor_core", "conv2d",
                     [](Rng& rng) {
                         return std::vector<Tensor>{randn({2, 2, 5, 5}, rng), randn({3, 2, 3, 3}, rng), randn({3}, rng)};
                     },
                     [](const std::vector<Tensor>& in) { return random_projection(conv2d(in[0], in[1], in[2], 2, 1), 8); }});
    cases.push_back({"tensor_core", "resize_bilinear",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 3, 3}, rng)}; },
                     [](const std::vector<Tensor>& in) {
                         return add(random_projection(resize_bilinear(in[0], 6, 6), 9), random_projection(resize_bilinear(in[0], 2, 5), 14));
                     }});
    cases.push_back({"tensor_core", "upsample_bilinear_x2",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 1, 2, 3}, rng)}; },
                     [](const std::vector<Tensor>& in) { return random_projection(upsample_bilinear_x2(in[0]), 13); }});
    cases.push_back({"tensor_core", "layout",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 3, 4}, rng), randn({2, 1, 4}, rng)}; },
                     [](const std::vector<Tensor>& in) {
                         auto c = concat({in[0], expand(in[1], {2, 3, 4})}, 2);
                         auto p = permute(c, {2, 0, 1});
                         auto s = slice(reshape(p, {8, 6}), 0, 2, 5);
                         return random_projection(add(mean(sum(s, 1, true), 0), sum_all(transpose(s, 0, 1))), 10);
                     }});
}

void add_attention_cases(std::vector<GradCase>& cases) {
    auto ps = std::make_shared<ParamSet>(DType::f64, 101);
    auto ms = std::make_shared<MsStsParams>(MsStsParams::make(*ps, "m", 2, 4, 2));
    jitter(*ps, 102);
    const AttentionParams* intra = &ms->intra[0];
    const AttentionParams* inter = &ms->inter[0].attn;

    cases.push_back({"attention", "intra_scale_attention",
                     [ps](Rng& rng) { return with_params({randn({4, 2, 4}, rng)}, *ps); },
                     [ms, intra](const std::vector<Tensor>& in) {
                         return random_projection(intra_scale_attention(in[0], *intra), 21);
                     }});
    cases.push_back({"attention", "combine_scales",
                     [](Rng& rng) {
                         return std::vector<Tensor>{randn({4, 2, 4}, rng), randn({1, 2, 4}, rng), randn({8, 4}, rng)};
                     },
                     [](const std::vector<Tensor>& in) {
                         return random_projection(combine_scales({0, in[0], 2, 2}, {1, in[1], 1, 1}, in[2]), 22);
                     }});
    cases.push_back({"attention", "inter_scale_attention",
                     [ps](Rng& rng) { return with_params({randn({4, 2, 4}, rng)}, *ps); },
                     [ms, inter](const std::vector<Tensor>& in) {
                         return random_projection(inter_scale_attention(in[0], *inter), 23);
                     }});
    cases.push_back({"attention", "ms_sts_module",
                     [ps](Rng& rng) { return with_params({randn({4, 2, 4}, rng), randn({1, 2, 4}, rng)}, *ps); },
                     [ms](const std::vector<Tensor>& in) {
                         auto out = ms_sts_module({{0, in[0], 2, 2}, {1, in[1], 1, 1}}, *ms);
                         return add(random_projection(out.enriched[0], 24), random_projection(out.enriched[1], 25));
                     }});
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.frames = 2;
    cfg.queries = 3;
    cfg.layers = 1;
    cfg.image_height = 16;
    cfg.image_width = 16;
    cfg.mlp_ratio = 2;
    cfg.mask_channels = 3;
    cfg.stem_widths = {2, 2, 3};
    return cfg;
}

void add_encdec_cases(std::vector<GradCase>& cases) {
    const ModelConfig cfg = tiny_model();
    auto ps = std::make_shared<ParamSet>(DType::f64, 201);
    auto backbone = std::make_shared<BackboneParams>(BackboneParams::make(*ps, cfg));
    auto enc = std::make_shared<EncoderLayerParams>(EncoderLayerParams::make(*ps, "enc0", cfg));
    auto dec = std::make_shared<DecoderLayerParams>(DecoderLayerParams::make(*ps, "dec0", cfg));
    jitter(*ps, 202);

    cases.push_back({"encdec", "backbone_stem",
                     [ps](Rng& rng) {
                         auto frames = randn({2, 3, 16, 16}, rng);
                         return std::vector<Tensor>{frames};
                     },
                     [backbone, cfg](const std::vector<Tensor>& in) {
                         auto pyr = backbone_stem(in[0], *backbone, cfg);
                         return add(random_projection(pyr[0].data, 31), random_projection(pyr[1].data, 32));
                     }});
    cases.push_back({"encdec", "encoder_layer",
                     [ps](Rng& rng) { return with_params({randn({4, 2, 4}, rng), randn({1, 2, 4}, rng)}, *ps); },
                     [enc, cfg](const std::vector<Tensor>& in) {
                         auto out = encoder_layer({{0, in[0], 2, 2}, {1, in[1], 1, 1}}, *enc, cfg);
                         return add(random_projection(out[0].data, 33), random_projection(out[1].data, 34));
                     }});
    cases.push_back({"encdec", "decoder_layer",
                     [ps](Rng& rng) { return with_params({randn({2, 3, 4}, rng), randn({4, 2, 4}, rng)}, *ps); },
                     [dec, cfg](const std::vector<Tensor>& in) {
                         ScalePyramid pyr{{0, in[1], 2, 2}};
                         return random_projection(decoder_layer(in[0], cross_memory(pyr, cfg), *dec), 35);
                     }});
    cases.push_back({"encdec", "decode",
                     [ps](Rng& rng) { return with_params({randn({3, 4}, rng), randn({4, 2, 4}, rng)}, *ps); },
                     [dec, cfg](const std::vector<Tensor>& in) {
                         ScalePyramid pyr{{0, in[1], 2, 2}};
                         auto out = decode(in[0], pyr, {*dec}, cfg);
                         return add(random_projection(out.instance_features, 36), random_projection(out.box_features, 37));
                     }});
}

void add_heads_cases(std::vector<GradCase>& cases) {
    const ModelConfig cfg = tiny_model();
    auto ps = std::make_shared<ParamSet>(DType::f64, 301);
    auto heads = std::make_shared<HeadParams>(HeadParams::make(*ps, cfg));
    auto dps = std::make_shared<ParamSet>(DType::f64, 302);
    auto disc = std::make_shared<DiscriminatorParams>(DiscriminatorParams::make(*dps, 3 + 4 + 1, 3));
    jitter(*ps, 304);
    jitter(*dps, 305);

    // Fixed instances at mask resolution 2x2, T = 2.
    auto gt = std::make_shared<std::vector<GtInstance>>();
    gt->push_back({1, {0.5, 0.5, 0.5, 0.5, 0.4, 0.5, 0.3, 0.5}, {1, 1}, {1, 0, 0, 0, 1, 1, 0, 0}});
    gt->push_back({0, {0.2, 0.2, 0.2, 0.2, 0, 0, 0, 0}, {1, 0}, {0, 0, 0, 1, 0, 0, 0, 0}});

    cases.push_back({"heads", "predict",
                     [ps](Rng& rng) {
                         return with_params({randn({3, 4}, rng), randn({2, 3, 4}, rng), randn({4, 2, 4}, rng)}, *ps);
                     },
                     [heads](const std::vector<Tensor>& in) {
                         auto p = predict({in[1], in[0]}, {{0, in[2], 2, 2}}, *heads);
                         return add(add(random_projection(p.class_logits, 41), random_projection(p.boxes, 42)),
                                    random_projection(p.mask_logits, 43));
                     }});
    cases.push_back({"heads", "supervised_loss",
                     [](Rng& rng) {
                         auto boxes = randn({2, 3, 4}, rng, 0.3);
                         for (auto& v : boxes.mutable_data()) v = 0.5 + v;  // keep |box - gt| away from kinks
                         return std::vector<Tensor>{randn({3, 4}, rng), boxes, randn({2, 3, 2, 2}, rng)};
                     },
                     [gt](const std::vector<Tensor>& in) {
                         PredictionSet p{in[0], in[1], in[2]};
                         return supervised_loss(p, *gt, {{2, 0}, 0.0}).total;
                     }});
    cases.push_back({"heads", "predicted_foreground",
                     [](Rng& rng) { return std::vector<Tensor>{randn({2, 3, 2, 2}, rng)}; },
                     [](const std::vector<Tensor>& in) {
                         PredictionSet p;
                         p.mask_logits = in[0];
                         return random_projection(predicted_foreground(p, {0, 2}), 44);
                     }});
    auto frames = std::make_shared<Tensor>();
    auto e_gt = std::make_shared<Tensor>();
    {
        Rng rng(303);
        *frames = randn({2, 3, 4, 4}, rng);
        *e_gt = randn({16, 2, 4}, rng);
    }
    // Detached tensors are constants of each loss, so each side is checked
    // with the other side's inputs held fixed.
    auto m_gt = std::make_shared<Tensor>(Tensor::full({2, 1, 4, 4}, 1.0, DType::f64));
    cases.push_back({"heads", "adversarial_losses.enc",
                     [](Rng& rng) { return std::vector<Tensor>{randn({16, 2, 4}, rng), randn({2, 1, 4, 4}, rng)}; },
                     [disc, frames, e_gt, m_gt](const std::vector<Tensor>& in) {
                         auto f_gt = build_disc_input(*frames, {0, *e_gt, 4, 4}, *m_gt);
                         auto f_pr = build_disc_input(*frames, {0, in[0], 4, 4}, sigmoid(in[1]));
                         return adversarial_losses(f_gt, f_pr, *disc).loss_enc;
                     }});
    auto e_pr = std::make_shared<Tensor>();
    {
        Rng rng(306);
        *e_pr = randn({16, 2, 4}, rng);
    }
    cases.push_back({"heads", "adversarial_losses.disc",
                     [dps](Rng&) { return with_params({}, *dps); },
                     [disc, frames, e_gt, e_pr, m_gt](const std::vector<Tensor>&) {
                         auto f_gt = build_disc_input(*frames, {0, *e_gt, 4, 4}, *m_gt);
                         auto f_pr = build_disc_input(*frames, {0, *e_pr, 4, 4}, scale(*m_gt, 0.3));
                         return adversarial_losses(f_gt, f_pr, *disc).loss_d;
                     }});
}

}  // namespace

std::vector<GradCase> registered_grad_cases() {
    std::vector<GradCase> cases;
    add_core_cases(cases);
    add_attention_cases(cases);
    add_encdec_cases(cases);
    add_heads_cases(cases);
    return cases;
}

std::vector<GradCase> grad_cases_for(const std::string& module) {
    std::vector<GradCase> out;
    for (auto& c : registered_grad_cases()) {
        if (module.empty() || c.module == module) out.push_back(std::move(c));
    }
    return out;
}

}  // namespace msts
