#pragma once

#include <cstdint>
#include <vector>

#include "msts/encdec.h"
#include "msts/heads.h"

namespace msts {

struct ModelOutput {
    ScalePyramid features;  // backbone output F
    EncoderState encoder;   // E = encoder.output
    DecoderOutput decoder;
    PredictionSet predictions;
};

/// The full network. Model and discriminator parameters live in separate
/// sets so each optimizer only ever touches its own side.
class VisModel {
public:
    VisModel(const ModelConfig& cfg, uint64_t seed, bool with_discriminator, DType dtype = DType::f32);
    VisModel(const VisModel&) = delete;
    VisModel& operator=(const VisModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    ParamSet& disc_params() { return disc_params_; }
    const ParamSet& disc_params() const { return disc_params_; }
    bool has_discriminator() const { return has_disc_; }
    const DiscriminatorParams& discriminator_params() const { return disc_; }
    DiscriminatorParams& discriminator_params() { return disc_; }
    const HeadParams& heads() const { return heads_; }
    const std::vector<EncoderLayerParams>& encoder_layers() const { return encoder_; }
    const std::vector<DecoderLayerParams>& decoder_layers() const { return decoder_; }
    const Tensor& instance_queries() const { return queries_; }

    /// frames [T, 3, H, W] in [0, 1].
    ModelOutput forward(const Tensor& frames) const;

private:
    ModelConfig cfg_;
    ParamSet params_;
    ParamSet disc_params_;
    BackboneParams backbone_;
    std::vector<EncoderLayerParams> encoder_;
    Tensor queries_;
    std::vector<DecoderLayerParams> decoder_;
    HeadParams heads_;
    bool has_disc_ = false;
    DiscriminatorParams disc_;
};

}  // namespace msts
