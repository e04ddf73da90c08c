#include "msts/model.h"

#include "msts/rng.h"

namespace msts {

VisModel::VisModel(const ModelConfig& cfg, uint64_t seed, bool with_discriminator, DType dtype)
    : cfg_(cfg), params_(dtype, mix_seed(seed, 1)), disc_params_(dtype, mix_seed(seed, 2)), has_disc_(with_discriminator) {
    cfg_.validate();
    backbone_ = BackboneParams::make(params_, cfg_);
    for (int i = 0; i < cfg_.layers; ++i) encoder_.push_back(EncoderLayerParams::make(params_, "enc" + std::to_string(i), cfg_));
    queries_ = params_.normal("dec.queries", {cfg_.queries, cfg_.channels}, 1.0);
    for (int i = 0; i < cfg_.layers; ++i) decoder_.push_back(DecoderLayerParams::make(params_, "dec" + std::to_string(i), cfg_));
    heads_ = HeadParams::make(params_, cfg_);
    if (has_disc_) disc_ = DiscriminatorParams::make(disc_params_, 3 + cfg_.channels + 1);
}

ModelOutput VisModel::forward(const Tensor& frames) const {
    ModelOutput out;
    out.features = backbone_stem(frames, backbone_, cfg_);
    out.encoder = encode(out.features, encoder_, cfg_);
    out.decoder = decode(queries_, out.encoder.output, decoder_, cfg_);
    out.predictions = predict(out.decoder, out.encoder.output, heads_);
    return out;
}

}  // namespace msts
