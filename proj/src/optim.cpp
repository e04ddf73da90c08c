#include <cmath>

#include "msts/errors.h"
#include "msts/trainer.h"

namespace msts {

void adamw_step(ParamSet& params, AdamWState& state, const AdamWConfig& cfg,
                const std::function<double(ParamGroup)>& lr_of) {
    auto& entries = params.entries();
    if (state.steps.empty()) {
        state.m.resize(entries.size());
        state.v.resize(entries.size());
        state.steps.assign(entries.size(), 0);
    }
    if (state.steps.size() != entries.size()) throw ContractError("adamw_step: optimizer state does not match parameters");

    for (const auto& e : entries) {
        if (!e.tensor.has_grad()) continue;
        for (double g : e.tensor.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
    }

    for (size_t i = 0; i < entries.size(); ++i) {
        Tensor& p = entries[i].tensor;
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        const int64_t t = ++state.steps[i];
        const double lr = lr_of(entries[i].group);
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        auto w = p.mutable_data();
        for (size_t k = 0; k < w.size(); ++k) {
            w[k] *= 1.0 - lr * cfg.weight_decay;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
        }
        p.round_to_dtype();
    }
}

double clip_grad_norm(ParamSet& params, double max_norm) {
    double sq = 0;
    for (const auto& e : params.entries())
        if (e.tensor.has_grad())
            for (double g : e.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double f = max_norm / (norm + 1e-6);
        for (auto& e : params.entries())
            if (e.tensor.has_grad())
                for (double& g : e.tensor.impl()->grad) g *= f;
    }
    return norm;
}

double scheduled_lr(const TrainConfig& cfg, int64_t epoch, ParamGroup group) {
    int drops = 0;
    for (int64_t d : cfg.lr_drops) drops += epoch + 1 >= d;
    const double lr = cfg.lr * std::pow(cfg.lr_drop_factor, drops);
    return group == ParamGroup::backbone ? lr * cfg.backbone_lr_mult : lr;
}

}  // namespace msts
