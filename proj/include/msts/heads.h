#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msts/encdec.h"
#include "msts/params.h"
#include "msts/tensor.h"

namespace msts {

struct PredictionSet {
    Tensor class_logits;  // [n, K+1], last column is no-object
    Tensor boxes;         // [T, n, 4] normalized cx, cy, w, h
    Tensor mask_logits;   // [T, n, Hm, Wm]
};

struct HeadParams {
    Linear cls;
    Linear box1, box2, box3;
    Conv2d mask_refine;   // 3x3 C -> C
    Conv2d mask_project;  // 1x1 C -> Cm
    Linear dynamic;       // C -> Cm + 1 (filter weights and bias)

    static HeadParams make(ParamSet& ps, const ModelConfig& cfg);
};

/// Mask features [T, Cm, Hm, Wm] from the finest encoder level.
Tensor mask_features(const ScaleFeatures& finest, const HeadParams& params);

/// Applies per-instance 1x1 filters [n, Cm] and biases [n] to features
/// [T, Cm, H, W], giving logits [T, n, H, W].
Tensor dynamic_mask_logits(const Tensor& features, const Tensor& filters, const Tensor& biases);

PredictionSet predict(const DecoderOutput& decoded, const ScalePyramid& encoded, const HeadParams& params);

/// One ground-truth instance at mask resolution.
struct GtInstance {
    int64_t class_id = 0;
    std::vector<double> boxes;    // [T, 4]
    std::vector<uint8_t> visible; // [T]
    std::vector<double> masks;    // [T, Hm, Wm], values in [0, 1]
};

struct MatchWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double dice = 2.0;
};

struct Assignment {
    std::vector<int64_t> query_of_gt;  // gt index -> query index
    double total_cost = 0.0;
};

/// Minimum-cost assignment of rows to distinct columns; cost is [rows, cols]
/// row-major with rows <= cols.
Assignment solve_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols);

/// Reference solver by enumerating every injective row -> column map.
Assignment brute_force_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols);

/// Matching cost matrix [gt, queries].
std::vector<double> matching_costs(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                                   const MatchWeights& weights = {});

Assignment hungarian_match(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                           const MatchWeights& weights = {});

/// Soft dice over all elements of two equally shaped tensors.
Tensor dice_coefficient(const Tensor& a, const Tensor& b, double eps = 1.0);

struct LossWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double mask = 2.0;  // binary cross-entropy
    double dice = 5.0;
    double no_object = 0.1;
};

struct LossComponents {
    Tensor total;
    Tensor cls, l1, mask, dice;
};

LossComponents supervised_loss(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                               const Assignment& assignment, const LossWeights& weights = {});

/// Category-agnostic foreground [T, 1, Hm, Wm] from gt instances.
Tensor gt_foreground(const std::vector<GtInstance>& gt, int64_t frames, int64_t height, int64_t width,
                     DType dtype = DType::f32);

/// Soft union 1 - prod(1 - sigmoid(m_i)) over the listed queries.
Tensor predicted_foreground(const PredictionSet& pred, const std::vector<int64_t>& queries);

/// Concatenates frames (resized), finest encoder features and M along
/// channels: [T, 3 + C + 1, Hm, Wm].
Tensor build_disc_input(const Tensor& frames, const ScaleFeatures& finest, const Tensor& mask);

struct DiscriminatorParams {
    std::vector<Conv2d> convs;  // 4 layers, the second one strided
    double slope = 0.2;
    double lambda1 = 10.0;

    static DiscriminatorParams make(ParamSet& ps, int64_t in_channels, int64_t width = 16);
};

/// Patch scores in [1e-6, 1 - 1e-6], shape [T, 1, h, w].
Tensor discriminator(const Tensor& input, const DiscriminatorParams& params);

struct AdversarialLosses {
    Tensor loss_d;
    Tensor loss_enc;
    Tensor feature_l1;  // the lambda1-weighted term before weighting
};

/// Losses from precomputed discriminator scores. `d_pr_for_d` should be
/// D(F_pr.detach()); `d_gt` is detached inside loss_enc.
AdversarialLosses adversarial_losses_from_scores(const Tensor& d_gt, const Tensor& d_pr_for_d,
                                                 const Tensor& d_pr, double lambda1);

/// Evaluates D on both inputs and returns both losses. F_pr keeps its graph
/// in loss_enc and is detached for loss_d.
AdversarialLosses adversarial_losses(const Tensor& f_gt, const Tensor& f_pr, const DiscriminatorParams& d);

}  // namespace msts
