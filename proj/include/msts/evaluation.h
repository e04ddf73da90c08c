#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msts/synthdata.h"
#include "msts/tensor.h"

namespace msts {

/// Binary masks are stored flat as [T, H, W] bytes in {0, 1}.
using MaskSeq = std::vector<uint8_t>;

/// Thresholds a probability tensor: value > 0.5 becomes 1.
MaskSeq binarize(const Tensor& probs, double threshold = 0.5);

/// Sum of per-frame intersections over sum of per-frame unions; two empty
/// sequences have IoU 1.
double video_iou(const MaskSeq& pred, const MaskSeq& gt);
double video_iou(const Tensor& pred, const Tensor& gt);

struct EvalPrediction {
    int64_t class_id = 0;
    double score = 0;
    MaskSeq masks;
};

struct EvalGroundTruth {
    int64_t class_id = 0;
    MaskSeq masks;
};

struct EvalVideo {
    std::vector<EvalPrediction> predictions;
    std::vector<EvalGroundTruth> ground_truth;
    std::set<Attribute> attributes;
};

struct EvalOptions {
    std::vector<double> iou_thresholds;  // empty means 0.50:0.05:0.95
    int64_t max_detections = 100;        // per video, for AP
    static std::vector<double> default_thresholds();
};

struct ThresholdCounts {
    double threshold = 0;
    int64_t tp = 0, fp = 0, fn = 0;
};

struct EvalResult {
    double ap = 0, ap50 = 0, ap75 = 0, ar1 = 0, ar10 = 0;
    std::map<std::string, double> attribute_ap;
    std::vector<ThresholdCounts> counts;
    int64_t videos = 0;
    int64_t classes_evaluated = 0;

    nlohmann::ordered_json to_json() const;
    std::string to_table() const;
};

/// Per-class greedy matching by descending score at every IoU threshold,
/// 101-point interpolated precision, averaged over classes with ground truth
/// and over thresholds. Metrics are percentages. AR1 and AR10 keep the top 1
/// or 10 predictions of each video regardless of class.
EvalResult compute_ap(const std::vector<EvalVideo>& videos, const EvalOptions& opts = {});

/// Mean IoU of consecutive masks of one instance. When `gt_boxes` (normalized
/// cx, cy, w, h per frame) is given, the later mask is shifted back by the
/// rounded ground-truth center displacement before comparing.
double temporal_consistency(const MaskSeq& masks, int64_t frames, int64_t height, int64_t width,
                            const std::vector<double>* gt_boxes = nullptr);

}  // namespace msts
