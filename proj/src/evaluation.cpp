#include "msts/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "msts/errors.h"

namespace msts {

MaskSeq binarize(const Tensor& probs, double threshold) {
    MaskSeq out;
    out.reserve(static_cast<size_t>(probs.numel()));
    for (double v : probs.values()) out.push_back(v > threshold ? 1 : 0);
    return out;
}

double video_iou(const MaskSeq& pred, const MaskSeq& gt) {
    if (pred.size() != gt.size()) {
        throw DimensionError("video_iou: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + " pixels");
    }
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double video_iou(const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw DimensionError("video_iou: shapes " + shape_str(pred.shape()) + " and " + shape_str(gt.shape()));
    }
    return video_iou(binarize(pred), binarize(gt));
}

std::vector<double> EvalOptions::default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
    return t;
}

namespace {

struct Detection {
    double score;
    size_t video;
    size_t rank;
    bool tp;
};

struct ClassThresholdStats {
    std::vector<Detection> dets;
    int64_t gt = 0;
};

/// Top-`keep` prediction indices of a video by descending score (stable).
std::vector<size_t> top_predictions(const EvalVideo& v, int64_t keep) {
    std::vector<size_t> idx(v.predictions.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return v.predictions[a].score > v.predictions[b].score; });
    if (static_cast<int64_t>(idx.size()) > keep) idx.resize(static_cast<size_t>(keep));
    return idx;
}

/// stats[t][class] after greedy matching with at most `keep` predictions per video.
std::vector<std::map<int64_t, ClassThresholdStats>> match_all(const std::vector<EvalVideo>& videos,
                                                              const std::vector<std::vector<std::vector<double>>>& ious,
                                                              const std::vector<double>& thresholds, int64_t keep) {
    std::vector<std::map<int64_t, ClassThresholdStats>> stats(thresholds.size());
    for (size_t vi = 0; vi < videos.size(); ++vi) {
        const auto& v = videos[vi];
        const auto kept = top_predictions(v, keep);
        std::set<int64_t> classes;
        for (const auto& g : v.ground_truth) classes.insert(g.class_id);
        for (size_t p : kept) classes.insert(v.predictions[p].class_id);
        for (size_t ti = 0; ti < thresholds.size(); ++ti) {
            for (int64_t c : classes) {
                auto& st = stats[ti][c];
                std::vector<size_t> gts;
                for (size_t g = 0; g < v.ground_truth.size(); ++g)
                    if (v.ground_truth[g].class_id == c) gts.push_back(g);
                st.gt += static_cast<int64_t>(gts.size());
                std::vector<bool> taken(gts.size(), false);
                for (size_t r = 0; r < kept.size(); ++r) {
                    const size_t p = kept[r];
                    if (v.predictions[p].class_id != c) continue;
                    double best_iou = std::min(thresholds[ti], 1.0 - 1e-10);
                    int64_t best = -1;
                    for (size_t k = 0; k < gts.size(); ++k) {
                        if (taken[k]) continue;
                        const double iou = ious[vi][p][gts[k]];
                        if (iou < best_iou) continue;
                        best_iou = iou;
                        best = static_cast<int64_t>(k);
                    }
                    if (best >= 0) taken[static_cast<size_t>(best)] = true;
                    st.dets.push_back({v.predictions[p].score, vi, r, best >= 0});
                }
            }
        }
    }
    for (auto& per_class : stats) {
        for (auto& [c, st] : per_class) {
            std::stable_sort(st.dets.begin(), st.dets.end(), [](const Detection& a, const Detection& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.video != b.video) return a.video < b.video;
                return a.rank < b.rank;
            });
        }
    }
    return stats;
}

double interpolated_ap(const ClassThresholdStats& st) {
    const size_t n = st.dets.size();
    std::vector<double> recall(n), precision(n);
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < n; ++i) {
        st.dets[i].tp ? ++tp : ++fp;
        recall[i] = static_cast<double>(tp) / static_cast<double>(st.gt);
        precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0;
    for (int i = 0; i <= 100; ++i) {
        const double r = static_cast<double>(i) / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

double final_recall(const ClassThresholdStats& st) {
    int64_t tp = 0;
    for (const auto& d : st.dets) tp += d.tp;
    return static_cast<double>(tp) / static_cast<double>(st.gt);
}

size_t threshold_index(const std::vector<double>& th, double value) {
    for (size_t i = 0; i < th.size(); ++i)
        if (std::fabs(th[i] - value) < 1e-9) return i;
    return th.size();
}

EvalResult evaluate(const std::vector<EvalVideo>& videos, const EvalOptions& opts) {
    const auto thresholds = opts.iou_thresholds.empty() ? EvalOptions::default_thresholds() : opts.iou_thresholds;
    std::vector<std::vector<std::vector<double>>> ious(videos.size());
    for (size_t vi = 0; vi < videos.size(); ++vi) {
        const auto& v = videos[vi];
        for (const auto& p : v.predictions) {
            std::vector<double> row;
            for (const auto& g : v.ground_truth) row.push_back(video_iou(p.masks, g.masks));
            ious[vi].push_back(std::move(row));
        }
    }

    EvalResult res;
    res.videos = static_cast<int64_t>(videos.size());
    const auto full = match_all(videos, ious, thresholds, opts.max_detections);
    std::vector<double> ap_per_t(thresholds.size(), 0.0);
    double ap_sum = 0;
    int64_t ap_n = 0;
    std::set<int64_t> evaluated;
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
        ThresholdCounts tc;
        tc.threshold = thresholds[ti];
        double s = 0;
        int64_t n = 0;
        for (const auto& [c, st] : full[ti]) {
            for (const auto& d : st.dets) d.tp ? ++tc.tp : ++tc.fp;
            tc.fn += st.gt;
            if (st.gt == 0) continue;
            evaluated.insert(c);
            s += interpolated_ap(st);
            ++n;
        }
        tc.fn -= tc.tp;
        res.counts.push_back(tc);
        ap_per_t[ti] = n ? 100.0 * s / static_cast<double>(n) : 0.0;
        ap_sum += s;
        ap_n += n;
    }
    res.classes_evaluated = static_cast<int64_t>(evaluated.size());
    res.ap = ap_n ? 100.0 * ap_sum / static_cast<double>(ap_n) : 0.0;
    if (size_t i = threshold_index(thresholds, 0.5); i < thresholds.size()) res.ap50 = ap_per_t[i];
    if (size_t i = threshold_index(thresholds, 0.75); i < thresholds.size()) res.ap75 = ap_per_t[i];

    auto average_recall = [&](int64_t keep) {
        const auto stats = match_all(videos, ious, thresholds, keep);
        double s = 0;
        int64_t n = 0;
        for (const auto& per_class : stats)
            for (const auto& [c, st] : per_class)
                if (st.gt > 0) {
                    s += final_recall(st);
                    ++n;
                }
        return n ? 100.0 * s / static_cast<double>(n) : 0.0;
    };
    res.ar1 = average_recall(1);
    res.ar10 = average_recall(10);
    return res;
}

}  // namespace

EvalResult compute_ap(const std::vector<EvalVideo>& videos, const EvalOptions& opts) {
    EvalResult res = evaluate(videos, opts);
    std::set<Attribute> present;
    for (const auto& v : videos) present.insert(v.attributes.begin(), v.attributes.end());
    for (Attribute a : present) {
        std::vector<EvalVideo> subset;
        for (const auto& v : videos)
            if (v.attributes.count(a)) subset.push_back(v);
        res.attribute_ap[attribute_name(a)] = evaluate(subset, opts).ap;
    }
    return res;
}

nlohmann::ordered_json EvalResult::to_json() const {
    nlohmann::ordered_json j;
    j["AP"] = ap;
    j["AP50"] = ap50;
    j["AP75"] = ap75;
    j["AR1"] = ar1;
    j["AR10"] = ar10;
    j["videos"] = videos;
    j["classes_evaluated"] = classes_evaluated;
    j["attribute_AP"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : attribute_ap) j["attribute_AP"][k] = v;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : counts) arr.push_back({{"iou", c.threshold}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
    j["counts"] = arr;
    return j;
}

std::string EvalResult::to_table() const {
    std::string out;
    char line[128];
    auto row = [&](const std::string& name, double v) {
        std::snprintf(line, sizeof line, "%-22s %8.2f\n", name.c_str(), v);
        out += line;
    };
    row("AP", ap);
    row("AP50", ap50);
    row("AP75", ap75);
    row("AR1", ar1);
    row("AR10", ar10);
    for (const auto& [k, v] : attribute_ap) row("AP[" + k + "]", v);
    std::snprintf(line, sizeof line, "%-8s %6s %6s %6s\n", "IoU", "TP", "FP", "FN");
    out += line;
    for (const auto& c : counts) {
        std::snprintf(line, sizeof line, "%-8.2f %6lld %6lld %6lld\n", c.threshold, static_cast<long long>(c.tp),
                      static_cast<long long>(c.fp), static_cast<long long>(c.fn));
        out += line;
    }
    return out;
}

double temporal_consistency(const MaskSeq& masks, int64_t frames, int64_t height, int64_t width,
                            const std::vector<double>* gt_boxes) {
    if (frames < 2) throw ContractError("temporal_consistency needs at least 2 frames");
    const int64_t hw = height * width;
    if (static_cast<int64_t>(masks.size()) != frames * hw) throw DimensionError("temporal_consistency: mask size mismatch");
    if (gt_boxes && static_cast<int64_t>(gt_boxes->size()) != frames * 4) {
        throw DimensionError("temporal_consistency: expected T*4 box values");
    }
    double total = 0;
    for (int64_t t = 0; t + 1 < frames; ++t) {
        int64_t dx = 0, dy = 0;
        if (gt_boxes) {
            const double* a = gt_boxes->data() + t * 4;
            const double* b = a + 4;
            dx = std::lround((b[0] - a[0]) * static_cast<double>(width));
            dy = std::lround((b[1] - a[1]) * static_cast<double>(height));
        }
        int64_t inter = 0, uni = 0;
        for (int64_t y = 0; y < height; ++y) {
            for (int64_t x = 0; x < width; ++x) {
                const bool p = masks[static_cast<size_t>(t * hw + y * width + x)] != 0;
                const int64_t sy = y + dy, sx = x + dx;
                const bool q = sy >= 0 && sy < height && sx >= 0 && sx < width &&
                               masks[static_cast<size_t>((t + 1) * hw + sy * width + sx)] != 0;
                inter += p && q;
                uni += p || q;
            }
        }
        // Pixels of the later frame that shift in from outside the grid still count.
        if (dx != 0 || dy != 0) {
            for (int64_t y = 0; y < height; ++y)
                for (int64_t x = 0; x < width; ++x) {
                    const int64_t oy = y - dy, ox = x - dx;
                    if (oy >= 0 && oy < height && ox >= 0 && ox < width) continue;
                    uni += masks[static_cast<size_t>((t + 1) * hw + y * width + x)] != 0;
                }
        }
        total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / static_cast<double>(frames - 1);
}

}  // namespace msts
