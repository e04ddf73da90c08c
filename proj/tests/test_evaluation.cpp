#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "msts/errors.h"
#include "msts/evaluation.h"
#include "msts/rng.h"

using namespace msts;

namespace {

// Hand-derived values, fixed before compute_ap existed.
// Staircase: class A detections in score order are TP, FP, TP against 2 gt, so
// recall/precision = (1/2, 1), (1/2, 1/2), (1, 2/3). Interpolated precision is
// 1 at the 51 recall points 0.00..0.50 and 2/3 at the 50 points 0.51..1.00.
// Class B is perfect. Every IoU is 0 or 1, so all thresholds agree.
constexpr double kStaircaseAp = 100.0 * (0.5 * (51.0 + 50.0 * 2.0 / 3.0) / 101.0 + 0.5);  // 91.749174917...
// Two 4x4 frames, pred covers columns 0-1, gt columns 1-2: 8 / 24 pixels.
constexpr double kHalfOverlapIou = 1.0 / 3.0;

MaskSeq box_mask(int64_t frames, int64_t h, int64_t w, int64_t x0, int64_t x1, int64_t y0, int64_t y1) {
    MaskSeq m(static_cast<size_t>(frames * h * w), 0);
    for (int64_t t = 0; t < frames; ++t)
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) m[static_cast<size_t>((t * h + y) * w + x)] = 1;
    return m;
}

MaskSeq random_mask(Rng& rng, size_t n, double p) {
    MaskSeq m(n);
    for (auto& v : m) v = rng.uniform() < p ? 1 : 0;
    return m;
}

MaskSeq perturb(Rng& rng, MaskSeq m, double flip) {
    for (auto& v : m)
        if (rng.uniform() < flip) v = 1 - v;
    return m;
}

std::vector<EvalVideo> random_videos(Rng& rng, int videos, int max_inst) {
    std::vector<EvalVideo> out;
    const size_t n = 2 * 4 * 4;
    for (int v = 0; v < videos; ++v) {
        EvalVideo ev;
        // Ground-truth masks are disjoint, as in rendered clips.
        const auto gts = rng.uniform_int(0, max_inst);
        for (int64_t g = 0; g < gts; ++g) ev.ground_truth.push_back({rng.uniform_int(0, 1), MaskSeq(n, 0)});
        for (size_t px = 0; px < n && gts > 0; ++px) {
            const auto owner = rng.uniform_int(-1, gts);
            if (owner >= 0 && owner < gts) ev.ground_truth[static_cast<size_t>(owner)].masks[px] = 1;
        }
        const auto preds = rng.uniform_int(0, max_inst);
        for (int64_t p = 0; p < preds; ++p) {
            EvalPrediction ep;
            if (!ev.ground_truth.empty() && rng.uniform() < 0.7) {
                const auto& g = ev.ground_truth[static_cast<size_t>(rng.uniform_int(0, gts - 1))];
                ep.class_id = rng.uniform() < 0.8 ? g.class_id : 1 - g.class_id;
                ep.masks = perturb(rng, g.masks, rng.uniform(0.0, 0.3));
            } else {
                ep.class_id = rng.uniform_int(0, 1);
                ep.masks = random_mask(rng, n, 0.4);
            }
            ep.score = std::round(rng.uniform() * 20.0) / 20.0;  // ties on purpose
            ev.predictions.push_back(ep);
        }
        out.push_back(ev);
    }
    return out;
}

/// Straightforward reference: greedy matching written out per detection, and
/// interpolated precision taken as the maximum over every prefix that reaches
/// the recall level.
double reference_ap(const std::vector<EvalVideo>& videos, double thr) {
    double sum = 0;
    int classes = 0;
    for (int64_t c = 0; c < 2; ++c) {
        struct D {
            double score;
            size_t video, rank;
            bool tp;
        };
        std::vector<D> dets;
        int64_t gt_total = 0;
        for (size_t vi = 0; vi < videos.size(); ++vi) {
            const auto& v = videos[vi];
            std::vector<size_t> order;
            for (size_t p = 0; p < v.predictions.size(); ++p) order.push_back(p);
            std::stable_sort(order.begin(), order.end(),
                             [&](size_t a, size_t b) { return v.predictions[a].score > v.predictions[b].score; });
            std::vector<bool> used(v.ground_truth.size(), false);
            for (const auto& g : v.ground_truth) gt_total += g.class_id == c;
            for (size_t r = 0; r < order.size(); ++r) {
                const auto& p = v.predictions[order[r]];
                if (p.class_id != c) continue;
                double best = -1;
                size_t which = 0;
                for (size_t g = 0; g < v.ground_truth.size(); ++g) {
                    if (used[g] || v.ground_truth[g].class_id != c) continue;
                    const double iou = video_iou(p.masks, v.ground_truth[g].masks);
                    if (iou >= thr && iou >= best) {
                        best = iou;
                        which = g;
                    }
                }
                if (best >= 0) used[which] = true;
                dets.push_back({p.score, vi, r, best >= 0});
            }
        }
        if (gt_total == 0) continue;
        ++classes;
        std::stable_sort(dets.begin(), dets.end(), [](const D& a, const D& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.video != b.video ? a.video < b.video : a.rank < b.rank;
        });
        double ap = 0;
        for (int i = 0; i <= 100; ++i) {
            const double r = i / 100.0;
            double best = 0;
            int64_t tp = 0;
            for (size_t k = 0; k < dets.size(); ++k) {
                tp += dets[k].tp;
                if (double(tp) / double(gt_total) >= r) best = std::max(best, double(tp) / double(k + 1));
            }
            ap += best;
        }
        sum += ap / 101.0;
    }
    return classes ? 100.0 * sum / classes : 0.0;
}

std::vector<EvalVideo> staircase() {
    const int64_t t = 2, h = 8, w = 8;
    const auto a1 = box_mask(t, h, w, 0, 3, 0, 3), a2 = box_mask(t, h, w, 4, 8, 4, 8);
    const auto b1 = box_mask(t, h, w, 5, 8, 0, 2), empty_area = box_mask(t, h, w, 0, 2, 6, 8);
    EvalVideo v0, v1;
    v0.ground_truth = {{0, a1}, {1, b1}};
    v0.predictions = {{0, 0.9, a1}, {0, 0.8, empty_area}, {1, 0.95, b1}};
    v1.ground_truth = {{0, a2}};
    v1.predictions = {{0, 0.7, a2}};
    v1.attributes = {Attribute::fast_motion};
    return {v0, v1};
}

}  // namespace

TEST_CASE("video_iou: identical, disjoint, half overlap, empty") {
    const auto a = box_mask(2, 4, 4, 0, 2, 0, 4), b = box_mask(2, 4, 4, 1, 3, 0, 4), c = box_mask(2, 4, 4, 2, 4, 0, 4);
    CHECK(video_iou(a, a) == 1.0);
    CHECK(video_iou(a, c) == 0.0);
    CHECK(video_iou(a, b) == kHalfOverlapIou);
    CHECK(video_iou(MaskSeq(32, 0), MaskSeq(32, 0)) == 1.0);
    CHECK_THROWS_AS(video_iou(a, MaskSeq(16, 0)), DimensionError);

    std::vector<double> pa(a.begin(), a.end()), pb(b.begin(), b.end());
    for (auto& v : pa) v = v ? 0.8 : 0.2;
    CHECK(video_iou(Tensor::from_data({2, 4, 4}, pa, DType::f64), Tensor::from_data({2, 4, 4}, pb, DType::f64)) ==
          kHalfOverlapIou);
    CHECK_THROWS_AS(video_iou(Tensor::zeros({2, 4, 4}), Tensor::zeros({2, 16})), DimensionError);
    // Binarization is strict at 0.5.
    CHECK(binarize(Tensor::from_data({3}, {0.5, 0.500001, 0.2}, DType::f64)) == MaskSeq{0, 1, 0});
}

TEST_CASE("compute_ap: perfect predictions") {
    auto videos = staircase();
    videos[0].predictions.erase(videos[0].predictions.begin() + 1);
    const auto r = compute_ap(videos);
    CHECK(r.ap == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.ap50 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.ap75 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.ar10 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.classes_evaluated == 2);
    REQUIRE(r.counts.size() == 10);
    for (const auto& c : r.counts) {
        CHECK(c.tp == 3);
        CHECK(c.fp == 0);
        CHECK(c.fn == 0);
    }
}

TEST_CASE("compute_ap: no predictions") {
    auto videos = staircase();
    for (auto& v : videos) v.predictions.clear();
    const auto r = compute_ap(videos);
    CHECK(r.ap == 0.0);
    CHECK(r.ar1 == 0.0);
    CHECK(r.ar10 == 0.0);
    CHECK(r.counts[0].fn == 3);
    CHECK(compute_ap({}).ap == 0.0);
}

TEST_CASE("compute_ap: staircase case matches the hand value") {
    const auto r = compute_ap(staircase());
    CHECK(r.ap == doctest::Approx(kStaircaseAp).epsilon(1e-12));
    CHECK(std::fabs(r.ap - 91.74917491749175) < 1e-9);
    CHECK(r.ap50 == doctest::Approx(kStaircaseAp).epsilon(1e-12));
    CHECK(r.ap75 == doctest::Approx(kStaircaseAp).epsilon(1e-12));
    // Top-1 per video: video 0 keeps only the class B hit, video 1 keeps its class A hit.
    CHECK(r.ar1 == doctest::Approx(75.0).epsilon(1e-12));
    CHECK(r.ar10 == doctest::Approx(100.0).epsilon(1e-12));
    for (const auto& c : r.counts) {
        CHECK(c.tp == 3);
        CHECK(c.fp == 1);
        CHECK(c.fn == 0);
    }
    REQUIRE(r.attribute_ap.count("fast_motion") == 1);
    CHECK(r.attribute_ap.at("fast_motion") == doctest::Approx(100.0).epsilon(1e-12));

    const auto j = r.to_json();
    CHECK(j.at("AP").get<double>() == r.ap);
    CHECK(j.at("counts").size() == 10);
    const auto table = r.to_table();
    CHECK(table.find("AP[fast_motion]") != std::string::npos);
    CHECK(table.find("91.75") != std::string::npos);
}

TEST_CASE("compute_ap: partial overlap respects thresholds") {
    // One prediction with IoU 2/3 against its gt: a hit at 0.50..0.65 only.
    const auto gt = box_mask(1, 4, 4, 0, 3, 0, 4), pred = box_mask(1, 4, 4, 0, 2, 0, 4);
    EvalVideo v;
    v.ground_truth = {{0, gt}};
    v.predictions = {{0, 0.5, pred}};
    const auto r = compute_ap({v});
    CHECK(r.ap50 == doctest::Approx(100.0));
    CHECK(r.ap75 == 0.0);
    CHECK(r.ap == doctest::Approx(40.0));
}

TEST_CASE("compute_ap: matches the reference on small random cases") {
    Rng rng(42);
    const auto th = EvalOptions::default_thresholds();
    for (int trial = 0; trial < 200; ++trial) {
        const auto videos = random_videos(rng, static_cast<int>(rng.uniform_int(1, 4)), 3);
        double ref_sum = 0;
        for (double t : th) {
            EvalOptions one;
            one.iou_thresholds = {t};
            const double got = compute_ap(videos, one).ap;
            const double ref = reference_ap(videos, t);
            CHECK(got == doctest::Approx(ref).epsilon(1e-12));
            ref_sum += ref;
        }
        CHECK(compute_ap(videos).ap == doctest::Approx(ref_sum / double(th.size())).epsilon(1e-12));
    }
}

TEST_CASE("compute_ap: monotone in threshold, duplicates never help, bounds") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        auto videos = random_videos(rng, 3, 3);
        const auto th = EvalOptions::default_thresholds();
        double prev = 1e9;
        for (double t : th) {
            EvalOptions one;
            one.iou_thresholds = {t};
            const double ap = compute_ap(videos, one).ap;
            CHECK(ap <= prev + 1e-12);
            prev = ap;
        }
        const auto base = compute_ap(videos);
        CHECK(base.ap <= base.ap50 + 1e-12);
        for (double m : {base.ap, base.ap50, base.ap75, base.ar1, base.ar10}) {
            CHECK(m >= 0.0);
            CHECK(m <= 100.0 + 1e-9);
        }
        // Duplicate every prediction that overlaps a same-class gt by more than
        // half, with a score below all others.
        auto dup = videos;
        for (auto& v : dup) {
            std::vector<EvalPrediction> extra;
            for (const auto& p : v.predictions)
                for (const auto& g : v.ground_truth)
                    if (g.class_id == p.class_id && video_iou(p.masks, g.masks) > 0.5) extra.push_back({p.class_id, -1.0, p.masks});
            v.predictions.insert(v.predictions.end(), extra.begin(), extra.end());
        }
        for (double t : th) {
            EvalOptions one;
            one.iou_thresholds = {t};
            CHECK(compute_ap(dup, one).ap <= compute_ap(videos, one).ap + 1e-12);
        }
    }
}

TEST_CASE("temporal_consistency: constant, alternating, translation") {
    const int64_t h = 8, w = 8;
    const auto square = box_mask(3, h, w, 1, 5, 2, 6);
    CHECK(temporal_consistency(square, 3, h, w) == 1.0);

    MaskSeq alternating(static_cast<size_t>(3 * h * w), 0);
    const auto left = box_mask(1, h, w, 0, 3, 0, 8), right = box_mask(1, h, w, 5, 8, 0, 8);
    std::copy(left.begin(), left.end(), alternating.begin());
    std::copy(right.begin(), right.end(), alternating.begin() + h * w);
    std::copy(left.begin(), left.end(), alternating.begin() + 2 * h * w);
    CHECK(temporal_consistency(alternating, 3, h, w) == 0.0);

    // A 4x4 square moving 3 px right: raw overlap 4 of 28 pixels.
    MaskSeq moving(static_cast<size_t>(2 * h * w), 0);
    const auto f0 = box_mask(1, h, w, 0, 4, 2, 6), f1 = box_mask(1, h, w, 3, 7, 2, 6);
    std::copy(f0.begin(), f0.end(), moving.begin());
    std::copy(f1.begin(), f1.end(), moving.begin() + h * w);
    CHECK(temporal_consistency(moving, 2, h, w) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    // Aligned by a ground truth that also moves 3 px: perfect.
    const std::vector<double> gt_boxes = {2.0 / 8, 4.0 / 8, 0.5, 0.5, 5.0 / 8, 4.0 / 8, 0.5, 0.5};
    CHECK(temporal_consistency(moving, 2, h, w, &gt_boxes) == 1.0);
    // Prediction lags by 1 px after alignment: 12 of 20 pixels.
    MaskSeq lag(static_cast<size_t>(2 * h * w), 0);
    const auto g1 = box_mask(1, h, w, 2, 6, 2, 6);
    std::copy(f0.begin(), f0.end(), lag.begin());
    std::copy(g1.begin(), g1.end(), lag.begin() + h * w);
    CHECK(temporal_consistency(lag, 2, h, w, &gt_boxes) == doctest::Approx(0.6).epsilon(1e-15));
    // A mask partly shifted out of the grid still counts in the union.
    const std::vector<double> far = {2.0 / 8, 4.0 / 8, 0.5, 0.5, 7.0 / 8, 4.0 / 8, 0.5, 0.5};
    CHECK(temporal_consistency(moving, 2, h, w, &far) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    CHECK_THROWS_AS(temporal_consistency(square, 1, h, w), ContractError);
}
