#include <algorithm>
#include <cmath>
#include <memory>

#include "doctest.h"
#include "msts/gradcheck.h"
#include "msts/heads.h"
#include "msts/model.h"
#include "msts/ops.h"

using namespace msts;

namespace {

std::vector<double> random_costs(Rng& rng, int64_t rows, int64_t cols, bool integer) {
    std::vector<double> c(static_cast<size_t>(rows * cols));
    for (auto& v : c) v = integer ? static_cast<double>(rng.uniform_int(0, 9)) : rng.uniform(0.0, 10.0);
    return c;
}

double assignment_cost(const std::vector<double>& cost, int64_t cols, const std::vector<int64_t>& a) {
    double total = 0;
    for (size_t i = 0; i < a.size(); ++i) total += cost[i * static_cast<size_t>(cols) + static_cast<size_t>(a[i])];
    return total;
}

Tensor filled(const Shape& s, Rng& rng, DType dt = DType::f64) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.normal();
    return Tensor::from_data(s, v, dt);
}

/// Two instances on T=2 frames of 3x3 masks; instance 1 is hidden in frame 1.
std::vector<GtInstance> tiny_gt() {
    GtInstance a;
    a.class_id = 1;
    a.boxes = {0.5, 0.5, 0.4, 0.4, 0.55, 0.5, 0.4, 0.3};
    a.visible = {1, 1};
    a.masks = {1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0};
    GtInstance b;
    b.class_id = 0;
    b.boxes = {0.2, 0.8, 0.2, 0.2, 0, 0, 0, 0};
    b.visible = {1, 0};
    b.masks = {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    return {a, b};
}

PredictionSet random_prediction(Rng& rng, int64_t t, int64_t n, int64_t k1, int64_t h, int64_t w) {
    PredictionSet p;
    p.class_logits = filled({n, k1}, rng);
    p.boxes = sigmoid(filled({t, n, 4}, rng));
    p.mask_logits = filled({t, n, h, w}, rng);
    return p;
}

}  // namespace

TEST_CASE("predict") {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.frames = 3;
    cfg.queries = 2;
    cfg.classes = 3;
    cfg.image_height = 128;
    cfg.image_width = 128;
    cfg.layers = 1;
    VisModel model(cfg, 1, false);
    Rng rng(2);
    std::vector<double> px(3 * 3 * 128 * 128);
    for (auto& v : px) v = rng.uniform();
    auto out = model.forward(Tensor::from_data({3, 3, 128, 128}, px));

    SUBCASE("shape contract") {
        CHECK(out.predictions.class_logits.shape() == Shape{2, 4});
        CHECK(out.predictions.boxes.shape() == Shape{3, 2, 4});
        CHECK(out.predictions.mask_logits.shape() == Shape{3, 2, 16, 16});
        for (double v : out.predictions.boxes.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
    SUBCASE("zero dynamic filters give logits 0 and probability 0.5") {
        auto heads = model.heads();
        heads.dynamic.weight = Tensor::zeros(heads.dynamic.weight.shape());
        heads.dynamic.bias = Tensor::zeros(heads.dynamic.bias.shape());
        auto p = predict(out.decoder, out.encoder.output, heads);
        for (double v : p.mask_logits.values()) CHECK(v == 0.0);
        for (double v : sigmoid(p.mask_logits).values()) CHECK(v == 0.5);
    }
}

TEST_CASE("dynamic mask logits match per-instance loop") {
    Rng rng(3);
    const int64_t t = 2, cm = 3, h = 2, w = 3, n = 4;
    auto feats = filled({t, cm, h, w}, rng);
    auto filters = filled({n, cm}, rng);
    auto biases = filled({n}, rng);
    auto logits = dynamic_mask_logits(feats, filters, biases);
    REQUIRE(logits.shape() == Shape{t, n, h, w});
    for (int64_t f = 0; f < t; ++f)
        for (int64_t i = 0; i < n; ++i)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    double acc = biases.at({i});
                    for (int64_t c = 0; c < cm; ++c) acc += filters.at({i, c}) * feats.at({f, c, y, x});
                    CHECK(std::fabs(logits.at({f, i, y, x}) - acc) < 1e-12);
                }
}

TEST_CASE("assignment solver") {
    SUBCASE("single pair") {
        auto a = solve_assignment({4.0}, 1, 1);
        CHECK(a.query_of_gt == std::vector<int64_t>{0});
        CHECK(a.total_cost == 4.0);
    }
    SUBCASE("anti-diagonal costs give the identity") {
        auto a = solve_assignment({0, 1, 1, 0}, 2, 2);
        CHECK(a.query_of_gt == std::vector<int64_t>{0, 1});
        CHECK(a.total_cost == 0.0);
    }
    SUBCASE("no rows") { CHECK(solve_assignment({}, 0, 3).query_of_gt.empty()); }
    SUBCASE("more rows than columns is a contract error") {
        CHECK_THROWS_AS(solve_assignment(std::vector<double>(6, 0.0), 3, 2), ContractError);
    }
    SUBCASE("random 5x8 matrices equal the enumeration minimum") {
        Rng rng(4);
        for (int trial = 0; trial < 20; ++trial) {
            auto cost = random_costs(rng, 5, 8, false);
            auto fast = solve_assignment(cost, 5, 8);
            auto slow = brute_force_assignment(cost, 5, 8);
            CHECK(fast.total_cost == doctest::Approx(slow.total_cost).epsilon(1e-12));
            CHECK(assignment_cost(cost, 8, fast.query_of_gt) == doctest::Approx(slow.total_cost).epsilon(1e-12));
        }
    }
    SUBCASE("integer ties up to 6x8 reach the same minimum") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            const int64_t rows = rng.uniform_int(1, 6), cols = rng.uniform_int(rows, 8);
            auto cost = random_costs(rng, rows, cols, true);
            auto fast = solve_assignment(cost, rows, cols);
            auto slow = brute_force_assignment(cost, rows, cols);
            CHECK(fast.total_cost == slow.total_cost);
            std::vector<int64_t> used = fast.query_of_gt;
            std::sort(used.begin(), used.end());
            CHECK(std::adjacent_find(used.begin(), used.end()) == used.end());
        }
    }
}

TEST_CASE("hungarian_match on predictions") {
    Rng rng(6);
    auto gt = tiny_gt();
    auto pred = random_prediction(rng, 2, 4, 3, 3, 3);
    auto a = hungarian_match(pred, gt);
    auto cost = matching_costs(pred, gt);
    auto slow = brute_force_assignment(cost, 2, 4);
    CHECK(a.total_cost == doctest::Approx(slow.total_cost));

    SUBCASE("cost terms by hand for one pair") {
        const auto probs = softmax(pred.class_logits, 1).values();
        const auto masks = sigmoid(pred.mask_logits).values();
        // gt 1 against query 2: only frame 0 is visible.
        double l1 = 0;
        for (int d = 0; d < 4; ++d) l1 += std::fabs(pred.boxes.at({0, 2, d}) - gt[1].boxes[static_cast<size_t>(d)]);
        double inter = 0, area = 0;
        for (int f = 0; f < 2; ++f)
            for (int s = 0; s < 9; ++s) {
                const double m = masks[static_cast<size_t>((f * 4 + 2) * 9 + s)];
                inter += m * gt[1].masks[static_cast<size_t>(f * 9 + s)];
                area += m;
            }
        const double dice = (2 * inter + 1) / (area + 1 + 1);
        const double expected = 2 * (1 - probs[2 * 3 + 0]) + 5 * l1 + 2 * (1 - dice);
        CHECK(cost[1 * 4 + 2] == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("too few queries") {
        auto small = random_prediction(rng, 2, 1, 3, 3, 3);
        CHECK_THROWS_AS(hungarian_match(small, gt), ContractError);
    }
}

TEST_CASE("dice coefficient") {
    Rng rng(7);
    std::vector<double> m(20);
    for (auto& v : m) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    m[0] = 1.0;
    std::vector<double> inv(m.size());
    for (size_t i = 0; i < m.size(); ++i) inv[i] = 1.0 - m[i];
    auto a = Tensor::from_data({20}, m, DType::f64);
    auto b = Tensor::from_data({20}, inv, DType::f64);
    CHECK(dice_coefficient(a, a, 0.0).item() == 1.0);
    CHECK(dice_coefficient(a, b, 0.0).item() == 0.0);
    CHECK(dice_coefficient(a, a).item() == 1.0);
}

TEST_CASE("supervised loss") {
    auto gt = tiny_gt();
    Rng rng(8);

    SUBCASE("perfect masks give zero dice loss") {
        auto pred = random_prediction(rng, 2, 3, 3, 3, 3);
        std::vector<double> logits(2 * 3 * 9, -60.0);
        for (int f = 0; f < 2; ++f)
            for (int s = 0; s < 9; ++s) {
                logits[static_cast<size_t>((f * 3 + 2) * 9 + s)] = gt[0].masks[static_cast<size_t>(f * 9 + s)] > 0 ? 60 : -60;
                logits[static_cast<size_t>((f * 3 + 0) * 9 + s)] = gt[1].masks[static_cast<size_t>(f * 9 + s)] > 0 ? 60 : -60;
            }
        pred.mask_logits = Tensor::from_data({2, 3, 3, 3}, logits, DType::f64);
        Assignment a{{2, 0}, 0.0};
        auto loss = supervised_loss(pred, gt, a);
        CHECK(loss.dice.item() == 0.0);
        CHECK(loss.mask.item() < 1e-20);
    }
    SUBCASE("uniform one-half masks give ln 2 cross-entropy") {
        auto pred = random_prediction(rng, 2, 3, 3, 3, 3);
        pred.mask_logits = Tensor::zeros({2, 3, 3, 3}, DType::f64);
        auto loss = supervised_loss(pred, gt, {{1, 2}, 0.0});
        CHECK(loss.mask.item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }
    SUBCASE("components match a straight-line reimplementation") {
        auto pred = random_prediction(rng, 2, 3, 4, 3, 3);
        Assignment a{{2, 0}, 0.0};
        LossWeights w;
        auto loss = supervised_loss(pred, gt, a, w);

        const auto& cl = pred.class_logits.values();
        double ce = 0, wsum = 0;
        for (int q = 0; q < 3; ++q) {
            const int target = q == 2 ? 1 : (q == 0 ? 0 : 3);
            const double weight = target == 3 ? 0.1 : 1.0;
            double mx = -1e300;
            for (int k = 0; k < 4; ++k) mx = std::max(mx, cl[static_cast<size_t>(q * 4 + k)]);
            double z = 0;
            for (int k = 0; k < 4; ++k) z += std::exp(cl[static_cast<size_t>(q * 4 + k)] - mx);
            ce += weight * -(cl[static_cast<size_t>(q * 4 + target)] - mx - std::log(z));
            wsum += weight;
        }
        ce /= wsum;

        double l1 = 0, visible = 0, bce = 0, dice_total = 0;
        const auto& boxes = pred.boxes.values();
        const auto& logits = pred.mask_logits.values();
        for (int i = 0; i < 2; ++i) {
            const int q = i == 0 ? 2 : 0;
            double inter = 0, ps = 0, gs = 0;
            for (int f = 0; f < 2; ++f) {
                if (gt[static_cast<size_t>(i)].visible[static_cast<size_t>(f)]) {
                    visible += 1;
                    for (int d = 0; d < 4; ++d)
                        l1 += std::fabs(boxes[static_cast<size_t>((f * 3 + q) * 4 + d)] - gt[static_cast<size_t>(i)].boxes[static_cast<size_t>(f * 4 + d)]);
                }
                for (int s = 0; s < 9; ++s) {
                    const double x = logits[static_cast<size_t>((f * 3 + q) * 9 + s)];
                    const double z = gt[static_cast<size_t>(i)].masks[static_cast<size_t>(f * 9 + s)];
                    const double p = 1.0 / (1.0 + std::exp(-x));
                    bce += -(z * std::log(p) + (1 - z) * std::log(1 - p));
                    inter += p * z;
                    ps += p;
                    gs += z;
                }
            }
            dice_total += 1.0 - (2 * inter + 1) / (ps + gs + 1);
        }
        l1 /= visible;
        bce /= 2 * 2 * 9;
        const double dice = dice_total / 2;
        CHECK(loss.cls.item() == doctest::Approx(ce).epsilon(1e-12));
        CHECK(loss.l1.item() == doctest::Approx(l1).epsilon(1e-12));
        CHECK(loss.mask.item() == doctest::Approx(bce).epsilon(1e-10));
        CHECK(loss.dice.item() == doctest::Approx(dice).epsilon(1e-12));
        CHECK(loss.total.item() == doctest::Approx(2 * ce + 5 * l1 + 2 * bce + 5 * dice).epsilon(1e-10));
    }
    SUBCASE("no ground truth leaves only the no-object term") {
        auto pred = random_prediction(rng, 2, 3, 4, 3, 3);
        auto loss = supervised_loss(pred, {}, {{}, 0.0});
        CHECK(loss.l1.item() == 0.0);
        CHECK(loss.total.item() == doctest::Approx(2 * loss.cls.item()));
    }
}

TEST_CASE("foreground masks") {
    auto gt = tiny_gt();
    auto fg = gt_foreground(gt, 2, 3, 3, DType::f64);
    CHECK(fg.shape() == Shape{2, 1, 3, 3});
    CHECK(fg.at({0, 0, 2, 0}) == 1.0);
    CHECK(fg.at({0, 0, 0, 0}) == 1.0);
    CHECK(fg.at({1, 0, 0, 0}) == 0.0);
    PredictionSet p;
    p.mask_logits = Tensor::zeros({2, 3, 3, 3}, DType::f64);
    auto soft = predicted_foreground(p, {0, 2});
    for (double v : soft.values()) CHECK(v == 0.75);  // 1 - 0.5 * 0.5
    auto empty = predicted_foreground(p, {});
    for (double v : empty.values()) CHECK(v == 0.0);
}

TEST_CASE("discriminator input") {
    Rng rng(9);
    const int64_t t = 2, c = 5;
    ScaleFeatures zero{0, Tensor::zeros({16, t, c}), 4, 4};
    auto frames = Tensor::full({t, 3, 8, 8}, 0.25);
    auto f = build_disc_input(frames, zero, Tensor::zeros({t, 1, 4, 4}));
    CHECK(f.shape() == Shape{t, 3 + c + 1, 4, 4});
    for (int64_t ti = 0; ti < t; ++ti)
        for (int64_t ch = 0; ch < 3 + c + 1; ++ch)
            for (int64_t s = 0; s < 16; ++s) CHECK(f.at({ti, ch, s / 4, s % 4}) == (ch < 3 ? 0.25 : 0.0));

    auto same = filled({t, 3, 4, 4}, rng);
    auto g = build_disc_input(same, zero, Tensor::zeros({t, 1, 4, 4}, DType::f64));
    CHECK(slice(g, 1, 0, 3).values() == same.values());
    CHECK_THROWS_AS(build_disc_input(same, zero, Tensor::zeros({t, 1, 3, 3})), DimensionError);
}

TEST_CASE("adversarial losses") {
    SUBCASE("discriminator fixed at one half") {
        ParamSet ps;
        auto d = DiscriminatorParams::make(ps, 3 + 4 + 1);
        d.convs.back().weight = Tensor::zeros(d.convs.back().weight.shape());
        Rng rng(10);
        auto fg = filled({2, 8, 4, 4}, rng, DType::f32);
        auto fp = filled({2, 8, 4, 4}, rng, DType::f32);
        auto l = adversarial_losses(fg, fp, d);
        CHECK(std::fabs(l.loss_d.item() - 2 * std::log(2.0)) < 1e-6);
        CHECK(l.feature_l1.item() == 0.0);
    }
    SUBCASE("closed form with lambda1 = 0") {
        auto gt = Tensor::full({1, 1, 2, 2}, 0.9, DType::f64);
        auto pr = Tensor::full({1, 1, 2, 2}, 0.1, DType::f64);
        auto l = adversarial_losses_from_scores(gt, pr, pr, 0.0);
        CHECK(l.loss_d.item() == doctest::Approx(-2 * std::log(0.9)).epsilon(1e-14));
        CHECK(l.loss_enc.item() == doctest::Approx(-std::log(0.1)).epsilon(1e-14));
        CHECK_THROWS_AS(adversarial_losses_from_scores(gt, pr, pr, -1.0), ContractError);
    }
    SUBCASE("encoder gradient flows only through the predicted input") {
        auto ps = std::make_shared<ParamSet>(DType::f64, 11);
        auto d = std::make_shared<DiscriminatorParams>(DiscriminatorParams::make(*ps, 3 + 2 + 1, 3));
        Rng data_rng(12);
        auto frames = filled({2, 3, 8, 8}, data_rng);
        auto gt_mask = Tensor::full({2, 1, 4, 4}, 1.0, DType::f64);
        // F_gt holds detached features, so the difference quotient must see them as constants.
        ScaleFeatures e_gt{0, filled({16, 2, 2}, data_rng), 4, 4};
        GradCase c{"heads", "adversarial_losses",
                   [](Rng& rng) { return std::vector<Tensor>{randn({16, 2, 2}, rng), randn({2, 1, 4, 4}, rng)}; },
                   [=](const std::vector<Tensor>& in) {
                       ScaleFeatures e{0, in[0], 4, 4};
                       auto f_gt = build_disc_input(frames, e_gt, gt_mask);
                       auto f_pr = build_disc_input(frames, e, sigmoid(in[1]));
                       return adversarial_losses(f_gt, f_pr, *d).loss_enc;
                   }};
        auto r = check_gradient(c, 3);
        INFO("max rel error " << r.max_rel_error);
        CHECK(r.passed);

        Rng rng(13);
        auto inputs = c.make_inputs(rng);
        for (auto& t : inputs) t.set_requires_grad(true);
        TapeScope scope;
        backward(c.loss(inputs));
        double norm = 0;
        for (double g : inputs[0].grad()) norm += std::fabs(g);
        CHECK(norm > 0.0);
    }
}
