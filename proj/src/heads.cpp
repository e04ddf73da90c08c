#include "msts/heads.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msts/errors.h"
#include "msts/ops.h"

namespace msts {

HeadParams HeadParams::make(ParamSet& ps, const ModelConfig& cfg) {
    const int64_t c = cfg.channels;
    HeadParams p;
    p.cls = Linear::make(ps, "head.cls", c, cfg.classes + 1);
    p.box1 = Linear::make(ps, "head.box1", c, c);
    p.box2 = Linear::make(ps, "head.box2", c, c);
    p.box3 = Linear::make(ps, "head.box3", c, 4);
    p.mask_refine = Conv2d::make(ps, "head.mask_refine", c, c, 3, 1);
    p.mask_project = Conv2d::make(ps, "head.mask_project", c, cfg.mask_channels, 1, 1);
    p.dynamic = Linear::make(ps, "head.dynamic", c, cfg.mask_channels + 1);
    return p;
}

Tensor mask_features(const ScaleFeatures& finest, const HeadParams& params) {
    Tensor maps = level_to_maps(finest.data, finest.height, finest.width);
    return params.mask_project(relu(params.mask_refine(maps)));
}

Tensor dynamic_mask_logits(const Tensor& features, const Tensor& filters, const Tensor& biases) {
    const int64_t t = features.size(0), cm = features.size(1), h = features.size(2), w = features.size(3);
    const int64_t n = filters.size(0);
    if (filters.size(1) != cm || biases.numel() != n) {
        throw DimensionError("dynamic_mask_logits: filters " + shape_str(filters.shape()) + " and biases " +
                             shape_str(biases.shape()) + " do not fit features " + shape_str(features.shape()));
    }
    Tensor flat = reshape(features, {t, cm, h * w});
    Tensor logits = matmul(expand(reshape(filters, {1, n, cm}), {t, n, cm}), flat);
    logits = add(logits, expand(reshape(biases, {1, n, 1}), {t, n, h * w}));
    return reshape(logits, {t, n, h, w});
}

PredictionSet predict(const DecoderOutput& decoded, const ScalePyramid& encoded, const HeadParams& params) {
    PredictionSet out;
    const Tensor& inst = decoded.instance_features;
    out.class_logits = params.cls(inst);
    out.boxes = sigmoid(params.box3(relu(params.box2(relu(params.box1(decoded.box_features))))));
    const int64_t n = inst.size(0);
    Tensor dyn = params.dynamic(inst);
    const int64_t cm = dyn.size(1) - 1;
    Tensor filters = slice(dyn, 1, 0, cm);
    Tensor biases = reshape(slice(dyn, 1, cm, 1), {n});
    out.mask_logits = dynamic_mask_logits(mask_features(encoded.at(0), params), filters, biases);
    return out;
}

Assignment solve_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols) {
    if (rows > cols) {
        throw ContractError("hungarian_match: " + std::to_string(rows) + " ground-truth instances but only " +
                            std::to_string(cols) + " queries");
    }
    if (static_cast<int64_t>(cost.size()) != rows * cols) throw DimensionError("solve_assignment: cost size mismatch");
    Assignment result;
    if (rows == 0) return result;
    // Shortest augmenting path with row/column potentials, 1-based indexing.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(rows + 1), 0.0), v(static_cast<size_t>(cols + 1), 0.0);
    std::vector<int64_t> match(static_cast<size_t>(cols + 1), 0), way(static_cast<size_t>(cols + 1), 0);
    auto a = [&](int64_t i, int64_t j) { return cost[static_cast<size_t>((i - 1) * cols + (j - 1))]; };
    for (int64_t i = 1; i <= rows; ++i) {
        match[0] = i;
        int64_t j0 = 0;
        std::vector<double> minv(static_cast<size_t>(cols + 1), inf);
        std::vector<char> used(static_cast<size_t>(cols + 1), 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int64_t i0 = match[static_cast<size_t>(j0)];
            double delta = inf;
            int64_t j1 = 0;
            for (int64_t j = 1; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = a(i0, j) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int64_t j = 0; j <= cols; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int64_t j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    result.query_of_gt.assign(static_cast<size_t>(rows), -1);
    for (int64_t j = 1; j <= cols; ++j) {
        if (match[static_cast<size_t>(j)] > 0) result.query_of_gt[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
    }
    for (int64_t i = 0; i < rows; ++i) result.total_cost += cost[static_cast<size_t>(i * cols + result.query_of_gt[static_cast<size_t>(i)])];
    return result;
}

Assignment brute_force_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols) {
    if (rows > cols) throw ContractError("brute_force_assignment: more rows than columns");
    Assignment best;
    best.total_cost = std::numeric_limits<double>::infinity();
    if (rows == 0) {
        best.total_cost = 0.0;
        return best;
    }
    std::vector<int64_t> current(static_cast<size_t>(rows));
    std::vector<char> taken(static_cast<size_t>(cols), 0);
    auto recurse = [&](auto&& self, int64_t row, double partial) -> void {
        if (row == rows) {
            if (partial < best.total_cost) {
                best.total_cost = partial;
                best.query_of_gt = current;
            }
            return;
        }
        for (int64_t j = 0; j < cols; ++j) {
            if (taken[static_cast<size_t>(j)]) continue;
            taken[static_cast<size_t>(j)] = 1;
            current[static_cast<size_t>(row)] = j;
            self(self, row + 1, partial + cost[static_cast<size_t>(row * cols + j)]);
            taken[static_cast<size_t>(j)] = 0;
        }
    };
    recurse(recurse, 0, 0.0);
    return best;
}

std::vector<double> matching_costs(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                                   const MatchWeights& weights) {
    const int64_t n = pred.class_logits.size(0);
    const int64_t t = pred.boxes.size(0);
    const int64_t hw = pred.mask_logits.size(2) * pred.mask_logits.size(3);
    const int64_t g = static_cast<int64_t>(gt.size());
    NoGradGuard no_grad;
    const auto probs = softmax(pred.class_logits.detach(), 1).values();
    const auto masks = sigmoid(pred.mask_logits.detach()).values();
    const auto& boxes = pred.boxes.values();
    const int64_t k1 = pred.class_logits.size(1);

    std::vector<double> cost(static_cast<size_t>(g * n), 0.0);
    for (int64_t i = 0; i < g; ++i) {
        const auto& inst = gt[static_cast<size_t>(i)];
        double gt_area = 0.0;
        for (double m : inst.masks) gt_area += m;
        for (int64_t q = 0; q < n; ++q) {
            const double p = probs[static_cast<size_t>(q * k1 + inst.class_id)];
            double l1 = 0.0;
            int64_t visible = 0;
            for (int64_t f = 0; f < t; ++f) {
                if (!inst.visible[static_cast<size_t>(f)]) continue;
                ++visible;
                for (int64_t d = 0; d < 4; ++d) {
                    l1 += std::fabs(boxes[static_cast<size_t>((f * n + q) * 4 + d)] -
                                    inst.boxes[static_cast<size_t>(f * 4 + d)]);
                }
            }
            if (visible > 0) l1 /= static_cast<double>(visible);
            double inter = 0.0, pred_area = 0.0;
            for (int64_t f = 0; f < t; ++f) {
                const double* m = masks.data() + (f * n + q) * hw;
                const double* gm = inst.masks.data() + f * hw;
                for (int64_t s = 0; s < hw; ++s) {
                    inter += m[s] * gm[s];
                    pred_area += m[s];
                }
            }
            const double dice = (2.0 * inter + 1.0) / (pred_area + gt_area + 1.0);
            cost[static_cast<size_t>(i * n + q)] =
                weights.cls * (1.0 - p) + weights.l1 * l1 + weights.dice * (1.0 - dice);
        }
    }
    return cost;
}

Assignment hungarian_match(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                           const MatchWeights& weights) {
    const int64_t n = pred.class_logits.size(0);
    const int64_t g = static_cast<int64_t>(gt.size());
    if (g > n) {
        throw ContractError("hungarian_match: " + std::to_string(g) + " ground-truth instances but only " +
                            std::to_string(n) + " queries");
    }
    return solve_assignment(matching_costs(pred, gt, weights), g, n);
}

Tensor dice_coefficient(const Tensor& a, const Tensor& b, double eps) {
    Tensor inter = sum_all(mul(a, b));
    Tensor denom = add_scalar(add(sum_all(a), sum_all(b)), eps);
    return div(add_scalar(scale(inter, 2.0), eps), denom);
}

namespace {

/// Picks query columns of a [T, n, ...] tensor in the given order.
Tensor gather_queries(const Tensor& x, const std::vector<int64_t>& queries) {
    std::vector<Tensor> parts;
    for (auto q : queries) parts.push_back(slice(x, 1, q, 1));
    return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
    // max(x, 0) - x z + log(1 + exp(-|x|))
    Tensor soft = log(add_scalar(exp(neg(abs(logits))), 1.0));
    return mean_all(add(sub(relu(logits), mul(logits, target)), soft));
}

}  // namespace

LossComponents supervised_loss(const PredictionSet& pred, const std::vector<GtInstance>& gt,
                               const Assignment& assignment, const LossWeights& weights) {
    const int64_t n = pred.class_logits.size(0), k1 = pred.class_logits.size(1);
    const int64_t t = pred.boxes.size(0);
    const int64_t h = pred.mask_logits.size(2), w = pred.mask_logits.size(3);
    const int64_t g = static_cast<int64_t>(gt.size());
    if (static_cast<int64_t>(assignment.query_of_gt.size()) != g) {
        throw ContractError("supervised_loss: assignment does not cover the ground truth");
    }
    const DType dt = pred.class_logits.dtype();

    std::vector<double> target(static_cast<size_t>(n * k1), 0.0);
    std::vector<int64_t> cls_of_query(static_cast<size_t>(n), k1 - 1);
    for (int64_t i = 0; i < g; ++i) cls_of_query[static_cast<size_t>(assignment.query_of_gt[static_cast<size_t>(i)])] = gt[static_cast<size_t>(i)].class_id;
    double weight_total = 0.0;
    for (int64_t q = 0; q < n; ++q) {
        const int64_t c = cls_of_query[static_cast<size_t>(q)];
        const double wq = c == k1 - 1 ? weights.no_object : 1.0;
        target[static_cast<size_t>(q * k1 + c)] = wq;
        weight_total += wq;
    }
    LossComponents out;
    Tensor logp = log_softmax(pred.class_logits, 1);
    out.cls = scale(sum_all(mul(logp, Tensor::from_data({n, k1}, target, dt))), -1.0 / weight_total);

    if (g == 0) {
        out.l1 = Tensor::scalar(0.0, dt);
        out.mask = Tensor::scalar(0.0, dt);
        out.dice = Tensor::scalar(0.0, dt);
    } else {
        const auto& queries = assignment.query_of_gt;
        std::vector<double> gt_boxes(static_cast<size_t>(t * g * 4)), vis(static_cast<size_t>(t * g * 4));
        std::vector<double> gt_masks(static_cast<size_t>(t * g * h * w));
        double visible = 0.0;
        for (int64_t f = 0; f < t; ++f) {
            for (int64_t i = 0; i < g; ++i) {
                const auto& inst = gt[static_cast<size_t>(i)];
                const bool v = inst.visible[static_cast<size_t>(f)] != 0;
                visible += v ? 1.0 : 0.0;
                for (int64_t d = 0; d < 4; ++d) {
                    gt_boxes[static_cast<size_t>((f * g + i) * 4 + d)] = inst.boxes[static_cast<size_t>(f * 4 + d)];
                    vis[static_cast<size_t>((f * g + i) * 4 + d)] = v ? 1.0 : 0.0;
                }
                std::copy_n(inst.masks.begin() + f * h * w, h * w, gt_masks.begin() + (f * g + i) * h * w);
            }
        }
        Tensor pb = gather_queries(pred.boxes, queries);
        Tensor diff = mul(abs(sub(pb, Tensor::from_data({t, g, 4}, gt_boxes, dt))), Tensor::from_data({t, g, 4}, vis, dt));
        out.l1 = visible > 0 ? scale(sum_all(diff), 1.0 / visible) : Tensor::scalar(0.0, dt);

        Tensor pm = gather_queries(pred.mask_logits, queries);  // [T, G, H, W]
        Tensor gm = Tensor::from_data({t, g, h, w}, gt_masks, dt);
        out.mask = bce_with_logits(pm, gm);
        Tensor probs = sigmoid(pm);
        Tensor dice_sum;
        for (int64_t i = 0; i < g; ++i) {
            Tensor term = dice_coefficient(slice(probs, 1, i, 1), slice(gm, 1, i, 1));
            dice_sum = dice_sum.defined() ? add(dice_sum, term) : term;
        }
        out.dice = add_scalar(scale(dice_sum, -1.0 / static_cast<double>(g)), 1.0);
    }
    out.total = add(add(scale(out.cls, weights.cls), scale(out.l1, weights.l1)),
                    add(scale(out.mask, weights.mask), scale(out.dice, weights.dice)));
    return out;
}

Tensor gt_foreground(const std::vector<GtInstance>& gt, int64_t frames, int64_t height, int64_t width, DType dtype) {
    std::vector<double> fg(static_cast<size_t>(frames * height * width), 0.0);
    for (const auto& inst : gt) {
        for (size_t i = 0; i < fg.size(); ++i) {
            if (inst.masks[i] > 0.5) fg[i] = 1.0;
        }
    }
    return Tensor::from_data({frames, 1, height, width}, std::move(fg), dtype);
}

Tensor predicted_foreground(const PredictionSet& pred, const std::vector<int64_t>& queries) {
    const int64_t t = pred.mask_logits.size(0), h = pred.mask_logits.size(2), w = pred.mask_logits.size(3);
    if (queries.empty()) return Tensor::zeros({t, 1, h, w}, pred.mask_logits.dtype());
    Tensor background;
    for (auto q : queries) {
        Tensor miss = add_scalar(neg(sigmoid(slice(pred.mask_logits, 1, q, 1))), 1.0);
        background = background.defined() ? mul(background, miss) : miss;
    }
    return add_scalar(neg(background), 1.0);
}

Tensor build_disc_input(const Tensor& frames, const ScaleFeatures& finest, const Tensor& mask) {
    const int64_t h = finest.height, w = finest.width;
    if (frames.dim() != 4 || frames.size(0) != finest.frames()) {
        throw DimensionError("build_disc_input: frames " + shape_str(frames.shape()) + " do not match features " +
                             shape_str(finest.data.shape()));
    }
    if (mask.shape() != Shape{finest.frames(), 1, h, w}) {
        throw DimensionError("build_disc_input: mask must be " + shape_str({finest.frames(), 1, h, w}) + ", got " +
                             shape_str(mask.shape()));
    }
    Tensor image = resize_bilinear(frames, h, w);
    return concat({image, level_to_maps(finest.data, h, w), mask}, 1);
}

DiscriminatorParams DiscriminatorParams::make(ParamSet& ps, int64_t in_channels, int64_t width) {
    DiscriminatorParams d;
    d.convs.push_back(Conv2d::make(ps, "disc.conv0", in_channels, width, 3, 1));
    d.convs.push_back(Conv2d::make(ps, "disc.conv1", width, 2 * width, 3, 2));
    d.convs.push_back(Conv2d::make(ps, "disc.conv2", 2 * width, 2 * width, 3, 1));
    d.convs.push_back(Conv2d::make(ps, "disc.conv3", 2 * width, 1, 3, 1));
    return d;
}

Tensor discriminator(const Tensor& input, const DiscriminatorParams& params) {
    Tensor x = input;
    for (size_t i = 0; i + 1 < params.convs.size(); ++i) x = leaky_relu(params.convs[i](x), params.slope);
    return clamp(sigmoid(params.convs.back()(x)), 1e-6, 1.0 - 1e-6);
}

AdversarialLosses adversarial_losses_from_scores(const Tensor& d_gt, const Tensor& d_pr_for_d, const Tensor& d_pr,
                                                 double lambda1) {
    if (lambda1 < 0) throw ContractError("adversarial_losses: lambda1 must be >= 0");
    AdversarialLosses out;
    auto log_one_minus = [](const Tensor& x) { return log(add_scalar(neg(x), 1.0)); };
    out.loss_d = neg(add(mean_all(log(d_gt)), mean_all(log_one_minus(d_pr_for_d))));
    out.feature_l1 = mean_all(abs(sub(d_gt.detach(), d_pr)));
    out.loss_enc = add(neg(mean_all(log(d_pr))), scale(out.feature_l1, lambda1));
    return out;
}

AdversarialLosses adversarial_losses(const Tensor& f_gt, const Tensor& f_pr, const DiscriminatorParams& d) {
    Tensor d_gt = discriminator(f_gt, d);
    Tensor d_pr_detached = discriminator(f_pr.detach(), d);
    Tensor d_pr = discriminator(f_pr, d);
    return adversarial_losses_from_scores(d_gt, d_pr_detached, d_pr, d.lambda1);
}

}  // namespace msts
