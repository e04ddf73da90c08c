#include "msts/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "msts/errors.h"
#include "msts/ops.h"
#include "msts/serialize.h"

namespace msts {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Data

std::vector<size_t> Dataset::indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == split) out.push_back(i);
    return out;
}

namespace {

void add_entry(Dataset& d, const ordered_json& entry, VideoSample sample) {
    d.ids.push_back(entry.at("id").get<std::string>());
    d.splits.push_back(entry.at("split").get<std::string>());
    std::set<Attribute> attrs;
    for (const auto& a : entry.at("attributes")) attrs.insert(attribute_from_name(a.get<std::string>()));
    d.attributes.push_back(std::move(attrs));
    d.samples.push_back(std::move(sample));
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no manifest.json in " + dir.string());
    Dataset d;
    try {
        in >> d.manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    d.spec = benchmark_spec_from_json(d.manifest);
    for (const auto& entry : d.manifest.at("samples")) {
        add_entry(d, entry, read_sample(dir / entry.at("id").get<std::string>()));
    }
    return d;
}

Dataset build_dataset(const BenchmarkSpec& spec) {
    Dataset d;
    d.spec = spec;
    d.manifest = make_benchmark(spec);
    for (const auto& entry : d.manifest.at("samples")) add_entry(d, entry, regenerate(entry, spec));
    return d;
}

std::vector<GtInstance> to_gt_instances(const VideoSample& sample, const ModelConfig& cfg) {
    const int64_t hm = cfg.level_height(0), wm = cfg.level_width(0);
    const int64_t sy = cfg.padded_height() / hm, sx = cfg.padded_width() / wm;
    const int64_t t_n = sample.frames, h = sample.height, w = sample.width;
    if (t_n != cfg.frames || h != cfg.image_height || w != cfg.image_width) {
        throw DimensionError("sample extents do not match the model config");
    }
    const double cell = static_cast<double>(sy * sx);
    std::vector<GtInstance> out;
    for (const auto& inst : sample.instances) {
        GtInstance g;
        g.class_id = inst.class_id;
        g.boxes = inst.boxes;
        g.visible = inst.visible;
        g.masks.assign(static_cast<size_t>(t_n * hm * wm), 0.0);
        for (int64_t t = 0; t < t_n; ++t)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    if (inst.masks[static_cast<size_t>((t * h + y) * w + x)])
                        g.masks[static_cast<size_t>((t * hm + y / sy) * wm + x / sx)] += 1.0 / cell;
        out.push_back(std::move(g));
    }
    return out;
}

EvalVideo to_eval_video(const PredictionSet& pred, const VideoSample& sample, const ModelConfig& cfg,
                        const std::set<Attribute>& attributes) {
    NoGradGuard guard;
    EvalVideo v;
    v.attributes = attributes;
    const int64_t t_n = sample.frames, h = sample.height, w = sample.width;
    const int64_t ph = cfg.padded_height(), pw = cfg.padded_width();
    const int64_t n = pred.class_logits.size(0), k = pred.class_logits.size(1) - 1;
    const Tensor probs = softmax(pred.class_logits, 1);
    const Tensor up = resize_bilinear(sigmoid(pred.mask_logits), ph, pw);  // [T, n, ph, pw]
    const auto& pv = probs.values();
    const auto& mv = up.values();
    for (int64_t q = 0; q < n; ++q) {
        EvalPrediction p;
        int64_t best = 0;
        for (int64_t c = 1; c < k; ++c)
            if (pv[static_cast<size_t>(q * (k + 1) + c)] > pv[static_cast<size_t>(q * (k + 1) + best)]) best = c;
        p.class_id = best;
        p.score = pv[static_cast<size_t>(q * (k + 1) + best)];
        p.masks.resize(static_cast<size_t>(t_n * h * w));
        for (int64_t t = 0; t < t_n; ++t)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    p.masks[static_cast<size_t>((t * h + y) * w + x)] =
                        mv[static_cast<size_t>(((t * n + q) * ph + y) * pw + x)] > 0.5 ? 1 : 0;
        v.predictions.push_back(std::move(p));
    }
    for (const auto& inst : sample.instances) v.ground_truth.push_back({inst.class_id, inst.masks});
    return v;
}

// ---------------------------------------------------------------------------
// Model construction and checkpoints

std::unique_ptr<VisModel> make_model(const TrainConfig& cfg) {
    auto model = std::make_unique<VisModel>(cfg.model, cfg.seed, cfg.fgbg_loss);
    if (model->has_discriminator()) model->discriminator_params().lambda1 = cfg.lambda1;
    return model;
}

void save_checkpoint(const fs::path& path, const VisModel& model, const TrainConfig& cfg, const ordered_json& extra) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    TensorBundle b;
    b.meta["format"] = "msts-checkpoint-1";
    b.meta["config"] = config_to_json(cfg);
    for (const auto& [k, v] : extra.items()) b.meta[k] = v;
    for (const auto& e : model.params().entries()) b.tensors.emplace_back("model/" + e.name, e.tensor);
    if (model.has_discriminator())
        for (const auto& e : model.disc_params().entries()) b.tensors.emplace_back("disc/" + e.name, e.tensor);
    save_bundle(path, b);
}

namespace {

void restore(ParamSet& ps, const TensorBundle& b, const std::string& prefix, size_t& used) {
    for (auto& e : ps.entries()) {
        const Tensor* t = b.find(prefix + e.name);
        if (!t) throw FormatError("checkpoint lacks tensor '" + prefix + e.name + "'");
        if (t->shape() != e.tensor.shape() || t->dtype() != e.tensor.dtype()) {
            throw FormatError("checkpoint tensor '" + prefix + e.name + "' has shape " + shape_str(t->shape()) +
                              ", expected " + shape_str(e.tensor.shape()));
        }
        auto dst = e.tensor.mutable_data();
        std::copy(t->data().begin(), t->data().end(), dst.begin());
        ++used;
    }
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    const TensorBundle b = load_bundle(path);
    if (b.meta.value("format", std::string()) != "msts-checkpoint-1") {
        throw FormatError(path.string() + ": not a checkpoint");
    }
    LoadedCheckpoint out;
    out.config = config_from_json(b.meta.at("config"));
    out.meta = b.meta;
    out.model = make_model(out.config);
    size_t used = 0;
    restore(out.model->params(), b, "model/", used);
    if (out.model->has_discriminator()) restore(out.model->disc_params(), b, "disc/", used);
    if (used != b.tensors.size()) throw FormatError(path.string() + ": unexpected extra tensors");
    return out;
}

// ---------------------------------------------------------------------------
// Training

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    model_ = make_model(cfg_);
}

namespace {

struct Forwarded {
    Tensor supervised;
    LossComponents parts;
    Tensor f_gt, f_pr;
};

Forwarded forward_sample(const VisModel& model, const TrainConfig& cfg, const VideoSample& sample, bool adversarial) {
    Forwarded f;
    const Tensor frames = sample.frames_tensor(model.params().dtype());
    const ModelOutput out = model.forward(frames);
    const auto gt = to_gt_instances(sample, cfg.model);
    const Assignment asg = hungarian_match(out.predictions, gt, cfg.match);
    f.parts = supervised_loss(out.predictions, gt, asg, cfg.loss);
    f.supervised = f.parts.total;
    if (adversarial) {
        const ScaleFeatures& finest = out.encoder.output.front();
        ScaleFeatures fixed = finest;
        fixed.data = finest.data.detach();
        const Tensor m_gt = gt_foreground(gt, cfg.model.frames, finest.height, finest.width, frames.dtype());
        const Tensor m_pr = predicted_foreground(out.predictions, asg.query_of_gt);
        f.f_gt = build_disc_input(frames, fixed, m_gt);
        f.f_pr = build_disc_input(frames, finest, m_pr);
    }
    return f;
}

void require_finite(const Tensor& loss, const std::string& what, int64_t step) {
    if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite " + what + " at step " + std::to_string(step));
    }
}

Tensor accumulate(const Tensor& acc, const Tensor& term, double weight) {
    Tensor t = scale(term, weight);
    return acc.defined() ? add(acc, t) : t;
}

}  // namespace

StepStats Trainer::step(const std::vector<const VideoSample*>& batch, int64_t epoch, StepMode mode) {
    if (batch.empty()) throw ContractError("empty batch");
    TapeScope scope;
    ParamSet& mp = model_->params();
    ParamSet& dp = model_->disc_params();
    mp.zero_grad();
    dp.zero_grad();
    const bool adversarial = cfg_.fgbg_loss && model_->has_discriminator();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const auto& disc = model_->discriminator_params();

    StepStats st;
    std::vector<Forwarded> items;
    Tensor total;
    for (const VideoSample* s : batch) {
        Forwarded f = forward_sample(*model_, cfg_, *s, adversarial);
        st.cls += f.parts.cls.item() * inv_b;
        st.l1 += f.parts.l1.item() * inv_b;
        st.mask += f.parts.mask.item() * inv_b;
        st.dice += f.parts.dice.item() * inv_b;
        total = accumulate(total, f.supervised, inv_b);
        items.push_back(std::move(f));
    }
    st.total = total.item();
    require_finite(total, "supervised loss", steps_);

    if (adversarial && mode != StepMode::model_only) {
        dp.set_requires_grad(true);
        Tensor loss_d;
        for (const auto& f : items) {
            const Tensor s_gt = discriminator(f.f_gt, disc);
            const Tensor s_pr = discriminator(f.f_pr.detach(), disc);
            loss_d = accumulate(loss_d, adversarial_losses_from_scores(s_gt, s_pr, s_pr, cfg_.lambda1).loss_d, inv_b);
        }
        st.loss_d = loss_d.item();
        require_finite(loss_d, "discriminator loss", steps_);
        backward(loss_d);
        const double lr = scheduled_lr(cfg_, epoch, ParamGroup::base) * cfg_.disc_lr_mult;
        adamw_step(dp, disc_state_, {cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay},
                   [lr](ParamGroup) { return lr; });
    }

    if (mode != StepMode::disc_only) {
        if (adversarial) {
            // The discriminator is frozen while the model learns to fool it.
            dp.set_requires_grad(false);
            Tensor loss_enc;
            for (const auto& f : items) {
                const Tensor s_gt = discriminator(f.f_gt, disc);
                const Tensor s_pr = discriminator(f.f_pr, disc);
                loss_enc = accumulate(
                    loss_enc, adversarial_losses_from_scores(s_gt, s_pr.detach(), s_pr, cfg_.lambda1).loss_enc, inv_b);
            }
            st.loss_enc = loss_enc.item();
            require_finite(loss_enc, "adversarial loss", steps_);
            total = add(total, scale(loss_enc, cfg_.adv_weight));
            dp.set_requires_grad(true);
        }
        backward(total);
        st.grad_norm = clip_grad_norm(mp, cfg_.grad_clip);
        adamw_step(mp, model_state_, {cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay},
                   [this, epoch](ParamGroup g) { return scheduled_lr(cfg_, epoch, g); });
    }
    mp.zero_grad();
    dp.zero_grad();
    ++steps_;
    return st;
}

StepStats Trainer::evaluate_loss(const std::vector<const VideoSample*>& batch) {
    NoGradGuard guard;
    StepStats st;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const bool adversarial = cfg_.fgbg_loss && model_->has_discriminator();
    for (const VideoSample* s : batch) {
        const Forwarded f = forward_sample(*model_, cfg_, *s, adversarial);
        st.total += f.supervised.item() * inv_b;
        st.cls += f.parts.cls.item() * inv_b;
        st.l1 += f.parts.l1.item() * inv_b;
        st.mask += f.parts.mask.item() * inv_b;
        st.dice += f.parts.dice.item() * inv_b;
        if (adversarial) {
            const auto& disc = model_->discriminator_params();
            const Tensor s_gt = discriminator(f.f_gt, disc), s_pr = discriminator(f.f_pr, disc);
            const auto adv = adversarial_losses_from_scores(s_gt, s_pr, s_pr, cfg_.lambda1);
            st.loss_d += adv.loss_d.item() * inv_b;
            st.loss_enc += adv.loss_enc.item() * inv_b;
        }
    }
    return st;
}

ordered_json Trainer::run_epoch(const Dataset& data, const std::vector<size_t>& train, int64_t epoch) {
    std::vector<size_t> order = train;
    if (cfg_.train_limit > 0 && static_cast<int64_t>(order.size()) > cfg_.train_limit) {
        order.resize(static_cast<size_t>(cfg_.train_limit));
    }
    Rng rng(mix_seed(cfg_.seed, 1000 + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    StepStats sum;
    int64_t batches = 0;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg_.batch_size)) {
        std::vector<const VideoSample*> batch;
        for (size_t j = i; j < std::min(order.size(), i + static_cast<size_t>(cfg_.batch_size)); ++j)
            batch.push_back(&data.samples[order[j]]);
        const StepStats s = step(batch, epoch);
        sum.total += s.total;
        sum.cls += s.cls;
        sum.l1 += s.l1;
        sum.mask += s.mask;
        sum.dice += s.dice;
        sum.loss_d += s.loss_d;
        sum.loss_enc += s.loss_enc;
        ++batches;
    }
    const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    ordered_json line;
    line["epoch"] = epoch + 1;
    line["steps"] = steps_;
    line["lr"] = scheduled_lr(cfg_, epoch, ParamGroup::base);
    line["loss"] = sum.total * inv;
    line["cls"] = sum.cls * inv;
    line["l1"] = sum.l1 * inv;
    line["mask"] = sum.mask * inv;
    line["dice"] = sum.dice * inv;
    if (cfg_.fgbg_loss) {
        line["loss_d"] = sum.loss_d * inv;
        line["loss_enc"] = sum.loss_enc * inv;
    }
    return line;
}

int num_threads() {
    if (const char* env = std::getenv("MSTS_NUM_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

EvalResult evaluate_model(const VisModel& model, const Dataset& data, const std::vector<size_t>& which) {
    std::vector<EvalVideo> videos(which.size());
    auto work = [&](size_t begin, size_t stride) {
        NoGradGuard guard;
        for (size_t i = begin; i < which.size(); i += stride) {
            const VideoSample& s = data.samples[which[i]];
            const ModelOutput out = model.forward(s.frames_tensor(model.params().dtype()));
            videos[i] = to_eval_video(out.predictions, s, model.config(), data.attributes[which[i]]);
        }
    };
    const size_t workers = std::min(static_cast<size_t>(num_threads()), std::max<size_t>(which.size(), 1));
    if (workers <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
        for (auto& t : pool) t.join();
    }
    return compute_ap(videos);
}

TrainOutcome train(const TrainConfig& cfg, const Dataset& data, const fs::path& out_dir, std::ostream* progress) {
    fs::create_directories(out_dir);
    Trainer trainer(cfg);
    const auto train_idx = data.indices("train");
    const auto val_idx = data.indices("val");
    if (train_idx.empty() && cfg.epochs > 0) throw ConfigError("dataset has no training samples");
    const fs::path ckpt = out_dir / "checkpoint.json";
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw FormatError("cannot write " + (out_dir / "train_log.jsonl").string());

    TrainOutcome outcome;
    save_checkpoint(ckpt, trainer.model(), cfg, {{"epoch", 0}, {"step", 0}, {"history", ordered_json::array()}});
    for (int64_t e = 0; e < cfg.epochs; ++e) {
        ordered_json line;
        try {
            line = trainer.run_epoch(data, train_idx, e);
        } catch (const NumericError& err) {
            ordered_json abort_line = {{"event", "abort"}, {"epoch", e + 1}, {"error", err.what()}};
            log << abort_line.dump() << '\n';
            throw;
        }
        if (cfg.eval_every > 0 && (e + 1) % cfg.eval_every == 0 && !val_idx.empty()) {
            line["val_AP"] = evaluate_model(trainer.model(), data, val_idx).ap;
        }
        log << line.dump() << '\n';
        log.flush();
        outcome.log.push_back(line);
        if (progress) *progress << line.dump() << std::endl;
        save_checkpoint(ckpt, trainer.model(), cfg,
                        {{"epoch", e + 1}, {"step", trainer.steps_done()}, {"history", outcome.log}});
    }
    if (!val_idx.empty()) {
        outcome.val = evaluate_model(trainer.model(), data, val_idx);
        ordered_json final_line = {{"event", "final"}, {"val", outcome.val.to_json()}};
        log << final_line.dump() << '\n';
        std::ofstream(out_dir / "val_metrics.json", std::ios::trunc) << outcome.val.to_json().dump(2) << '\n';
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> progressive_variants() {
    return {{"baseline", false, false, false},
            {"+ms_sts", true, false, false},
            {"+t_dec", true, true, false},
            {"+fgbg", true, true, true}};
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const Dataset& data,
                                      const std::vector<AblationVariant>& variants, const std::vector<uint64_t>& seeds,
                                      std::ostream* progress) {
    std::vector<AblationRow> rows;
    const auto train_idx = data.indices("train");
    const auto val_idx = data.indices("val");
    for (const auto& v : variants) {
        for (uint64_t seed : seeds) {
            TrainConfig c = cfg;
            c.model.ms_sts = v.ms_sts;
            c.model.temporal_decoder = v.t_dec;
            c.fgbg_loss = v.fgbg_loss;
            c.seed = seed;
            Trainer trainer(c);
            for (int64_t e = 0; e < c.epochs; ++e) trainer.run_epoch(data, train_idx, e);
            const EvalResult r = evaluate_model(trainer.model(), data, val_idx);
            AblationRow row{v.name, seed, r.ap, r.ap50, r.ap75, 0.0};
            if (auto it = r.attribute_ap.find("fast_motion"); it != r.attribute_ap.end()) row.ap_fast_motion = it->second;
            rows.push_back(row);
            if (progress) {
                *progress << v.name << " seed=" << seed << " AP=" << row.ap << " AP50=" << row.ap50
                          << " AP_fast_motion=" << row.ap_fast_motion << std::endl;
            }
        }
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream o;
    o.precision(10);
    o << "variant,seed,AP,AP50,AP75,AP_fast_motion\n";
    for (const auto& r : rows) o << r.variant << ',' << r.seed << ',' << r.ap << ',' << r.ap50 << ',' << r.ap75 << ',' << r.ap_fast_motion << '\n';
    return o.str();
}

}  // namespace msts
