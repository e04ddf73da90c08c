#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msts/evaluation.h"
#include "msts/gradcheck.h"
#include "msts/model.h"
#include "msts/synthdata.h"

namespace msts {

// ---------------------------------------------------------------------------
// Configuration

/// Everything a training run depends on. Defaults are the full-scale optimizer
/// settings with desk-scale model sizes; config files override them explicitly.
struct TrainConfig {
    std::string profile = "desk";
    uint64_t seed = 0;
    int64_t epochs = 12;
    int64_t batch_size = 2;
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 1e-4;
    double backbone_lr_mult = 0.1;
    std::vector<int64_t> lr_drops{4, 10};  // 1-based epochs from which another factor applies
    double lr_drop_factor = 0.1;
    double grad_clip = 0.0;  // max global gradient norm, 0 disables
    double disc_lr_mult = 1.0;
    double adv_weight = 0.2;
    double lambda1 = 10.0;
    bool fgbg_loss = true;
    ModelConfig model;  // carries the ms_sts and temporal_decoder flags
    MatchWeights match;
    LossWeights loss;
    int64_t train_limit = 0;  // use at most this many training samples, 0 = all
    int64_t eval_every = 0;   // evaluate on val every k epochs, 0 = only at the end
    // Benchmark used by `ablate` when no data directory is given.
    std::string data_dir;
    BenchmarkSpec data;
    std::vector<uint64_t> ablation_seeds{0, 1, 2};

    void validate() const;
};

/// Parses flat `key = value` text: `#` comments, numbers, true/false, quoted
/// strings and bracketed number lists. Unknown keys are a ConfigError.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const TrainConfig& cfg);
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::ordered_json& j);

// ---------------------------------------------------------------------------
// Optimization

struct AdamWConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
};

/// Per-parameter moments, aligned with ParamSet::entries().
struct AdamWState {
    std::vector<std::vector<double>> m, v;
    std::vector<int64_t> steps;
};

/// One decoupled-weight-decay Adam update with bias correction. Each entry
/// uses lr_of(group). Entries without a gradient are skipped. A non-finite
/// gradient aborts the whole step before any parameter changes, with a
/// NumericError naming the parameter.
void adamw_step(ParamSet& params, AdamWState& state, const AdamWConfig& cfg,
                const std::function<double(ParamGroup)>& lr_of);

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

/// lr for a 0-based epoch: base * factor^(drops reached) * group multiplier.
double scheduled_lr(const TrainConfig& cfg, int64_t epoch, ParamGroup group);

// ---------------------------------------------------------------------------
// Data

struct Dataset {
    BenchmarkSpec spec;
    nlohmann::ordered_json manifest;
    std::vector<VideoSample> samples;
    std::vector<std::string> ids;
    std::vector<std::string> splits;
    std::vector<std::set<Attribute>> attributes;

    std::vector<size_t> indices(const std::string& split) const;
};

/// Reads manifest.json and every sample directory below `dir`.
Dataset load_dataset(const std::filesystem::path& dir);
/// Renders the benchmark in memory without touching the disk.
Dataset build_dataset(const BenchmarkSpec& spec);

/// Ground truth at mask resolution. Masks are the fraction of each stride-8
/// cell covered by the instance on the zero-padded frame.
std::vector<GtInstance> to_gt_instances(const VideoSample& sample, const ModelConfig& cfg);

/// One EvalPrediction per query: best foreground class, its probability as
/// score, masks upsampled to frame resolution and thresholded.
EvalVideo to_eval_video(const PredictionSet& pred, const VideoSample& sample, const ModelConfig& cfg,
                        const std::set<Attribute>& attributes = {});

// ---------------------------------------------------------------------------
// Training

struct StepStats {
    double total = 0, cls = 0, l1 = 0, mask = 0, dice = 0;
    double loss_d = 0, loss_enc = 0;
    double grad_norm = 0;
};

enum class StepMode { both, disc_only, model_only };

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    const TrainConfig& config() const { return cfg_; }
    VisModel& model() { return *model_; }
    const VisModel& model() const { return *model_; }
    int64_t steps_done() const { return steps_; }

    /// One optimization step on a batch: with the adversarial loss on, a
    /// discriminator update on detached inputs, then a model update against
    /// the updated, frozen discriminator.
    StepStats step(const std::vector<const VideoSample*>& batch, int64_t epoch, StepMode mode = StepMode::both);

    /// Loss of a batch without updating anything.
    StepStats evaluate_loss(const std::vector<const VideoSample*>& batch);

    /// One pass over `train` in a seed-determined order. Returns the log line.
    nlohmann::ordered_json run_epoch(const Dataset& data, const std::vector<size_t>& train, int64_t epoch);

private:
    TrainConfig cfg_;
    std::unique_ptr<VisModel> model_;
    AdamWState model_state_, disc_state_;
    int64_t steps_ = 0;
};

/// Runs inference on the chosen samples and scores them.
EvalResult evaluate_model(const VisModel& model, const Dataset& data, const std::vector<size_t>& which);

struct TrainOutcome {
    std::vector<nlohmann::ordered_json> log;
    EvalResult val;
};

/// Full run: writes `train_log.jsonl` and `checkpoint.json`/`.bin` (after
/// every epoch) into out_dir. A non-finite loss raises NumericError and the
/// last good checkpoint stays in place.
TrainOutcome train(const TrainConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                   std::ostream* progress = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const VisModel& model, const TrainConfig& cfg,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

struct LoadedCheckpoint {
    TrainConfig config;
    nlohmann::ordered_json meta;
    std::unique_ptr<VisModel> model;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Builds the model a config describes (discriminator only with fgbg_loss).
std::unique_ptr<VisModel> make_model(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
    std::string name;
    bool ms_sts, t_dec, fgbg_loss;
};

/// baseline, +ms_sts, +t_dec, +fgbg, each adding to the previous one.
std::vector<AblationVariant> progressive_variants();

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    double ap = 0, ap50 = 0, ap75 = 0;
    double ap_fast_motion = 0;
};

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, const Dataset& data,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<uint64_t>& seeds, std::ostream* progress = nullptr);

/// CSV with header variant,seed,AP,AP50,AP75,AP_fast_motion.
std::string ablation_csv(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------------------
// Diagnostics

/// Min-max normalization to [0, 1]; a constant input maps to all zeros.
std::vector<double> normalize_map(const std::vector<double>& v);

struct AttentionMaps {
    int64_t frames = 0, height = 0, width = 0;
    std::vector<double> values;  // [T, h, w], normalized over the whole clip
};

/// Mean |E| over channels at the finest encoder level, per frame.
AttentionMaps attention_maps(const VisModel& model, const VideoSample& sample);

/// Writes attn_<t>.pgm per frame at level resolution and grid.pgm (top row
/// the input frames in gray, bottom row the maps enlarged to frame size).
void write_attention_maps(const AttentionMaps& maps, const VideoSample& sample, const std::filesystem::path& out_dir);

struct GradReport {
    std::vector<GradCheckResult> results;
    bool passed() const;
    std::string to_text() const;
};

/// Runs each case for `trials` seeds starting at `seed` and keeps the worst.
GradReport check_grad(const std::vector<GradCase>& cases, int trials, uint64_t seed);

struct BenchRow {
    std::string name;
    int64_t frames = 0, channels = 0, height = 0, width = 0;
    int levels = 3;
    bool time = false;
};

/// Parses a CSV grid with header name,frames,channels,height,width,levels,time.
std::vector<BenchRow> parse_bench_grid(const std::string& text);

inline constexpr const char* kBenchHeader =
    "name,frames,channels,height,width,levels,tokens,intra_flops,inter_flops,split_flops,joint_flops,forward_ms";

/// CSV rows under kBenchHeader. Strides are 8, 16, 32, ... per level; the
/// forward time of the split module is measured only for rows with time=1.
std::string bench(const std::vector<BenchRow>& rows);

/// Worker count from MSTS_NUM_THREADS, else the hardware concurrency.
int num_threads();

}  // namespace msts
