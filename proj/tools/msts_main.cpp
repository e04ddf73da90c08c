// Command-line entry point. Exit codes: 0 success, 1 usage or configuration
// problem, 2 numeric failure or failed gradient check.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "msts/errors.h"
#include "msts/grad_cases.h"
#include "msts/trainer.h"

using namespace msts;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
}

/// A benchmark spec from JSON (manifest-style keys) or from the data_* keys of a config file.
BenchmarkSpec read_benchmark_spec(const fs::path& p) {
    if (p.extension() == ".json") return benchmark_spec_from_json(nlohmann::ordered_json::parse(read_text(p)));
    return load_config(p).data;
}

/// --data wins; otherwise the config's data_dir; otherwise render the config's benchmark in memory.
Dataset resolve_dataset(const TrainConfig& cfg, const std::string& data_flag) {
    const std::string dir = data_flag.empty() ? cfg.data_dir : data_flag;
    if (!dir.empty()) return load_dataset(dir);
    return build_dataset(cfg.data);
}

size_t find_sample(const Dataset& data, const std::string& key) {
    for (size_t i = 0; i < data.ids.size(); ++i)
        if (data.ids[i] == key) return i;
    try {
        size_t used = 0;
        const unsigned long idx = std::stoul(key, &used);
        if (used == key.size() && idx < data.samples.size()) return idx;
    } catch (const std::exception&) {
    }
    throw ConfigError("no sample '" + key + "' in the dataset");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msts: multi-scale spatio-temporal video instance segmentation at desk scale"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic benchmark to disk");
    std::string gen_spec, gen_out;
    uint64_t gen_seed = 0;
    bool gen_seed_set = false;
    gen->add_option("--spec", gen_spec, "Benchmark spec (.json, or a config file with data_* keys)")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    auto* seed_opt = gen->add_option("--seed", gen_seed, "Overrides the spec seed");

    auto* tr = app.add_subcommand("train", "Train a model");
    std::string tr_config, tr_data, tr_out;
    tr->add_option("--config", tr_config, "Config file")->required();
    tr->add_option("--data", tr_data, "Dataset directory (default: config data_dir or in-memory)");
    tr->add_option("--out", tr_out, "Run directory")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_split = "val", ev_json;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint.json")->required();
    ev->add_option("--data", ev_data, "Dataset directory (default: the checkpoint config's benchmark)");
    ev->add_option("--split", ev_split, "train or val");
    ev->add_option("--json", ev_json, "Also write metrics JSON here");

    auto* cg = app.add_subcommand("check-grad", "Compare analytic and numeric gradients");
    std::string cg_module;
    int cg_trials = 2;
    uint64_t cg_seed = 0;
    cg->add_option("--module", cg_module, "tensor_core, attention, encdec or heads (default: all)");
    cg->add_option("--trials", cg_trials, "Seeds per case");
    cg->add_option("--seed", cg_seed, "First seed");

    auto* be = app.add_subcommand("bench", "Attention cost model and timings");
    std::string be_grid, be_out;
    be->add_option("--grid", be_grid, "CSV grid: name,frames,channels,height,width,levels,time")->required();
    be->add_option("--out", be_out, "Write the CSV here as well");

    auto* va = app.add_subcommand("viz-attn", "Export encoder activation maps for one sample");
    std::string va_ckpt, va_sample, va_data, va_out;
    va->add_option("--ckpt", va_ckpt, "checkpoint.json")->required();
    va->add_option("--sample", va_sample, "Sample directory, or a sample id or index of the dataset")->required();
    va->add_option("--data", va_data, "Dataset directory (default: the checkpoint config's benchmark)");
    va->add_option("--out", va_out, "Output directory")->required();

    auto* ab = app.add_subcommand("ablate", "Train the progressive variants over seeds");
    std::string ab_config, ab_data, ab_out;
    std::vector<uint64_t> ab_seeds;
    ab->add_option("--config", ab_config, "Config file")->required();
    ab->add_option("--data", ab_data, "Dataset directory");
    ab->add_option("--out", ab_out, "Write the CSV here as well");
    ab->add_option("--seeds", ab_seeds, "Overrides ablation_seeds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }
    gen_seed_set = seed_opt->count() > 0;

    try {
        if (*gen) {
            BenchmarkSpec spec = read_benchmark_spec(gen_spec);
            if (gen_seed_set) spec.seed = gen_seed;
            const auto manifest = write_benchmark(spec, gen_out);
            std::cout << "wrote " << manifest.at("samples").size() << " samples to " << gen_out << '\n';
        } else if (*tr) {
            const TrainConfig cfg = load_config(tr_config);
            const Dataset data = resolve_dataset(cfg, tr_data);
            const TrainOutcome out = train(cfg, data, tr_out, &std::cerr);
            if (!out.val.videos) {
                std::cout << "no validation samples\n";
            } else {
                std::cout << out.val.to_table();
            }
        } else if (*ev) {
            const LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
            const Dataset data = resolve_dataset(ck.config, ev_data);
            const auto idx = data.indices(ev_split);
            if (idx.empty()) throw ConfigError("split '" + ev_split + "' is empty");
            const EvalResult r = evaluate_model(*ck.model, data, idx);
            std::cout << r.to_table();
            if (!ev_json.empty()) write_text(ev_json, r.to_json().dump(2) + "\n");
        } else if (*cg) {
            const auto cases = grad_cases_for(cg_module);
            if (cases.empty()) throw ConfigError("unknown module '" + cg_module + "'");
            const GradReport rep = check_grad(cases, cg_trials, cg_seed);
            std::cout << rep.to_text();
            return rep.passed() ? 0 : kExitNumeric;
        } else if (*be) {
            const std::string csv = bench(parse_bench_grid(read_text(be_grid)));
            std::cout << csv;
            if (!be_out.empty()) write_text(be_out, csv);
        } else if (*va) {
            const LoadedCheckpoint ck = load_checkpoint(va_ckpt);
            VideoSample s;
            if (fs::is_directory(va_sample)) {
                s = read_sample(va_sample);
            } else {
                const Dataset data = resolve_dataset(ck.config, va_data);
                s = data.samples[find_sample(data, va_sample)];
            }
            write_attention_maps(attention_maps(*ck.model, s), s, va_out);
            std::cout << "wrote maps to " << va_out << '\n';
        } else if (*ab) {
            TrainConfig cfg = load_config(ab_config);
            if (!ab_seeds.empty()) cfg.ablation_seeds = ab_seeds;
            const Dataset data = resolve_dataset(cfg, ab_data);
            const auto rows = run_ablation(cfg, data, progressive_variants(), cfg.ablation_seeds, &std::cerr);
            const std::string csv = ablation_csv(rows);
            std::cout << csv;
            if (!ab_out.empty()) write_text(ab_out, csv);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return 0;
}
