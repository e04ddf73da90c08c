#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "msts/errors.h"
#include "msts/ops.h"
#include "msts/trainer.h"

using namespace msts;
namespace fs = std::filesystem;

namespace {

// Total loss at the first and 50th step on the fixed batch (seed 0 defaults).
constexpr double kFixedBatchFirst = 12.16175651550293;
constexpr double kFixedBatchLast = 5.7836971282958984;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("msts_test_trainer_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    cfg.lr_drops = {};
    cfg.data.train = 4;
    cfg.data.val = 2;
    cfg.data.seed = 3;
    return cfg;
}

std::vector<double> all_values(const ParamSet& ps) {
    std::vector<double> v;
    for (const auto& e : ps.entries()) v.insert(v.end(), e.tensor.data().begin(), e.tensor.data().end());
    return v;
}

std::vector<double> values_with_prefix(const ParamSet& ps, const std::string& prefix) {
    std::vector<double> v;
    for (const auto& e : ps.entries())
        if (e.name.rfind(prefix, 0) == 0) v.insert(v.end(), e.tensor.data().begin(), e.tensor.data().end());
    return v;
}

}  // namespace

TEST_CASE("adamw: worked examples") {
    const AdamWConfig no_decay{0.9, 0.999, 1e-8, 0.0};
    auto constant_lr = [](double lr) { return [lr](ParamGroup) { return lr; }; };

    SUBCASE("zero gradient leaves the parameter in place") {
        ParamSet ps(DType::f64);
        Tensor p = ps.ones("p", {3});
        p.impl()->grad.assign(3, 0.0);
        AdamWState st;
        adamw_step(ps, st, no_decay, constant_lr(0.1));
        for (double v : p.values()) CHECK(v == 1.0);
    }
    SUBCASE("first step moves by lr times the sign") {
        ParamSet ps(DType::f64);
        Tensor p = ps.ones("p", {2});
        p.impl()->grad = {1.0, -4.0};
        AdamWState st;
        adamw_step(ps, st, no_decay, constant_lr(0.1));
        // m_hat = g and v_hat = g^2 after bias correction.
        CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-9));
        CHECK(p.values()[1] == doctest::Approx(1.1).epsilon(1e-9));
        CHECK(st.steps[0] == 1);
    }
    SUBCASE("decay is decoupled from the gradient") {
        ParamSet ps(DType::f64);
        Tensor p = ps.ones("p", {1});
        p.impl()->grad = {0.0};
        AdamWState st;
        adamw_step(ps, st, {0.9, 0.999, 1e-8, 0.1}, constant_lr(0.1));
        CHECK(p.values()[0] == doctest::Approx(0.99).epsilon(1e-12));
    }
    SUBCASE("second step matches a hand recursion") {
        ParamSet ps(DType::f64);
        Tensor p = ps.zeros("p", {1});
        AdamWState st;
        p.impl()->grad = {1.0};
        adamw_step(ps, st, no_decay, constant_lr(0.01));
        p.impl()->grad = {3.0};
        adamw_step(ps, st, no_decay, constant_lr(0.01));
        const double m = 0.9 * 0.1 + 0.1 * 3.0, v = 0.999 * 0.001 + 0.001 * 9.0;
        const double step2 = 0.01 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
        CHECK(p.values()[0] == doctest::Approx(-0.01 - step2).epsilon(1e-9));
    }
    SUBCASE("entries without a gradient are skipped") {
        ParamSet ps(DType::f64);
        Tensor a = ps.ones("a", {1});
        Tensor b = ps.ones("b", {1});
        a.impl()->grad = {1.0};
        AdamWState st;
        adamw_step(ps, st, {0.9, 0.999, 1e-8, 0.5}, constant_lr(0.1));
        CHECK(b.values()[0] == 1.0);
        CHECK(st.steps[1] == 0);
    }
    SUBCASE("a NaN gradient aborts before any update and names the parameter") {
        ParamSet ps(DType::f64);
        Tensor a = ps.ones("fine", {1});
        Tensor b = ps.ones("broken", {2});
        a.impl()->grad = {1.0};
        b.impl()->grad = {0.0, std::numeric_limits<double>::quiet_NaN()};
        AdamWState st;
        try {
            adamw_step(ps, st, no_decay, constant_lr(0.1));
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("broken") != std::string::npos);
        }
        CHECK(a.values()[0] == 1.0);
    }
}

TEST_CASE("clip_grad_norm") {
    ParamSet ps(DType::f64);
    Tensor a = ps.zeros("a", {2});
    a.impl()->grad = {3.0, 4.0};
    CHECK(clip_grad_norm(ps, 0.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == 3.0);
    CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(a.grad()[1] == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("learning-rate schedule: drops at the 4th and 10th epoch") {
    TrainConfig cfg;
    for (int64_t e = 0; e < 12; ++e) {
        const double expect = e < 3 ? 2e-4 : (e < 9 ? 2e-5 : 2e-6);
        CHECK(scheduled_lr(cfg, e, ParamGroup::base) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(scheduled_lr(cfg, e, ParamGroup::backbone) == doctest::Approx(expect * 0.1).epsilon(1e-12));
    }
}

TEST_CASE("config text: parse, round trip, errors") {
    const TrainConfig cfg = parse_config(R"(
# comment line
epochs = 3          # trailing comment
lr = 5e-4
lr_drops = [2, 3]
fgbg_loss = false
data_dir = "some # dir"
queries = 6
data_train = 10
)");
    CHECK(cfg.epochs == 3);
    CHECK(cfg.lr == 5e-4);
    CHECK(cfg.lr_drops == std::vector<int64_t>{2, 3});
    CHECK_FALSE(cfg.fgbg_loss);
    CHECK(cfg.data_dir == "some # dir");
    CHECK(cfg.model.queries == 6);
    CHECK(cfg.data.train == 10);

    const TrainConfig again = parse_config(config_to_text(cfg));
    CHECK(config_to_text(again) == config_to_text(cfg));
    CHECK(config_to_json(config_from_json(config_to_json(cfg))) == config_to_json(cfg));

    CHECK_THROWS_AS(parse_config("not_a_key = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs = 1\nepochs = 2"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs = two"), ConfigError);
    CHECK_THROWS_AS(parse_config("epochs"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr = -1"), ConfigError);
    try {
        parse_config("epochs = 1\n\nbogus = 2");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("shipped config files parse") {
    for (const char* name : {"desk.toml", "paper.toml"}) {
        const fs::path p = fs::path(MSTS_SOURCE_DIR) / "configs" / name;
        INFO(p.string());
        CHECK_NOTHROW(load_config(p));
    }
    const TrainConfig paper = load_config(fs::path(MSTS_SOURCE_DIR) / "configs" / "paper.toml");
    CHECK(paper.lr == 2e-4);
    CHECK(paper.lr_drops == std::vector<int64_t>{4, 10});
    CHECK(paper.model.channels == 256);
    CHECK(paper.model.layers == 6);
}

TEST_CASE("ground truth at mask resolution keeps the pixel area") {
    TrainConfig cfg = tiny_config();
    const Dataset d = build_dataset(cfg.data);
    for (size_t i = 0; i < d.samples.size(); ++i) {
        const auto gt = to_gt_instances(d.samples[i], cfg.model);
        REQUIRE(gt.size() == d.samples[i].instances.size());
        for (size_t k = 0; k < gt.size(); ++k) {
            double cells = 0, pixels = 0;
            for (double v : gt[k].masks) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0 + 1e-12);
                cells += v;
            }
            for (auto m : d.samples[i].instances[k].masks) pixels += m;
            CHECK(cells * 64.0 == doctest::Approx(pixels).epsilon(1e-9));
        }
    }
}

TEST_CASE("checkpoint round trip is byte- and bit-identical") {
    const fs::path dir = scratch_dir("ckpt");
    TrainConfig cfg = tiny_config();
    const Dataset data = build_dataset(cfg.data);
    Trainer tr(cfg);
    tr.step({&data.samples[0], &data.samples[1]}, 0);
    save_checkpoint(dir / "a" / "ck.json", tr.model(), cfg, {{"epoch", 1}});
    const LoadedCheckpoint loaded = load_checkpoint(dir / "a" / "ck.json");
    save_checkpoint(dir / "b" / "ck.json", *loaded.model, loaded.config, {{"epoch", 1}});
    CHECK(slurp(dir / "a" / "ck.json") == slurp(dir / "b" / "ck.json"));
    CHECK(slurp(dir / "a" / "ck.bin") == slurp(dir / "b" / "ck.bin"));
    CHECK(all_values(loaded.model->disc_params()) == all_values(tr.model().disc_params()));

    NoGradGuard guard;
    const Tensor x = data.samples[2].frames_tensor();
    const ModelOutput o1 = tr.model().forward(x), o2 = loaded.model->forward(x);
    CHECK(o1.predictions.class_logits.values() == o2.predictions.class_logits.values());
    CHECK(o1.predictions.boxes.values() == o2.predictions.boxes.values());
    CHECK(o1.predictions.mask_logits.values() == o2.predictions.mask_logits.values());

    CHECK_THROWS(load_checkpoint(dir / "missing.json"));
}

TEST_CASE("zero epochs leave the initial weights in the checkpoint") {
    const fs::path dir = scratch_dir("zero");
    TrainConfig cfg = tiny_config();
    cfg.epochs = 0;
    const Dataset data = build_dataset(cfg.data);
    train(cfg, data, dir);
    const LoadedCheckpoint ck = load_checkpoint(dir / "checkpoint.json");
    const auto fresh = make_model(cfg);
    CHECK(all_values(ck.model->params()) == all_values(fresh->params()));
    CHECK(all_values(ck.model->disc_params()) == all_values(fresh->disc_params()));
    CHECK(fs::exists(dir / "val_metrics.json"));
}

TEST_CASE("seeded training runs write identical logs") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.eval_every = 1;
    const Dataset data = build_dataset(cfg.data);
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    const TrainOutcome ra = train(cfg, data, a);
    train(cfg, data, b);
    const std::string la = slurp(a / "train_log.jsonl");
    CHECK(!la.empty());
    CHECK(la == slurp(b / "train_log.jsonl"));
    CHECK(ra.log.size() == 2);
    CHECK(ra.log[1]["steps"] == 4);
    CHECK(ra.log[0].contains("loss_d"));

    cfg.seed = 1;
    const fs::path c = scratch_dir("det_c");
    train(cfg, data, c);
    CHECK(la != slurp(c / "train_log.jsonl"));
}

TEST_CASE("adversarial step isolation") {
    TrainConfig cfg = tiny_config();
    const Dataset data = build_dataset(cfg.data);
    const std::vector<const VideoSample*> batch{&data.samples[0], &data.samples[1]};

    SUBCASE("model step moves the encoder and leaves the discriminator bit-identical") {
        Trainer tr(cfg);
        const auto enc0 = values_with_prefix(tr.model().params(), "enc");
        const auto disc0 = all_values(tr.model().disc_params());
        REQUIRE(!enc0.empty());
        const StepStats st = tr.step(batch, 0, StepMode::model_only);
        CHECK(st.loss_enc > 0);
        CHECK(values_with_prefix(tr.model().params(), "enc") != enc0);
        CHECK(all_values(tr.model().disc_params()) == disc0);
    }
    SUBCASE("discriminator step leaves the model bit-identical") {
        Trainer tr(cfg);
        const auto model0 = all_values(tr.model().params());
        const auto disc0 = all_values(tr.model().disc_params());
        tr.step(batch, 0, StepMode::disc_only);
        CHECK(all_values(tr.model().params()) == model0);
        CHECK(all_values(tr.model().disc_params()) != disc0);
    }
    SUBCASE("the adversarial term reaches the encoder") {
        TrainConfig off = cfg;
        off.fgbg_loss = false;
        Trainer with(cfg), without(off);
        with.step(batch, 0, StepMode::model_only);
        without.step(batch, 0, StepMode::model_only);
        CHECK(values_with_prefix(with.model().params(), "enc") !=
              values_with_prefix(without.model().params(), "enc"));
    }
    SUBCASE("without the loss there is no discriminator") {
        TrainConfig off = cfg;
        off.fgbg_loss = false;
        Trainer tr(off);
        CHECK_FALSE(tr.model().has_discriminator());
        CHECK(tr.model().disc_params().entries().empty());
    }
}

TEST_CASE("loss on a fixed batch decreases over 50 steps") {
    TrainConfig cfg;  // built-in defaults, seed 0
    cfg.data.train = 2;
    cfg.data.val = 0;
    const Dataset data = build_dataset(cfg.data);
    const std::vector<const VideoSample*> batch{&data.samples[0], &data.samples[1]};
    Trainer tr(cfg);
    std::vector<double> curve;
    for (int i = 0; i < 50; ++i) curve.push_back(tr.step(batch, 0).total);
    // Regression fixture recorded from this build.
    CHECK(curve.front() == doctest::Approx(kFixedBatchFirst).epsilon(1e-6));
    CHECK(curve.back() == doctest::Approx(kFixedBatchLast).epsilon(1e-6));
    CHECK(curve.back() < 0.75 * curve.front());
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
        head += curve[static_cast<size_t>(i)];
        tail += curve[static_cast<size_t>(40 + i)];
    }
    CHECK(tail < head);
}

TEST_CASE("check_grad reports a corrupted backward rule") {
    GradCase good{"tensor_core", "square", [](Rng& rng) { return std::vector<Tensor>{randn({4}, rng)}; },
                  [](const std::vector<Tensor>& in) { return random_projection(square(in[0]), 1); }};
    GradCase bad{"tensor_core", "square_missing_factor",
                 [](Rng& rng) { return std::vector<Tensor>{randn({4}, rng)}; },
                 [](const std::vector<Tensor>& in) {
                     // x * detach(x) drops half of the true gradient.
                     return random_projection(mul(in[0], in[0].detach()), 1);
                 }};
    const GradReport ok = check_grad({good}, 2, 0);
    CHECK(ok.passed());
    const GradReport rep = check_grad({good, bad}, 2, 0);
    CHECK_FALSE(rep.passed());
    const std::string text = rep.to_text();
    CHECK(text.find("square_missing_factor") != std::string::npos);
    CHECK(text.find("FAIL") != std::string::npos);
    CHECK(text.find("2 cases, 1 failed") != std::string::npos);
}

TEST_CASE("bench: grid parsing and cost fixture") {
    CHECK_THROWS_AS(parse_bench_grid("a,b\n"), ConfigError);
    CHECK_THROWS_AS(parse_bench_grid(""), ConfigError);
    CHECK_THROWS_AS(parse_bench_grid("name,frames,channels,height,width,levels,time\nx,1,2,3\n"), ConfigError);
    CHECK_THROWS_AS(parse_bench_grid("name,frames,channels,height,width,levels,time\nx,0,2,3,4,1,0\n"), ConfigError);

    const auto rows = parse_bench_grid(
        "name,frames,channels,height,width,levels,time\n"
        "# comment\n"
        "paper,5,256,384,640,3,0\n"
        "s1,1,8,64,64,1,0\n"
        "s2,1,8,128,64,1,0\n"
        "tiny,2,8,64,64,2,1\n");
    REQUIRE(rows.size() == 4);
    const std::string csv = bench(rows);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == kBenchHeader);

    // Full-scale row: S = 48*80, 24*40, 12*20 positions, T = 5, C = 256.
    const int64_t s0 = 3840, s1 = 960, s2 = 240, t = 5, c = 256;
    const int64_t intra = (s0 + s1 + s2) * t * t * c;
    const int64_t inter = (s0 * t) * (s0 * t) * c + (s1 * t) * (s1 * t) * c;
    const int64_t joint = ((s0 + s1 + s2) * t) * ((s0 + s1 + s2) * t) * c;
    CHECK(intra == 32256000);
    CHECK(joint == 162570240000);
    CHECK(joint > intra + inter);
    std::getline(in, line);
    CHECK(line == "paper,5,256,384,640,3,25200," + std::to_string(intra) + "," + std::to_string(inter) + "," +
                       std::to_string(intra + inter) + "," + std::to_string(joint) + ",");

    // With one frame the intra-scale term is linear in the number of positions.
    std::string r1, r2;
    std::getline(in, r1);
    std::getline(in, r2);
    CHECK(r1 == "s1,1,8,64,64,1,64,512,0,512,32768,");
    CHECK(r2 == "s2,1,8,128,64,1,128,1024,0,1024,131072,");

    std::getline(in, line);
    CHECK(line.rfind("tiny,2,8,64,64,2,", 0) == 0);
    CHECK(line.back() != ',');  // timed
}

TEST_CASE("normalize_map") {
    CHECK(normalize_map({}).empty());
    CHECK(normalize_map({2, 2, 2}) == std::vector<double>{0, 0, 0});
    CHECK(normalize_map({1, 3, 2}) == std::vector<double>{0, 1, 0.5});
    CHECK(normalize_map({-4, 0}) == std::vector<double>{0, 1});
}

TEST_CASE("attention map export") {
    const fs::path dir = scratch_dir("attn");
    TrainConfig cfg = tiny_config();
    const Dataset data = build_dataset(cfg.data);
    const auto model = make_model(cfg);
    const AttentionMaps m = attention_maps(*model, data.samples[0]);
    CHECK(m.frames == 3);
    CHECK(m.height == 8);
    CHECK(m.width == 8);
    REQUIRE(m.values.size() == 3 * 64);
    CHECK(*std::max_element(m.values.begin(), m.values.end()) == 1.0);
    CHECK(*std::min_element(m.values.begin(), m.values.end()) == 0.0);
    write_attention_maps(m, data.samples[0], dir);
    int64_t w = 0, h = 0;
    const auto grid = read_pgm(dir / "grid.pgm", w, h);
    CHECK(w == 64 * 3);
    CHECK(h == 128);
    CHECK(grid.size() == static_cast<size_t>(w * h));
    CHECK(fs::exists(dir / "attn_2.pgm"));
}

TEST_CASE("ablation: one variant and one seed give one row") {
    TrainConfig cfg = tiny_config();
    cfg.epochs = 0;
    const Dataset data = build_dataset(cfg.data);
    const auto rows = run_ablation(cfg, data, {progressive_variants().front()}, {7});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].variant == "baseline");
    CHECK(rows[0].seed == 7);
    const std::string csv = ablation_csv(rows);
    CHECK(csv.rfind("variant,seed,AP,AP50,AP75,AP_fast_motion\nbaseline,7,", 0) == 0);

    const auto v = progressive_variants();
    REQUIRE(v.size() == 4);
    CHECK((!v[0].ms_sts && !v[0].t_dec && !v[0].fgbg_loss));
    CHECK((v[1].ms_sts && !v[1].t_dec && !v[1].fgbg_loss));
    CHECK((v[2].ms_sts && v[2].t_dec && !v[2].fgbg_loss));
    CHECK((v[3].ms_sts && v[3].t_dec && v[3].fgbg_loss));
}
