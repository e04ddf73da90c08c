#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "msts/attention.h"
#include "msts/errors.h"
#include "msts/trainer.h"

namespace msts {

namespace fs = std::filesystem;

std::vector<double> normalize_map(const std::vector<double>& v) {
    if (v.empty()) return {};
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    std::vector<double> out(v.size(), 0.0);
    if (range > 0)
        for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
    return out;
}

AttentionMaps attention_maps(const VisModel& model, const VideoSample& sample) {
    NoGradGuard guard;
    const ModelOutput out = model.forward(sample.frames_tensor(model.params().dtype()));
    const ScaleFeatures& e = out.encoder.output.front();
    AttentionMaps m;
    m.frames = e.frames();
    m.height = e.height;
    m.width = e.width;
    const int64_t s_n = e.positions(), c_n = e.channels();
    const auto& d = e.data.values();  // [S, T, C]
    std::vector<double> raw(static_cast<size_t>(m.frames * s_n), 0.0);
    for (int64_t s = 0; s < s_n; ++s)
        for (int64_t t = 0; t < m.frames; ++t) {
            double acc = 0;
            for (int64_t c = 0; c < c_n; ++c) acc += std::fabs(d[static_cast<size_t>((s * m.frames + t) * c_n + c)]);
            raw[static_cast<size_t>(t * s_n + s)] = acc / static_cast<double>(c_n);
        }
    m.values = normalize_map(raw);
    return m;
}

void write_attention_maps(const AttentionMaps& maps, const VideoSample& sample, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const int64_t hw = maps.height * maps.width;
    auto to_byte = [](double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    for (int64_t t = 0; t < maps.frames; ++t) {
        std::vector<uint8_t> img(static_cast<size_t>(hw));
        for (int64_t i = 0; i < hw; ++i) img[static_cast<size_t>(i)] = to_byte(maps.values[static_cast<size_t>(t * hw + i)]);
        write_pgm(out_dir / ("attn_" + std::to_string(t) + ".pgm"), maps.width, maps.height, img.data());
    }
    // Grid: input frames (gray) on top, maps enlarged by nearest neighbour below.
    const int64_t h = sample.height, w = sample.width, gw = w * maps.frames, gh = 2 * h;
    const int64_t ph = maps.height * ((h + maps.height - 1) / maps.height);
    const int64_t pw = maps.width * ((w + maps.width - 1) / maps.width);
    std::vector<uint8_t> grid(static_cast<size_t>(gh * gw), 0);
    for (int64_t t = 0; t < maps.frames; ++t)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double gray = 0;
                for (int64_t c = 0; c < 3; ++c) gray += sample.pixels[static_cast<size_t>(((t * 3 + c) * h + y) * w + x)];
                grid[static_cast<size_t>(y * gw + t * w + x)] = static_cast<uint8_t>(std::lround(gray / 3.0));
                const int64_t my = y * maps.height / ph, mx = x * maps.width / pw;
                grid[static_cast<size_t>((h + y) * gw + t * w + x)] =
                    to_byte(maps.values[static_cast<size_t>(t * hw + my * maps.width + mx)]);
            }
    write_pgm(out_dir / "grid.pgm", gw, gh, grid.data());
}

bool GradReport::passed() const {
    return std::all_of(results.begin(), results.end(), [](const GradCheckResult& r) { return r.passed; });
}

std::string GradReport::to_text() const {
    std::string out;
    char line[256];
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-12s %-34s max_rel=%.3e coords=%lld %s\n", r.module.c_str(), r.name.c_str(),
                      r.max_rel_error, static_cast<long long>(r.coordinates), r.passed ? "PASS" : "FAIL");
        out += line;
    }
    const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed; });
    std::snprintf(line, sizeof line, "%zu cases, %lld failed\n", results.size(), static_cast<long long>(failed));
    return out + line;
}

GradReport check_grad(const std::vector<GradCase>& cases, int trials, uint64_t seed) {
    GradReport rep;
    for (const auto& c : cases) {
        GradCheckResult worst;
        worst.module = c.module;
        worst.name = c.name;
        worst.passed = true;
        for (int t = 0; t < std::max(trials, 1); ++t) {
            const GradCheckResult r = check_gradient(c, seed + static_cast<uint64_t>(t));
            worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
            worst.coordinates += r.coordinates;
            worst.passed = worst.passed && r.passed;
        }
        rep.results.push_back(worst);
    }
    return rep;
}

std::vector<BenchRow> parse_bench_grid(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<BenchRow> rows;
    bool header = true;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (header) {
            if (line != "name,frames,channels,height,width,levels,time")
                throw ConfigError("bench grid: header must be name,frames,channels,height,width,levels,time");
            header = false;
            continue;
        }
        if (f.size() != 7) throw ConfigError("bench grid line " + std::to_string(line_no) + ": expected 7 fields");
        try {
            BenchRow r;
            r.name = f[0];
            r.frames = std::stoll(f[1]);
            r.channels = std::stoll(f[2]);
            r.height = std::stoll(f[3]);
            r.width = std::stoll(f[4]);
            r.levels = std::stoi(f[5]);
            r.time = std::stoi(f[6]) != 0;
            if (r.frames < 1 || r.channels < 1 || r.levels < 1 || r.height < 1 || r.width < 1)
                throw ConfigError("non-positive value");
            rows.push_back(r);
        } catch (const std::exception& e) {
            throw ConfigError("bench grid line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (header) throw ConfigError("bench grid: missing header");
    return rows;
}

std::string bench(const std::vector<BenchRow>& rows) {
    std::ostringstream o;
    o << kBenchHeader << '\n';
    for (const auto& r : rows) {
        std::vector<int64_t> positions;
        ScalePyramid pyramid;
        Rng rng(0);
        for (int l = 0; l < r.levels; ++l) {
            const int64_t stride = int64_t{8} << l;
            const int64_t h = r.height / stride, w = r.width / stride;
            positions.push_back(h * w);
            if (r.time) pyramid.push_back({l, randn({h * w, r.frames, r.channels}, rng, 1.0, DType::f32), h, w});
        }
        const AttentionFlops f = attention_flops(r.frames, positions, r.channels);
        int64_t tokens = 0;
        for (auto p : positions) tokens += p * r.frames;
        o << r.name << ',' << r.frames << ',' << r.channels << ',' << r.height << ',' << r.width << ',' << r.levels << ','
          << tokens << ',' << f.intra << ',' << f.inter << ',' << f.split << ',' << f.joint << ',';
        if (r.time && r.levels >= 2) {
            ParamSet ps(DType::f32, 7);
            const MsStsParams params = MsStsParams::make(ps, "bench", r.levels, r.channels);
            NoGradGuard guard;
            const auto t0 = std::chrono::steady_clock::now();
            const EnrichedPyramid out = ms_sts_module(pyramid, params);
            const auto t1 = std::chrono::steady_clock::now();
            char ms[32];
            std::snprintf(ms, sizeof ms, "%.3f", std::chrono::duration<double, std::milli>(t1 - t0).count());
            o << ms;
        }
        o << '\n';
    }
    return o.str();
}

}  // namespace msts
