#include "msts/synthdata.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "msts/errors.h"

namespace msts {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

const char* shape_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

ShapeKind shape_from_name(const std::string& name) {
    if (name == "circle") return ShapeKind::circle;
    if (name == "rectangle") return ShapeKind::rectangle;
    if (name == "triangle") return ShapeKind::triangle;
    throw SpecError("unknown shape '" + name + "'");
}

double MotionScript::center_x(int64_t t) const { return start_x + progress.at(static_cast<size_t>(t)) * (end_x - start_x); }
double MotionScript::center_y(int64_t t) const { return start_y + progress.at(static_cast<size_t>(t)) * (end_y - start_y); }
double MotionScript::half_width(int64_t t) const {
    return half_size * scale.at(static_cast<size_t>(t)) * std::sqrt(aspect.at(static_cast<size_t>(t)));
}
double MotionScript::half_height(int64_t t) const {
    return half_size * scale.at(static_cast<size_t>(t)) / std::sqrt(aspect.at(static_cast<size_t>(t)));
}

Tensor VideoSample::frames_tensor(DType dtype) const {
    std::vector<double> v(pixels.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = pixels[i] / 255.0;
    return Tensor::from_data({frames, 3, height, width}, std::move(v), dtype);
}

Tensor VideoSample::mask_tensor(size_t instance, DType dtype) const {
    const auto& m = instances.at(instance).masks;
    return Tensor::from_data({frames, height, width}, std::vector<double>(m.begin(), m.end()), dtype);
}

namespace {

bool inside_shape(const MotionScript& s, int64_t t, double px, double py) {
    const double cx = s.center_x(t), cy = s.center_y(t);
    const double a = s.half_width(t), b = s.half_height(t);
    switch (s.kind) {
        case ShapeKind::circle: {
            const double u = (px - cx) / a, v = (py - cy) / b;
            return u * u + v * v <= 1.0;
        }
        case ShapeKind::rectangle: return std::fabs(px - cx) <= a && std::fabs(py - cy) <= b;
        case ShapeKind::triangle: {
            const double top = cy - b;
            if (py < top || py > cy + b) return false;
            return std::fabs(px - cx) <= a * (py - top) / (2.0 * b);
        }
    }
    return false;
}

uint8_t quantize(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Smooth gray-ish texture: a coarse random lattice interpolated to full
/// resolution, plus per-frame fine noise.
std::vector<double> background(Rng& rng, int64_t frames, int64_t h, int64_t w) {
    const int64_t gh = 9, gw = 9;
    std::vector<double> lattice(static_cast<size_t>(3 * gh * gw));
    const double tint[3] = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < gh * gw; ++i) lattice[static_cast<size_t>(c * gh * gw + i)] = rng.uniform(0.2, 0.55) + tint[c];
    std::vector<double> out(static_cast<size_t>(frames * 3 * h * w));
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t c = 0; c < 3; ++c) {
            for (int64_t y = 0; y < h; ++y) {
                const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * (gh - 1);
                const auto y0 = static_cast<int64_t>(gy);
                const int64_t y1 = std::min(y0 + 1, gh - 1);
                const double fy = gy - static_cast<double>(y0);
                for (int64_t x = 0; x < w; ++x) {
                    const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * (gw - 1);
                    const auto x0 = static_cast<int64_t>(gx);
                    const int64_t x1 = std::min(x0 + 1, gw - 1);
                    const double fx = gx - static_cast<double>(x0);
                    const double* g = lattice.data() + c * gh * gw;
                    const double top = g[y0 * gw + x0] + (g[y0 * gw + x1] - g[y0 * gw + x0]) * fx;
                    const double bot = g[y1 * gw + x0] + (g[y1 * gw + x1] - g[y1 * gw + x0]) * fx;
                    out[static_cast<size_t>(((t * 3 + c) * h + y) * w + x)] = top + (bot - top) * fy;
                }
            }
        }
        for (int64_t i = 0; i < 3 * h * w; ++i) out[static_cast<size_t>(t * 3 * h * w + i)] += rng.uniform(-0.06, 0.06);
    }
    return out;
}

}  // namespace

VideoSample generate(const ClipSpec& spec, uint64_t seed) {
    if (spec.frames < 1 || spec.height < 1 || spec.width < 1) throw SpecError("clip extents must be positive");
    if (spec.instances.empty() || spec.instances.size() > 4) {
        throw SpecError("a clip needs 1 to 4 instances, got " + std::to_string(spec.instances.size()));
    }
    const int64_t t_n = spec.frames, h = spec.height, w = spec.width;
    for (size_t i = 0; i < spec.instances.size(); ++i) {
        const auto& s = spec.instances[i];
        const auto n = static_cast<size_t>(t_n);
        if (s.scale.size() != n || s.aspect.size() != n || s.progress.size() != n) {
            throw SpecError("instance " + std::to_string(i) + ": per-frame sequences must have T entries");
        }
        for (int64_t t = 0; t < t_n; ++t) {
            if (2.0 * s.half_width(t) < 4.0 || 2.0 * s.half_height(t) < 4.0) {
                throw SpecError("instance " + std::to_string(i) + " frame " + std::to_string(t) +
                                ": rendered extent below 4 px");
            }
        }
    }

    Rng rng(seed);
    VideoSample sample;
    sample.frames = t_n;
    sample.height = h;
    sample.width = w;
    sample.seed = seed;
    std::vector<double> image = background(rng, t_n, h, w);

    // Owner map: index of the topmost instance per pixel, -1 for background.
    std::vector<int> owner(static_cast<size_t>(t_n * h * w), -1);
    for (size_t i = 0; i < spec.instances.size(); ++i) {
        const auto& s = spec.instances[i];
        for (int64_t t = 0; t < t_n; ++t)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    if (inside_shape(s, t, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
                        owner[static_cast<size_t>((t * h + y) * w + x)] = static_cast<int>(i);
    }

    for (size_t i = 0; i < spec.instances.size(); ++i) {
        const auto& s = spec.instances[i];
        InstanceTrack track;
        track.class_id = static_cast<int64_t>(s.kind);
        track.masks.assign(static_cast<size_t>(t_n * h * w), 0);
        track.boxes.assign(static_cast<size_t>(t_n * 4), 0.0);
        track.visible.assign(static_cast<size_t>(t_n), 0);
        for (int64_t t = 0; t < t_n; ++t) {
            int64_t x0 = w, x1 = -1, y0 = h, y1 = -1;
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    const auto idx = static_cast<size_t>((t * h + y) * w + x);
                    if (owner[idx] != static_cast<int>(i)) continue;
                    track.masks[idx] = 1;
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    for (int64_t c = 0; c < 3; ++c) {
                        image[static_cast<size_t>(((t * 3 + c) * h + y) * w + x)] =
                            s.color[c] / 255.0 + rng.uniform(-0.04, 0.04);
                    }
                }
            }
            if (x1 >= 0) {
                track.visible[static_cast<size_t>(t)] = 1;
                double* b = track.boxes.data() + t * 4;
                b[0] = static_cast<double>(x0 + x1 + 1) / 2.0 / static_cast<double>(w);
                b[1] = static_cast<double>(y0 + y1 + 1) / 2.0 / static_cast<double>(h);
                b[2] = static_cast<double>(x1 - x0 + 1) / static_cast<double>(w);
                b[3] = static_cast<double>(y1 - y0 + 1) / static_cast<double>(h);
            }
        }
        sample.instances.push_back(std::move(track));
    }
    sample.pixels.resize(image.size());
    for (size_t i = 0; i < image.size(); ++i) sample.pixels[i] = quantize(image[i]);
    return sample;
}

const char* attribute_name(Attribute a) {
    switch (a) {
        case Attribute::fast_motion: return "fast_motion";
        case Attribute::size_change: return "size_change";
        case Attribute::aspect_change: return "aspect_change";
    }
    return "?";
}

Attribute attribute_from_name(const std::string& name) {
    if (name == "fast_motion") return Attribute::fast_motion;
    if (name == "size_change") return Attribute::size_change;
    if (name == "aspect_change") return Attribute::aspect_change;
    throw SpecError("unknown attribute '" + name + "'");
}

std::set<Attribute> classify_tracks(const std::vector<PixelTrack>& tracks, const AttributeThresholds& th) {
    std::set<Attribute> out;
    for (const auto& tr : tracks) {
        const size_t frames = tr.visible.size();
        double min_size = 0, max_size = 0, min_aspect = 0, max_aspect = 0;
        bool any = false;
        int64_t prev = -1;
        for (size_t t = 0; t < frames; ++t) {
            if (!tr.visible[t]) continue;
            const double* b = tr.boxes.data() + t * 4;
            const double size = std::sqrt(b[2] * b[3]);
            const double aspect = b[2] / b[3];
            if (!any) {
                min_size = max_size = size;
                min_aspect = max_aspect = aspect;
                any = true;
            } else {
                min_size = std::min(min_size, size);
                max_size = std::max(max_size, size);
                min_aspect = std::min(min_aspect, aspect);
                max_aspect = std::max(max_aspect, aspect);
            }
            if (prev >= 0 && static_cast<size_t>(prev) + 1 == t) {
                const double* p = tr.boxes.data() + prev * 4;
                const double dist = std::hypot(b[0] - p[0], b[1] - p[1]);
                if (dist >= th.motion * std::sqrt(p[2] * p[3])) out.insert(Attribute::fast_motion);
            }
            prev = static_cast<int64_t>(t);
        }
        if (!any) continue;
        if (max_size / min_size > th.size) out.insert(Attribute::size_change);
        if (max_aspect / min_aspect > th.aspect) out.insert(Attribute::aspect_change);
    }
    return out;
}

std::set<Attribute> classify_attributes(const VideoSample& sample, const AttributeThresholds& th) {
    std::vector<PixelTrack> tracks;
    for (const auto& inst : sample.instances) {
        PixelTrack tr;
        tr.visible = inst.visible;
        tr.boxes = inst.boxes;
        for (size_t t = 0; t < inst.visible.size(); ++t) {
            tr.boxes[t * 4 + 0] *= static_cast<double>(sample.width);
            tr.boxes[t * 4 + 1] *= static_cast<double>(sample.height);
            tr.boxes[t * 4 + 2] *= static_cast<double>(sample.width);
            tr.boxes[t * 4 + 3] *= static_cast<double>(sample.height);
        }
        tracks.push_back(std::move(tr));
    }
    return classify_tracks(tracks, th);
}

namespace {

// Two hues per shape class (rows 2k and 2k+1 belong to class k).
const uint8_t kPalette[6][3] = {{235, 60, 50}, {240, 220, 40}, {50, 200, 70}, {40, 220, 230}, {60, 90, 240}, {230, 60, 220}};

MotionScript random_script(Rng& rng, const std::string& role, const BenchmarkSpec& spec) {
    const double unit = static_cast<double>(std::min(spec.height, spec.width)) / 64.0;
    const int64_t t_n = spec.frames;
    MotionScript s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    const auto& base = kPalette[2 * static_cast<int>(s.kind) + rng.uniform_int(0, 1)];
    for (int c = 0; c < 3; ++c) s.color[c] = static_cast<uint8_t>(std::clamp(base[c] + rng.uniform_int(-15, 15), 0L, 255L));

    double scale_end = 1.0 + rng.uniform(-0.1, 0.1);
    double aspect0 = rng.uniform(0.8, 1.25);
    double aspect_end = aspect0 * (1.0 + rng.uniform(-0.1, 0.1));
    double step = rng.uniform(0.0, 0.15);  // per-frame displacement as a fraction of size
    // Objects span one to four stride-8 cells so masks at that stride stay meaningful.
    s.half_size = rng.uniform(8.0, 14.0) * unit;
    if (role == "fast_motion") {
        s.half_size = rng.uniform(7.0, 9.0) * unit;
        step = rng.uniform(0.45, 0.6);
    } else if (role == "size_change") {
        s.half_size = rng.uniform(7.0, 8.0) * unit;
        scale_end = rng.uniform(1.7, 1.9);
    } else if (role == "aspect_change") {
        aspect0 = rng.uniform(0.5, 0.6);
        aspect_end = rng.uniform(1.7, 2.0);
        s.half_size = rng.uniform(8.0, 10.0) * unit;
    }
    const bool reverse = rng.uniform() < 0.5;
    double scale0 = 1.0;
    if (reverse) {
        std::swap(scale0, scale_end);
        std::swap(aspect0, aspect_end);
    }
    const double size = 2.0 * s.half_size;
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double travel = step * size * static_cast<double>(std::max<int64_t>(t_n - 1, 0));
    s.start_x = rng.uniform(0.0, static_cast<double>(spec.width));
    s.start_y = rng.uniform(0.0, static_cast<double>(spec.height));
    s.end_x = s.start_x + travel * std::cos(angle);
    s.end_y = s.start_y + travel * std::sin(angle);
    for (int64_t t = 0; t < t_n; ++t) {
        const double f = t_n > 1 ? static_cast<double>(t) / static_cast<double>(t_n - 1) : 0.0;
        s.progress.push_back(f);
        s.scale.push_back(scale0 + (scale_end - scale0) * f);
        s.aspect.push_back(aspect0 * std::pow(aspect_end / aspect0, f));
    }
    return s;
}

bool fits(const ClipSpec& clip) {
    const double margin = 1.0, gap = 2.0;
    for (int64_t t = 0; t < clip.frames; ++t) {
        for (size_t i = 0; i < clip.instances.size(); ++i) {
            const auto& a = clip.instances[i];
            const double ax = a.center_x(t), ay = a.center_y(t), aw = a.half_width(t), ah = a.half_height(t);
            if (aw < 2.0 || ah < 2.0) return false;
            if (ax - aw < margin || ay - ah < margin || ax + aw > static_cast<double>(clip.width) - margin ||
                ay + ah > static_cast<double>(clip.height) - margin)
                return false;
            for (size_t j = 0; j < i; ++j) {
                const auto& b = clip.instances[j];
                const bool apart_x = std::fabs(ax - b.center_x(t)) >= aw + b.half_width(t) + gap;
                const bool apart_y = std::fabs(ay - b.center_y(t)) >= ah + b.half_height(t) + gap;
                if (!apart_x && !apart_y) return false;
            }
        }
    }
    return true;
}

}  // namespace

ClipSpec random_clip(const std::string& kind, uint64_t seed, const BenchmarkSpec& spec) {
    if (kind != "random") attribute_from_name(kind);
    Rng rng(mix_seed(seed, 0x5c17));
    ClipSpec clip;
    clip.frames = spec.frames;
    clip.height = spec.height;
    clip.width = spec.width;
    for (int count = static_cast<int>(rng.uniform_int(1, spec.max_instances)); count >= 1; --count) {
        for (int attempt = 0; attempt < 400; ++attempt) {
            clip.instances.clear();
            for (int i = 0; i < count; ++i) clip.instances.push_back(random_script(rng, i == 0 ? kind : "random", spec));
            if (fits(clip)) return clip;
        }
    }
    throw SpecError("could not place instances for kind '" + kind + "'; frame too small");
}

namespace {

ordered_json entry_for(const std::string& id, const std::string& split, const std::string& kind, uint64_t seed,
                       const VideoSample& sample) {
    ordered_json e;
    e["id"] = id;
    e["split"] = split;
    e["kind"] = kind;
    e["seed"] = seed;
    ordered_json attrs = ordered_json::array();
    for (auto a : classify_attributes(sample)) attrs.push_back(attribute_name(a));
    e["attributes"] = attrs;
    ordered_json classes = ordered_json::array();
    for (const auto& inst : sample.instances) classes.push_back(shape_name(static_cast<ShapeKind>(inst.class_id)));
    e["classes"] = classes;
    ordered_json boxes = ordered_json::array();
    for (const auto& inst : sample.instances) boxes.push_back(inst.boxes);
    e["boxes"] = boxes;
    return e;
}

}  // namespace

nlohmann::ordered_json make_benchmark(const BenchmarkSpec& spec) {
    ordered_json manifest;
    manifest["format"] = "msts-synth-1";
    manifest["seed"] = spec.seed;
    manifest["frames"] = spec.frames;
    manifest["height"] = spec.height;
    manifest["width"] = spec.width;
    manifest["max_instances"] = spec.max_instances;
    manifest["requested"] = {{"train", spec.train},
                             {"val", spec.val},
                             {"fast_motion", spec.fast_motion},
                             {"size_change", spec.size_change},
                             {"aspect_change", spec.aspect_change}};
    ordered_json samples = ordered_json::array();
    uint64_t stream = 0;
    auto add = [&](const std::string& split, const std::string& kind) {
        char id[32];
        std::snprintf(id, sizeof id, "s%05zu", samples.size());
        // Scripted attribute samples are redrawn until they show their attribute.
        for (;;) {
            const uint64_t seed = mix_seed(spec.seed, ++stream);
            VideoSample sample = generate(random_clip(kind, seed, spec), seed);
            if (kind != "random" && !classify_attributes(sample).count(attribute_from_name(kind))) continue;
            samples.push_back(entry_for(id, split, kind, seed, sample));
            return;
        }
    };
    for (int64_t i = 0; i < spec.train; ++i) add("train", "random");
    for (int64_t i = 0; i < spec.val; ++i) add("val", "random");
    const std::pair<const char*, int64_t> scripted[] = {
        {"fast_motion", spec.fast_motion}, {"size_change", spec.size_change}, {"aspect_change", spec.aspect_change}};
    for (const auto& [kind, count] : scripted) {
        for (int64_t i = 0; i < count; ++i) add(i < count / 2 ? "train" : "val", kind);
    }
    manifest["samples"] = samples;
    return manifest;
}

BenchmarkSpec benchmark_spec_from_json(const nlohmann::ordered_json& m) {
    BenchmarkSpec spec;
    spec.seed = m.at("seed").get<uint64_t>();
    spec.frames = m.at("frames").get<int64_t>();
    spec.height = m.at("height").get<int64_t>();
    spec.width = m.at("width").get<int64_t>();
    spec.max_instances = m.at("max_instances").get<int>();
    const auto& r = m.at("requested");
    spec.train = r.at("train").get<int64_t>();
    spec.val = r.at("val").get<int64_t>();
    spec.fast_motion = r.at("fast_motion").get<int64_t>();
    spec.size_change = r.at("size_change").get<int64_t>();
    spec.aspect_change = r.at("aspect_change").get<int64_t>();
    return spec;
}

VideoSample regenerate(const nlohmann::ordered_json& entry, const BenchmarkSpec& spec) {
    const auto seed = entry.at("seed").get<uint64_t>();
    return generate(random_clip(entry.at("kind").get<std::string>(), seed, spec), seed);
}

void write_pgm(const fs::path& path, int64_t width, int64_t height, const uint8_t* data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(width * height));
}

std::vector<uint8_t> read_pgm(const fs::path& path, int64_t& width, int64_t& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string magic;
    int64_t maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P5" || maxval != 255 || width < 1 || height < 1) throw FormatError(path.string() + ": not an 8-bit P5 PGM");
    in.get();
    std::vector<uint8_t> data(static_cast<size_t>(width * height));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (in.gcount() != static_cast<std::streamsize>(data.size())) throw FormatError(path.string() + ": truncated");
    return data;
}

nlohmann::ordered_json script_to_json(const MotionScript& s) {
    return {{"shape", shape_name(s.kind)},
            {"start", {s.start_x, s.start_y}},
            {"end", {s.end_x, s.end_y}},
            {"half_size", s.half_size},
            {"scale", s.scale},
            {"aspect", s.aspect},
            {"progress", s.progress},
            {"color", {s.color[0], s.color[1], s.color[2]}}};
}

MotionScript script_from_json(const nlohmann::ordered_json& j) {
    MotionScript s;
    s.kind = shape_from_name(j.at("shape").get<std::string>());
    s.start_x = j.at("start").at(0).get<double>();
    s.start_y = j.at("start").at(1).get<double>();
    s.end_x = j.at("end").at(0).get<double>();
    s.end_y = j.at("end").at(1).get<double>();
    s.half_size = j.at("half_size").get<double>();
    s.scale = j.at("scale").get<std::vector<double>>();
    s.aspect = j.at("aspect").get<std::vector<double>>();
    s.progress = j.at("progress").get<std::vector<double>>();
    if (j.contains("color"))
        for (int c = 0; c < 3; ++c) s.color[c] = j.at("color").at(c).get<uint8_t>();
    return s;
}

void write_sample(const VideoSample& sample, const nlohmann::ordered_json& entry, const fs::path& dir) {
    fs::create_directories(dir);
    const int64_t h = sample.height, w = sample.width;
    for (int64_t t = 0; t < sample.frames; ++t)
        for (int64_t c = 0; c < 3; ++c)
            write_pgm(dir / ("frame_" + std::to_string(t) + "_" + std::to_string(c) + ".pgm"), w, h,
                      sample.pixels.data() + (t * 3 + c) * h * w);
    ordered_json instances = ordered_json::array();
    for (size_t i = 0; i < sample.instances.size(); ++i) {
        const auto& inst = sample.instances[i];
        std::vector<uint8_t> scaled(static_cast<size_t>(h * w));
        for (int64_t t = 0; t < sample.frames; ++t) {
            for (int64_t p = 0; p < h * w; ++p) scaled[static_cast<size_t>(p)] = inst.masks[static_cast<size_t>(t * h * w + p)] ? 255 : 0;
            write_pgm(dir / ("mask_" + std::to_string(i) + "_" + std::to_string(t) + ".pgm"), w, h, scaled.data());
        }
        instances.push_back({{"class", shape_name(static_cast<ShapeKind>(inst.class_id))},
                             {"class_id", inst.class_id},
                             {"boxes", inst.boxes},
                             {"visible", inst.visible}});
    }
    ordered_json meta = entry;
    meta["frames"] = sample.frames;
    meta["height"] = h;
    meta["width"] = w;
    meta["instances"] = instances;
    std::ofstream out(dir / "sample.json", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / "sample.json").string());
    out << meta.dump(2) << '\n';
}

VideoSample read_sample(const fs::path& dir) {
    std::ifstream in(dir / "sample.json");
    if (!in) throw FormatError("cannot open " + (dir / "sample.json").string());
    ordered_json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((dir / "sample.json").string() + ": " + e.what());
    }
    VideoSample s;
    s.frames = meta.at("frames").get<int64_t>();
    s.height = meta.at("height").get<int64_t>();
    s.width = meta.at("width").get<int64_t>();
    s.seed = meta.value("seed", uint64_t{0});
    const int64_t hw = s.height * s.width;
    s.pixels.resize(static_cast<size_t>(s.frames * 3 * hw));
    auto load = [&](const fs::path& p, uint8_t* dst) {
        int64_t w = 0, h = 0;
        auto data = read_pgm(p, w, h);
        if (w != s.width || h != s.height) throw FormatError(p.string() + ": unexpected extents");
        std::copy(data.begin(), data.end(), dst);
    };
    for (int64_t t = 0; t < s.frames; ++t)
        for (int64_t c = 0; c < 3; ++c)
            load(dir / ("frame_" + std::to_string(t) + "_" + std::to_string(c) + ".pgm"), s.pixels.data() + (t * 3 + c) * hw);
    const auto& instances = meta.at("instances");
    for (size_t i = 0; i < instances.size(); ++i) {
        InstanceTrack tr;
        tr.class_id = instances[i].at("class_id").get<int64_t>();
        tr.boxes = instances[i].at("boxes").get<std::vector<double>>();
        tr.visible = instances[i].at("visible").get<std::vector<uint8_t>>();
        tr.masks.resize(static_cast<size_t>(s.frames * hw));
        for (int64_t t = 0; t < s.frames; ++t) {
            load(dir / ("mask_" + std::to_string(i) + "_" + std::to_string(t) + ".pgm"), tr.masks.data() + t * hw);
        }
        for (auto& m : tr.masks) m = m > 127 ? 1 : 0;
        s.instances.push_back(std::move(tr));
    }
    return s;
}

nlohmann::ordered_json write_benchmark(const BenchmarkSpec& spec, const fs::path& out_dir) {
    auto manifest = make_benchmark(spec);
    fs::create_directories(out_dir);
    for (const auto& entry : manifest.at("samples")) {
        write_sample(regenerate(entry, spec), entry, out_dir / entry.at("id").get<std::string>());
    }
    std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (out_dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
    return manifest;
}

}  // namespace msts
