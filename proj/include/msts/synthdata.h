#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msts/rng.h"
#include "msts/tensor.h"

namespace msts {

enum class ShapeKind { circle = 0, rectangle = 1, triangle = 2 };

const char* shape_name(ShapeKind kind);
ShapeKind shape_from_name(const std::string& name);

/// Trajectory of one instance. Positions are pixel coordinates of the shape
/// center; `half_size` is scaled per frame by `scale[t]` and split into
/// half-width and half-height by `aspect[t]` (width / height).
struct MotionScript {
    ShapeKind kind = ShapeKind::circle;
    double start_x = 0, start_y = 0;
    double end_x = 0, end_y = 0;
    double half_size = 8;
    std::vector<double> scale;     // [T]
    std::vector<double> aspect;    // [T]
    std::vector<double> progress;  // [T], fraction of the start->end path covered
    uint8_t color[3] = {255, 255, 255};

    double center_x(int64_t t) const;
    double center_y(int64_t t) const;
    double half_width(int64_t t) const;
    double half_height(int64_t t) const;
};

struct ClipSpec {
    int64_t frames = 3;
    int64_t height = 64;
    int64_t width = 64;
    std::vector<MotionScript> instances;
};

struct InstanceTrack {
    int64_t class_id = 0;
    std::vector<uint8_t> masks;    // [T, H, W] in {0, 1}
    std::vector<double> boxes;     // [T, 4] normalized cx, cy, w, h; zeros when hidden
    std::vector<uint8_t> visible;  // [T]
};

struct VideoSample {
    int64_t frames = 0, height = 0, width = 0;
    std::vector<uint8_t> pixels;  // [T, 3, H, W]; value k means k / 255
    std::vector<InstanceTrack> instances;
    uint64_t seed = 0;

    Tensor frames_tensor(DType dtype = DType::f32) const;
    /// Instance i's masks as [T, H, W].
    Tensor mask_tensor(size_t instance, DType dtype = DType::f32) const;
};

/// Renders a clip. Instances are drawn in index order, so later ones occlude
/// earlier ones. Throws SpecError if any rendered extent is below 4 px.
VideoSample generate(const ClipSpec& spec, uint64_t seed);

enum class Attribute { fast_motion, size_change, aspect_change };

const char* attribute_name(Attribute a);
Attribute attribute_from_name(const std::string& name);

struct AttributeThresholds {
    double motion = 0.3;  // displacement >= motion * size(previous frame)
    double size = 1.5;    // max size / min size > size
    double aspect = 1.5;  // max aspect / min aspect > aspect
};

/// Boxes in pixels of one instance: [T, 4] cx, cy, w, h with visibility.
struct PixelTrack {
    std::vector<double> boxes;
    std::vector<uint8_t> visible;
};

std::set<Attribute> classify_tracks(const std::vector<PixelTrack>& tracks, const AttributeThresholds& th = {});
std::set<Attribute> classify_attributes(const VideoSample& sample, const AttributeThresholds& th = {});

/// Requested benchmark composition. Samples of kind `random` follow mild
/// motion; the attribute kinds are scripted to trigger their attribute.
struct BenchmarkSpec {
    int64_t train = 64;
    int64_t val = 32;
    int64_t fast_motion = 0;
    int64_t size_change = 0;
    int64_t aspect_change = 0;
    int64_t frames = 3;
    int64_t height = 64;
    int64_t width = 64;
    int max_instances = 3;
    uint64_t seed = 0;
};

/// Deterministic script for one sample of the given kind ("random" or an
/// attribute name) drawn from `seed`.
ClipSpec random_clip(const std::string& kind, uint64_t seed, const BenchmarkSpec& spec);

/// Builds the manifest: one entry per sample with split, kind, seed and the
/// attributes of the rendered result. Attribute samples go to both a train
/// and a val entry in equal halves (val gets the extra one when odd).
nlohmann::ordered_json make_benchmark(const BenchmarkSpec& spec);

/// Renders the sample described by a manifest entry.
VideoSample regenerate(const nlohmann::ordered_json& entry, const BenchmarkSpec& spec);

BenchmarkSpec benchmark_spec_from_json(const nlohmann::ordered_json& manifest);

/// Writes manifest.json plus one directory per sample (frame PGMs, mask
/// PGMs, sample.json). Returns the manifest.
nlohmann::ordered_json write_benchmark(const BenchmarkSpec& spec, const std::filesystem::path& out_dir);

void write_sample(const VideoSample& sample, const nlohmann::ordered_json& entry, const std::filesystem::path& dir);
VideoSample read_sample(const std::filesystem::path& dir);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, int64_t width, int64_t height, const uint8_t* data);
std::vector<uint8_t> read_pgm(const std::filesystem::path& path, int64_t& width, int64_t& height);

nlohmann::ordered_json script_to_json(const MotionScript& s);
MotionScript script_from_json(const nlohmann::ordered_json& j);

}  // namespace msts
