#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msts/attention.h"
#include "msts/errors.h"
#include "msts/grad_cases.h"
#include "msts/heads.h"
#include "msts/trainer.h"

namespace py = pybind11;
using namespace msts;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, DType dt) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()), dt);
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

template <typename T>
py::array_t<T> bytes_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
    py::array_t<T> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

MaskSeq to_mask(const py::array& a) {
    auto b = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
    if (!b) throw py::type_error("mask must be array-like");
    return MaskSeq(b.data(), b.data() + b.size());
}

py::dict sample_dict(const VideoSample& s) {
    py::dict d;
    d["frames"] = bytes_array(s.pixels, {s.frames, 3, s.height, s.width});
    py::list insts;
    for (const auto& i : s.instances) {
        py::dict e;
        e["class_id"] = i.class_id;
        e["masks"] = bytes_array(i.masks, {s.frames, s.height, s.width});
        e["boxes"] = bytes_array(i.boxes, {s.frames, 4});
        e["visible"] = bytes_array(i.visible, {s.frames});
        insts.append(e);
    }
    d["instances"] = insts;
    std::vector<std::string> attrs;
    for (auto a : classify_attributes(s)) attrs.emplace_back(attribute_name(a));
    d["attributes"] = attrs;
    return d;
}

/// Python-visible model: wraps a VisModel built from config text.
class PyModel {
public:
    PyModel(const std::string& config_text, uint64_t seed) {
        cfg_ = parse_config(config_text);
        cfg_.seed = seed;
        cfg_.validate();
        model_ = make_model(cfg_);
    }
    explicit PyModel(LoadedCheckpoint ck) : cfg_(ck.config), model_(std::move(ck.model)) {}

    py::dict forward(const Array& frames) const {
        NoGradGuard guard;
        const ModelOutput out = model_->forward(to_tensor(frames, model_->params().dtype()));
        py::dict d;
        d["class_logits"] = to_array(out.predictions.class_logits);
        d["boxes"] = to_array(out.predictions.boxes);
        d["mask_logits"] = to_array(out.predictions.mask_logits);
        return d;
    }
    int64_t param_count() const { return model_->params().count(); }
    int64_t disc_param_count() const { return model_->disc_params().count(); }
    std::string config_text() const { return msts::config_to_text(cfg_); }
    void save(const std::string& path) const { save_checkpoint(path, *model_, cfg_); }

private:
    TrainConfig cfg_;
    std::unique_ptr<VisModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for the msts C++ core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

    m.def(
        "attention_flops",
        [](int64_t frames, const std::vector<int64_t>& positions, int64_t channels) {
            const AttentionFlops f = attention_flops(frames, positions, channels);
            return py::dict(py::arg("intra") = f.intra, py::arg("inter") = f.inter, py::arg("split") = f.split,
                            py::arg("joint") = f.joint);
        },
        py::arg("frames"), py::arg("positions"), py::arg("channels"));

    m.def(
        "intra_scale_attention",
        [](const Array& z, uint64_t seed) {
            ParamSet ps(DType::f64, seed);
            const auto p = AttentionParams::make(ps, "a", static_cast<int64_t>(z.shape(2)));
            Tensor w;
            Tensor out = intra_scale_attention(to_tensor(z, DType::f64), p, &w);
            return py::make_tuple(to_array(out), to_array(w));
        },
        py::arg("z"), py::arg("seed") = 0, "Intra-scale block on [S, T, C] with seeded weights; returns (out, weights).");

    m.def(
        "inter_scale_attention",
        [](const Array& h, uint64_t seed) {
            ParamSet ps(DType::f64, seed);
            const auto p = AttentionParams::make(ps, "a", static_cast<int64_t>(h.shape(2)));
            Tensor w;
            Tensor out = inter_scale_attention(to_tensor(h, DType::f64), p, &w);
            return py::make_tuple(to_array(out), to_array(w));
        },
        py::arg("h"), py::arg("seed") = 0, "Inter-scale block on [S, T, C] with seeded weights; returns (out, weights).");

    m.def(
        "solve_assignment",
        [](const Array& cost) {
            if (cost.ndim() != 2) throw py::value_error("cost must be 2-D");
            const Assignment a = solve_assignment(std::vector<double>(cost.data(), cost.data() + cost.size()),
                                                  cost.shape(0), cost.shape(1));
            return py::make_tuple(a.query_of_gt, a.total_cost);
        },
        py::arg("cost"), "Minimum-cost assignment of rows to distinct columns; returns (columns, total).");

    m.def(
        "video_iou", [](const py::array& a, const py::array& b) { return video_iou(to_mask(a), to_mask(b)); },
        py::arg("a"), py::arg("b"));

    m.def(
        "compute_ap",
        [](const py::list& videos) {
            std::vector<EvalVideo> vs;
            for (const auto& item : videos) {
                const auto v = item.cast<py::dict>();
                EvalVideo ev;
                for (const auto& p : v["predictions"].cast<py::list>()) {
                    const auto d = p.cast<py::dict>();
                    ev.predictions.push_back(
                        {d["class_id"].cast<int64_t>(), d["score"].cast<double>(), to_mask(d["masks"].cast<py::array>())});
                }
                for (const auto& g : v["ground_truth"].cast<py::list>()) {
                    const auto d = g.cast<py::dict>();
                    ev.ground_truth.push_back({d["class_id"].cast<int64_t>(), to_mask(d["masks"].cast<py::array>())});
                }
                if (v.contains("attributes"))
                    for (const auto& a : v["attributes"].cast<std::vector<std::string>>())
                        ev.attributes.insert(attribute_from_name(a));
                vs.push_back(std::move(ev));
            }
            return compute_ap(vs).to_json().dump();
        },
        py::arg("videos"), "Scores videos given as dicts; returns the metrics as JSON text.");

    m.def(
        "random_sample",
        [](const std::string& kind, uint64_t seed, int64_t frames, int64_t height, int64_t width, int max_instances) {
            BenchmarkSpec spec;
            spec.frames = frames;
            spec.height = height;
            spec.width = width;
            spec.max_instances = max_instances;
            return sample_dict(generate(random_clip(kind, seed, spec), seed));
        },
        py::arg("kind") = "random", py::arg("seed") = 0, py::arg("frames") = 3, py::arg("height") = 64,
        py::arg("width") = 64, py::arg("max_instances") = 3);

    m.def(
        "make_benchmark",
        [](const std::string& spec_json) {
            return make_benchmark(benchmark_spec_from_json(nlohmann::ordered_json::parse(spec_json))).dump();
        },
        py::arg("spec_json"), "Manifest (JSON text) for a benchmark spec given as JSON text.");

    m.def(
        "check_grad",
        [](const std::string& module, int trials) {
            const GradReport rep = check_grad(grad_cases_for(module), trials, 0);
            return py::make_tuple(rep.passed(), rep.to_text());
        },
        py::arg("module") = "", py::arg("trials") = 1);

    m.def(
        "bench", [](const std::string& grid) { return bench(parse_bench_grid(grid)); }, py::arg("grid_csv"));

    m.def(
        "train",
        [](const std::string& config_text, const std::string& out_dir, const std::string& data_dir) {
            const TrainConfig cfg = parse_config(config_text);
            const std::string dir = data_dir.empty() ? cfg.data_dir : data_dir;
            const Dataset data = dir.empty() ? build_dataset(cfg.data) : load_dataset(dir);
            TrainOutcome out;
            {
                py::gil_scoped_release release;
                out = train(cfg, data, out_dir);
            }
            return out.val.to_json().dump();
        },
        py::arg("config_text"), py::arg("out_dir"), py::arg("data_dir") = "",
        "Trains and returns validation metrics as JSON text.");

    m.def("config_text", [](const std::string& text) { return config_to_text(parse_config(text)); }, py::arg("text"),
          "Normalized full config for the given overrides.");

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&, uint64_t>(), py::arg("config_text") = "", py::arg("seed") = 0)
        .def_static("load", [](const std::string& path) { return PyModel(load_checkpoint(path)); }, py::arg("path"))
        .def("forward", &PyModel::forward, py::arg("frames"), "frames [T, 3, H, W] in [0, 1]")
        .def("param_count", &PyModel::param_count)
        .def("disc_param_count", &PyModel::disc_param_count)
        .def("config_text", &PyModel::config_text)
        .def("save", &PyModel::save, py::arg("path"));
}
