#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "msts/errors.h"
#include "msts/trainer.h"

namespace msts {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

/// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

struct Value {
    std::string key;
    std::string text;
    int line = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("line " + std::to_string(line) + " (" + key + "): " + what);
    }

    double number() const {
        try {
            size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) fail("expected a number, got '" + text + "'");
            return v;
        } catch (const std::logic_error&) {
            fail("expected a number, got '" + text + "'");
        }
    }
    int64_t integer() const {
        const double v = number();
        if (v != static_cast<double>(static_cast<int64_t>(v))) fail("expected an integer, got '" + text + "'");
        return static_cast<int64_t>(v);
    }
    uint64_t unsigned_integer() const {
        if (text.empty() || !std::all_of(text.begin(), text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
            fail("expected a non-negative integer, got '" + text + "'");
        return std::stoull(text);
    }
    bool boolean() const {
        if (text == "true") return true;
        if (text == "false") return false;
        fail("expected true or false, got '" + text + "'");
    }
    std::string string() const {
        if (text.size() < 2 || text.front() != '"' || text.back() != '"') fail("expected a quoted string");
        return text.substr(1, text.size() - 2);
    }
    std::vector<std::string> items() const {
        if (text.size() < 2 || text.front() != '[' || text.back() != ']') fail("expected a [list]");
        std::vector<std::string> out;
        std::stringstream ss(text.substr(1, text.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    std::vector<int64_t> integers() const {
        std::vector<int64_t> out;
        for (const auto& s : items()) out.push_back(Value{key, s, line}.integer());
        return out;
    }
    std::vector<uint64_t> unsigned_integers() const {
        std::vector<uint64_t> out;
        for (const auto& s : items()) out.push_back(Value{key, s, line}.unsigned_integer());
        return out;
    }
};

using Setter = std::function<void(TrainConfig&, const Value&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"profile", [](TrainConfig& c, const Value& v) { c.profile = v.string(); }},
        {"seed", [](TrainConfig& c, const Value& v) { c.seed = v.unsigned_integer(); }},
        {"epochs", [](TrainConfig& c, const Value& v) { c.epochs = v.integer(); }},
        {"batch_size", [](TrainConfig& c, const Value& v) { c.batch_size = v.integer(); }},
        {"lr", [](TrainConfig& c, const Value& v) { c.lr = v.number(); }},
        {"beta1", [](TrainConfig& c, const Value& v) { c.beta1 = v.number(); }},
        {"beta2", [](TrainConfig& c, const Value& v) { c.beta2 = v.number(); }},
        {"eps", [](TrainConfig& c, const Value& v) { c.eps = v.number(); }},
        {"weight_decay", [](TrainConfig& c, const Value& v) { c.weight_decay = v.number(); }},
        {"backbone_lr_mult", [](TrainConfig& c, const Value& v) { c.backbone_lr_mult = v.number(); }},
        {"lr_drops", [](TrainConfig& c, const Value& v) { c.lr_drops = v.integers(); }},
        {"lr_drop_factor", [](TrainConfig& c, const Value& v) { c.lr_drop_factor = v.number(); }},
        {"grad_clip", [](TrainConfig& c, const Value& v) { c.grad_clip = v.number(); }},
        {"disc_lr_mult", [](TrainConfig& c, const Value& v) { c.disc_lr_mult = v.number(); }},
        {"adv_weight", [](TrainConfig& c, const Value& v) { c.adv_weight = v.number(); }},
        {"lambda1", [](TrainConfig& c, const Value& v) { c.lambda1 = v.number(); }},
        {"ms_sts", [](TrainConfig& c, const Value& v) { c.model.ms_sts = v.boolean(); }},
        {"t_dec", [](TrainConfig& c, const Value& v) { c.model.temporal_decoder = v.boolean(); }},
        {"fgbg_loss", [](TrainConfig& c, const Value& v) { c.fgbg_loss = v.boolean(); }},
        {"progressive", [](TrainConfig& c, const Value& v) { c.model.progressive = v.boolean(); }},
        {"cross_all_levels", [](TrainConfig& c, const Value& v) { c.model.cross_all_levels = v.boolean(); }},
        {"frames", [](TrainConfig& c, const Value& v) { c.model.frames = v.integer(); }},
        {"channels", [](TrainConfig& c, const Value& v) { c.model.channels = v.integer(); }},
        {"levels", [](TrainConfig& c, const Value& v) { c.model.levels = static_cast<int>(v.integer()); }},
        {"layers", [](TrainConfig& c, const Value& v) { c.model.layers = static_cast<int>(v.integer()); }},
        {"queries", [](TrainConfig& c, const Value& v) { c.model.queries = v.integer(); }},
        {"classes", [](TrainConfig& c, const Value& v) { c.model.classes = v.integer(); }},
        {"image_height", [](TrainConfig& c, const Value& v) { c.model.image_height = v.integer(); }},
        {"image_width", [](TrainConfig& c, const Value& v) { c.model.image_width = v.integer(); }},
        {"mlp_ratio", [](TrainConfig& c, const Value& v) { c.model.mlp_ratio = v.integer(); }},
        {"heads", [](TrainConfig& c, const Value& v) { c.model.heads = static_cast<int>(v.integer()); }},
        {"fusion_kernel", [](TrainConfig& c, const Value& v) { c.model.fusion_kernel = v.integer(); }},
        {"mask_channels", [](TrainConfig& c, const Value& v) { c.model.mask_channels = v.integer(); }},
        {"stem_widths", [](TrainConfig& c, const Value& v) { c.model.stem_widths = v.integers(); }},
        {"cost_class", [](TrainConfig& c, const Value& v) { c.match.cls = v.number(); }},
        {"cost_l1", [](TrainConfig& c, const Value& v) { c.match.l1 = v.number(); }},
        {"cost_dice", [](TrainConfig& c, const Value& v) { c.match.dice = v.number(); }},
        {"loss_class", [](TrainConfig& c, const Value& v) { c.loss.cls = v.number(); }},
        {"loss_l1", [](TrainConfig& c, const Value& v) { c.loss.l1 = v.number(); }},
        {"loss_mask", [](TrainConfig& c, const Value& v) { c.loss.mask = v.number(); }},
        {"loss_dice", [](TrainConfig& c, const Value& v) { c.loss.dice = v.number(); }},
        {"no_object_weight", [](TrainConfig& c, const Value& v) { c.loss.no_object = v.number(); }},
        {"train_limit", [](TrainConfig& c, const Value& v) { c.train_limit = v.integer(); }},
        {"eval_every", [](TrainConfig& c, const Value& v) { c.eval_every = v.integer(); }},
        {"data_dir", [](TrainConfig& c, const Value& v) { c.data_dir = v.string(); }},
        {"data_train", [](TrainConfig& c, const Value& v) { c.data.train = v.integer(); }},
        {"data_val", [](TrainConfig& c, const Value& v) { c.data.val = v.integer(); }},
        {"data_fast_motion", [](TrainConfig& c, const Value& v) { c.data.fast_motion = v.integer(); }},
        {"data_size_change", [](TrainConfig& c, const Value& v) { c.data.size_change = v.integer(); }},
        {"data_aspect_change", [](TrainConfig& c, const Value& v) { c.data.aspect_change = v.integer(); }},
        {"data_max_instances", [](TrainConfig& c, const Value& v) { c.data.max_instances = static_cast<int>(v.integer()); }},
        {"data_seed", [](TrainConfig& c, const Value& v) { c.data.seed = v.unsigned_integer(); }},
        {"ablation_seeds", [](TrainConfig& c, const Value& v) { c.ablation_seeds = v.unsigned_integers(); }},
    };
    return table;
}

std::string list_text(const std::vector<int64_t>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
}

std::string number_text(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(epochs >= 0, "epochs must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(lr > 0, "lr must be positive");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    require(eps > 0, "eps must be positive");
    require(weight_decay >= 0, "weight_decay must be >= 0");
    require(backbone_lr_mult >= 0 && disc_lr_mult >= 0, "lr multipliers must be >= 0");
    require(lr_drop_factor > 0, "lr_drop_factor must be positive");
    for (auto d : lr_drops) require(d >= 1, "lr_drops are 1-based epoch numbers");
    require(grad_clip >= 0, "grad_clip must be >= 0");
    require(adv_weight >= 0 && lambda1 >= 0, "adversarial weights must be >= 0");
    require(train_limit >= 0 && eval_every >= 0, "train_limit and eval_every must be >= 0");
    require(data.frames == model.frames && data.height == model.image_height && data.width == model.image_width,
            "benchmark extents must match the model config");
    require(!ablation_seeds.empty(), "ablation_seeds must not be empty");
}

TrainConfig parse_config(const std::string& text, TrainConfig cfg) {
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        Value v{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
        const auto it = setters().find(v.key);
        if (it == setters().end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + v.key + "'");
        if (!seen.insert(v.key).second) v.fail("duplicate key");
        it->second(cfg, v);
    }
    // The benchmark always renders clips of the model's extents.
    cfg.data.frames = cfg.model.frames;
    cfg.data.height = cfg.model.image_height;
    cfg.data.width = cfg.model.image_width;
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "profile = \"" << c.profile << "\"\n"
      << "seed = " << c.seed << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "lr = " << number_text(c.lr) << "\n"
      << "beta1 = " << number_text(c.beta1) << "\n"
      << "beta2 = " << number_text(c.beta2) << "\n"
      << "eps = " << number_text(c.eps) << "\n"
      << "weight_decay = " << number_text(c.weight_decay) << "\n"
      << "backbone_lr_mult = " << number_text(c.backbone_lr_mult) << "\n"
      << "lr_drops = " << list_text(c.lr_drops) << "\n"
      << "lr_drop_factor = " << number_text(c.lr_drop_factor) << "\n"
      << "grad_clip = " << number_text(c.grad_clip) << "\n"
      << "disc_lr_mult = " << number_text(c.disc_lr_mult) << "\n"
      << "adv_weight = " << number_text(c.adv_weight) << "\n"
      << "lambda1 = " << number_text(c.lambda1) << "\n"
      << "ms_sts = " << b(c.model.ms_sts) << "\n"
      << "t_dec = " << b(c.model.temporal_decoder) << "\n"
      << "fgbg_loss = " << b(c.fgbg_loss) << "\n"
      << "progressive = " << b(c.model.progressive) << "\n"
      << "cross_all_levels = " << b(c.model.cross_all_levels) << "\n"
      << "frames = " << c.model.frames << "\n"
      << "channels = " << c.model.channels << "\n"
      << "levels = " << c.model.levels << "\n"
      << "layers = " << c.model.layers << "\n"
      << "queries = " << c.model.queries << "\n"
      << "classes = " << c.model.classes << "\n"
      << "image_height = " << c.model.image_height << "\n"
      << "image_width = " << c.model.image_width << "\n"
      << "mlp_ratio = " << c.model.mlp_ratio << "\n"
      << "heads = " << c.model.heads << "\n"
      << "fusion_kernel = " << c.model.fusion_kernel << "\n"
      << "mask_channels = " << c.model.mask_channels << "\n"
      << "stem_widths = " << list_text(c.model.stem_widths) << "\n"
      << "cost_class = " << number_text(c.match.cls) << "\n"
      << "cost_l1 = " << number_text(c.match.l1) << "\n"
      << "cost_dice = " << number_text(c.match.dice) << "\n"
      << "loss_class = " << number_text(c.loss.cls) << "\n"
      << "loss_l1 = " << number_text(c.loss.l1) << "\n"
      << "loss_mask = " << number_text(c.loss.mask) << "\n"
      << "loss_dice = " << number_text(c.loss.dice) << "\n"
      << "no_object_weight = " << number_text(c.loss.no_object) << "\n"
      << "train_limit = " << c.train_limit << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "data_dir = \"" << c.data_dir << "\"\n"
      << "data_train = " << c.data.train << "\n"
      << "data_val = " << c.data.val << "\n"
      << "data_fast_motion = " << c.data.fast_motion << "\n"
      << "data_size_change = " << c.data.size_change << "\n"
      << "data_aspect_change = " << c.data.aspect_change << "\n"
      << "data_max_instances = " << c.data.max_instances << "\n"
      << "data_seed = " << c.data.seed << "\n";
    o << "ablation_seeds = [";
    for (size_t i = 0; i < c.ablation_seeds.size(); ++i) o << (i ? ", " : "") << c.ablation_seeds[i];
    o << "]\n";
    return o.str();
}

nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
    // The text form is the canonical serialization; JSON wraps it as key/value strings.
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        j[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return j;
}

TrainConfig config_from_json(const nlohmann::ordered_json& j) {
    std::string text;
    for (const auto& [k, v] : j.items()) text += k + " = " + v.get<std::string>() + "\n";
    return parse_config(text);
}

}  // namespace msts
