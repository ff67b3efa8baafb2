#include "mfn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "mfn/binary_io.hpp"
#include "mfn/error.hpp"

namespace mfn {

using detail::read_file;

const std::vector<KeyInfo>& config_keys() {
    static const std::vector<KeyInfo> keys = {
        {"architecture", KeyKind::text, "segnet", "segnet | segnet_ms | fusenet_sum | fusenet_virtual | residual_correction"},
        {"modality", KeyKind::text, "optical", "input of a single-stream model: optical | composite"},
        {"k", KeyKind::integer, "6", "number of classes"},
        {"width_scale", KeyKind::real, "1", "multiplier on the VGG-16 widths 64,128,256,512,512"},
        {"block_order", KeyKind::text, "conv_bn_relu", "conv_bn_relu | conv_relu_bn"},
        {"branches", KeyKind::integer, "3", "auxiliary heads of segnet_ms (d = 2, 4, 8)"},
        {"correction_width", KeyKind::integer, "32", "hidden width of the residual correction network"},
        {"patch_size", KeyKind::integer, "128", "sliding-window patch side"},
        {"train_stride", KeyKind::integer, "64", "window stride when extracting training patches"},
        {"test_stride", KeyKind::integer, "64", "window stride at inference"},
        {"epochs", KeyKind::integer, "20", "training epochs"},
        {"batch_size", KeyKind::integer, "10", "patches per SGD step"},
        {"base_lr", KeyKind::real, "0.01", "learning rate before the first milestone"},
        {"momentum", KeyKind::real, "0.9", "SGD momentum"},
        {"weight_decay", KeyKind::real, "0.0005", "L2 penalty on convolution weights"},
        {"milestones", KeyKind::list, "5,10,15", "epochs at which the learning rate is divided by 10"},
        {"seed", KeyKind::integer, "1", "seeds initialization, shuffling and synthetic data"},
        {"class_balance", KeyKind::flag, "on", "inverse-frequency class weights"},
        {"clutter_index", KeyKind::integer, "5", "clutter class for balancing (-1: none)"},
        {"fold", KeyKind::integer, "-1", "3-fold split: fold f validates tiles i with i mod 3 = f (-1: use all tiles)"},
        {"tiles_dir", KeyKind::text, "tiles", "directory with manifest.txt and *_optical/_composite/_label.mrt"},
        {"checkpoint", KeyKind::text, "model.mfn", "checkpoint written by train, read by predict"},
        {"log", KeyKind::text, "train.log", "per-epoch training log"},
        {"base_checkpoints", KeyKind::list, "", "residual_correction: checkpoints of the frozen base models"},
        {"encoder_init", KeyKind::text, "", "checkpoint whose encoder weights initialize training"},
        {"encoder_lr_multiplier", KeyKind::real, "0.5", "learning-rate multiplier of encoder weights copied from encoder_init"},
        {"predictions_dir", KeyKind::text, "predictions", "output of predict, input of evaluate"},
        {"output_head", KeyKind::text, "full", "map written by predict: full | head | x2 | x4 | x8"},
        {"report", KeyKind::text, "report.txt", "metrics or gradient-check report"},
        {"erosion_radius", KeyKind::integer, "3", "border erosion radius in pixels (0: none)"},
        {"synth_tiles", KeyKind::integer, "8", "number of synthetic tiles"},
        {"synth_size", KeyKind::integer, "256", "synthetic tile side (multiple of 32)"},
        {"gradcheck_tolerance", KeyKind::real, "0.001", "maximum relative error"},
        {"gradcheck_step", KeyKind::real, "0.0001", "central-difference step (double precision)"},
        {"gradcheck_samples", KeyKind::integer, "64", "end-to-end model: sampled elements per tensor (0: all)"},
    };
    return keys;
}

namespace {

const KeyInfo* find_key(const std::string& key) {
    for (const auto& k : config_keys())
        if (key == k.key) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_int(const std::string& s, long long& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end && !s.empty();
}

bool parse_real(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t used = 0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        return false;
    }
    return used == s.size() && std::isfinite(out);
}

bool parse_flag(const std::string& s, bool& out) {
    if (s == "on" || s == "true" || s == "1" || s == "yes") return out = true, true;
    if (s == "off" || s == "false" || s == "0" || s == "no") return out = false, true;
    return false;
}

void validate(const KeyInfo& k, const std::string& v) {
    long long i;
    double d;
    bool b;
    switch (k.kind) {
    case KeyKind::integer:
        if (!parse_int(v, i)) throw ConfigError(std::string(k.key) + ": expected an integer, got '" + v + "'");
        break;
    case KeyKind::real:
        if (!parse_real(v, d)) throw ConfigError(std::string(k.key) + ": expected a number, got '" + v + "'");
        break;
    case KeyKind::flag:
        if (!parse_flag(v, b)) throw ConfigError(std::string(k.key) + ": expected on/off, got '" + v + "'");
        break;
    case KeyKind::text:
    case KeyKind::list:
        break;
    }
}

} // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const KeyInfo* k = find_key(key);
    if (!k) throw ConfigError("unknown config key '" + key + "'");
    validate(*k, value);
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

long long RunConfig::integer(const std::string& key) const {
    long long v = 0;
    if (!parse_int(get(key), v)) throw ConfigError(key + ": not an integer");
    return v;
}

double RunConfig::real(const std::string& key) const {
    double v = 0;
    if (!parse_real(get(key), v)) throw ConfigError(key + ": not a number");
    return v;
}

bool RunConfig::flag(const std::string& key) const {
    bool v = false;
    if (!parse_flag(get(key), v)) throw ConfigError(key + ": not on/off");
    return v;
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

RunConfig parse_config(const std::string& text, RunConfig cfg) {
    std::stringstream ss(text);
    std::string line;
    int number = 0;
    while (std::getline(ss, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
        try {
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(number) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
        std::string key = a.substr(2);
        std::string value;
        if (auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key.erase(eq);
        } else {
            if (i + 1 >= args.size()) throw ConfigError("missing value for --" + key);
            value = args[++i];
        }
        cfg.set(key, value);
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.key) + " = " + cfg.get(k.key) + "\n";
    return out;
}

} // namespace mfn
