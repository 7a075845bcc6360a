#include "darn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "darn/binary_io.hpp"
#include "darn/error.hpp"

namespace darn {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v)) throw ConfigError("not a finite number: '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("not a non-negative integer: '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

struct Field {
    ConfigKey meta;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field uint_field(const char* key, const char* help, T RunConfig::*m) {
    return {{key, help, true},
            [m](RunConfig& c, const std::string& v) { c.*m = static_cast<T>(parse_uint(v)); },
            [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field real_field(const char* key, const char* help, double RunConfig::*m) {
    return {{key, help, true},
            [m](RunConfig& c, const std::string& v) { c.*m = parse_double(v); },
            [m](const RunConfig& c) { return fmt_double(c.*m); }};
}

Field bool_field(const char* key, const char* help, bool RunConfig::*m) {
    return {{key, help, false},
            [m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); },
            [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(uint_field("seed", "master seed for data, init and dropout noise", &RunConfig::seed));
        f.push_back(uint_field("image_size", "square input extent (multiple of 16)", &RunConfig::image_size));
        f.push_back(uint_field("in_channels", "input image channels", &RunConfig::in_channels));
        f.push_back(uint_field("num_classes", "segmentation classes K", &RunConfig::num_classes));
        f.push_back({{"encoder_widths", "four comma-separated encoder stage widths", false},
                     [](RunConfig& c, const std::string& v) {
                         std::array<std::size_t, 4> w{};
                         std::stringstream ss(v);
                         std::string item;
                         std::size_t n = 0;
                         while (std::getline(ss, item, ',')) {
                             if (n == 4) throw ConfigError("expected exactly four widths: '" + v + "'");
                             w[n++] = static_cast<std::size_t>(parse_uint(trim(item)));
                         }
                         if (n != 4) throw ConfigError("expected exactly four widths: '" + v + "'");
                         c.encoder_widths = w;
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(c.encoder_widths[i]);
                         return s;
                     }});
        f.push_back(uint_field("decoder_width", "decoder channel width D", &RunConfig::decoder_width));
        f.push_back(bool_field("frozen", "freeze the encoder (train the decoder only)", &RunConfig::frozen));
        f.push_back(bool_field("tcp", "enable the task complexity predictor", &RunConfig::tcp));
        f.push_back(bool_field("adm", "enable complexity-driven dropout (requires tcp)", &RunConfig::adm));
        f.push_back(bool_field("dcg", "enable gated channel attention", &RunConfig::dcg));
        f.push_back(real_field("fixed_p", "dropout rate when adm is off (0 disables dropout)", &RunConfig::fixed_p));
        f.push_back(real_field("p_min", "dropout rate at c = 1", &RunConfig::p_min));
        f.push_back(real_field("p_max", "dropout rate at c = 0", &RunConfig::p_max));
        f.push_back(real_field("alpha", "gate floor: alpha + (1 - alpha) c", &RunConfig::alpha));
        f.push_back(real_field("fixed_gate", "attention scale when dcg is on and tcp is off", &RunConfig::fixed_gate));
        f.push_back(bool_field("adm_per_level", "extra dropout sites after the 1/8 and 1/4 fusions",
                               &RunConfig::adm_per_level));
        f.push_back(real_field("temperature", "relaxed dropout temperature", &RunConfig::temperature));
        f.push_back(real_field("beta", "complexity regularizer weight", &RunConfig::beta));
        f.push_back(real_field("lambda_dice", "dice loss weight", &RunConfig::lambda_dice));
        f.push_back(real_field("variance_sign", "+1 penalizes Var(c), -1 rewards it", &RunConfig::variance_sign));
        f.push_back(real_field("lr", "peak learning rate", &RunConfig::lr));
        f.push_back(real_field("min_lr", "final learning rate of the cosine decay", &RunConfig::min_lr));
        f.push_back(uint_field("warmup_steps", "linear warmup length in optimizer steps", &RunConfig::warmup_steps));
        f.push_back(real_field("weight_decay", "decoupled weight decay", &RunConfig::weight_decay));
        f.push_back(bool_field("decay_biases", "apply weight decay to bias tensors", &RunConfig::decay_biases));
        f.push_back(uint_field("epochs", "maximum number of epochs", &RunConfig::epochs));
        f.push_back(uint_field("batch_size", "samples per optimizer step", &RunConfig::batch_size));
        f.push_back(uint_field("patience", "early stopping: epochs without validation improvement",
                               &RunConfig::patience));
        f.push_back(uint_field("dataset.count", "training scenes", &RunConfig::dataset_count));
        f.push_back(uint_field("dataset.val_count", "validation scenes", &RunConfig::dataset_val_count));
        f.push_back(real_field("dataset.complex_fraction", "probability that a scene is complex",
                               &RunConfig::dataset_complex_fraction));
        f.push_back({{"out_dir", "output directory (DARN_OUT_DIR overrides)", false},
                     [](RunConfig& c, const std::string& v) {
                         if (v.empty()) throw ConfigError("out_dir must not be empty");
                         c.out_dir = v;
                     },
                     [](const RunConfig& c) { return c.out_dir; }});
        return f;
    }();
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.meta.key == key) return &f;
    return nullptr;
}

}  // namespace

DecoderConfig RunConfig::decoder_config() const {
    DecoderConfig d;
    d.in_widths = encoder_widths;
    d.width = decoder_width;
    d.num_classes = num_classes;
    d.tcp = tcp;
    d.adm = adm;
    d.dcg = dcg;
    d.fixed_p = fixed_p;
    d.p_min = p_min;
    d.p_max = p_max;
    d.alpha = alpha;
    d.temperature = temperature;
    d.fixed_gate = fixed_gate;
    d.adm_per_level = adm_per_level;
    return d;
}

AdamWConfig RunConfig::optimizer_config() const {
    AdamWConfig a;
    a.weight_decay = weight_decay;
    a.decay_biases = decay_biases;
    return a;
}

LossWeights RunConfig::loss_weights() const { return {beta, lambda_dice, variance_sign}; }

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& f : fields()) k.push_back(f.meta);
        return k;
    }();
    return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    try {
        f->set(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    return f->get(cfg);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::vector<std::string> problems;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) {
            problems.push_back(where + "expected key=value, got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            set_config_value(base, key, value);
        } catch (const ConfigError& e) {
            problems.push_back(where + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid config (" + std::to_string(problems.size()) + " problem" +
                          (problems.size() == 1 ? "" : "s") + "):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
    return base;
}

RunConfig load_config(const std::string& path) {
    const auto bytes = io::read_file(path);
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string format_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.meta.key + "=" + f.get(cfg) + "\n";
    return out;
}

void validate(const RunConfig& cfg) {
    std::vector<std::string> problems;
    if (cfg.image_size == 0 || cfg.image_size % 16 != 0) problems.push_back("image_size must be a positive multiple of 16");
    if (cfg.in_channels == 0) problems.push_back("in_channels must be positive");
    if (cfg.num_classes < 2 || cfg.num_classes > 6) problems.push_back("num_classes must lie in 2..6");
    for (auto w : cfg.encoder_widths)
        if (w == 0) problems.push_back("encoder_widths must be positive");
    if (cfg.decoder_width == 0) problems.push_back("decoder_width must be positive");
    if (cfg.adm && !cfg.tcp) problems.push_back("adm requires tcp");
    if (!(cfg.fixed_p >= 0.0 && cfg.fixed_p < 1.0)) problems.push_back("fixed_p must lie in [0,1)");
    if (!(cfg.p_min > 0.0 && cfg.p_min <= cfg.p_max && cfg.p_max < 1.0)) problems.push_back("require 0 < p_min <= p_max < 1");
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) problems.push_back("alpha must lie in [0,1]");
    if (!(cfg.temperature > 0.0)) problems.push_back("temperature must be positive");
    if (cfg.beta < 0.0) problems.push_back("beta must be non-negative");
    if (cfg.lambda_dice < 0.0) problems.push_back("lambda_dice must be non-negative");
    if (cfg.lr < 0.0 || cfg.min_lr < 0.0) problems.push_back("learning rates must be non-negative");
    if (cfg.weight_decay < 0.0) problems.push_back("weight_decay must be non-negative");
    if (cfg.batch_size == 0) problems.push_back("batch_size must be positive");
    if (cfg.dataset_count == 0) problems.push_back("dataset.count must be positive");
    if (cfg.dataset_val_count == 0) problems.push_back("dataset.val_count must be positive");
    if (!(cfg.dataset_complex_fraction >= 0.0 && cfg.dataset_complex_fraction <= 1.0)) {
        problems.push_back("dataset.complex_fraction must lie in [0,1]");
    }
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
}

void apply_environment(RunConfig& cfg) {
    if (const char* dir = std::getenv("DARN_OUT_DIR"); dir && *dir) cfg.out_dir = dir;
}

}  // namespace darn
