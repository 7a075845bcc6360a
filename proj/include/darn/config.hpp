#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "darn/decoder.hpp"
#include "darn/objectives.hpp"
#include "darn/optim.hpp"

namespace darn {

// Flat experiment configuration. Parsed from `key=value` lines; unknown
// keys are rejected.
struct RunConfig {
    std::uint64_t seed = 42;
    std::size_t image_size = 32;
    std::size_t in_channels = 3;
    std::size_t num_classes = 3;
    std::array<std::size_t, 4> encoder_widths{16, 32, 64, 128};
    std::size_t decoder_width = 64;
    bool frozen = true;

    bool tcp = true;
    bool adm = true;
    bool dcg = true;
    double fixed_p = 0.3;
    double p_min = 0.1;
    double p_max = 0.5;
    double alpha = 0.3;
    double fixed_gate = 1.0;
    bool adm_per_level = false;
    double temperature = 0.1;

    double beta = 0.05;
    double lambda_dice = 1.0;
    double variance_sign = 1.0;

    double lr = 1e-4;
    double min_lr = 0.0;
    std::size_t warmup_steps = 256;
    double weight_decay = 0.05;
    bool decay_biases = true;
    std::size_t epochs = 20;
    std::size_t batch_size = 4;
    std::size_t patience = 10;

    std::size_t dataset_count = 512;
    std::size_t dataset_val_count = 128;
    double dataset_complex_fraction = 0.5;

    std::string out_dir = "runs/darn";

    DecoderConfig decoder_config() const;
    AdamWConfig optimizer_config() const;
    LossWeights loss_weights() const;
};

struct ConfigKey {
    std::string key;
    std::string help;
    bool numeric;
};

// Every accepted key, in file order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError listing every offending line/key.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path);

// Applies one override; throws ConfigError for an unknown key or bad value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// key=value lines for every key (round-trips through parse_config).
std::string format_config(const RunConfig& cfg);

// Cross-field checks (adm needs tcp, p range, image size multiple of 16, ...).
void validate(const RunConfig& cfg);

// DARN_OUT_DIR, when set, replaces cfg.out_dir.
void apply_environment(RunConfig& cfg);

}  // namespace darn
