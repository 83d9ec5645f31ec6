#pragma once

#include "timepd/forecaster.hpp"
#include "timepd/training.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace timepd {

struct DataSection {
    std::size_t lookback = 96;
    std::size_t horizon = 24;
    std::array<double, 3> split{0.6, 0.2, 0.2};
    std::string date_column;        // empty: a leading "date" column is detected
    double target_fraction = 0.3;   // applies to the adapt phase only
    bool random_subsample = false;
    std::uint64_t subsample_seed = 0;
};

struct ModelSection {
    std::size_t patch_len = 16;
    std::size_t stride = 8;
    std::size_t n_blocks = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t embed_dim = 16;
    std::size_t k_trend = 25;
    double decomp_dropout = 0.1;
    bool instance_norm = true;
    std::uint64_t init_seed = 0;
};

struct InvarianceSection {
    bool enabled = true;
    double mask_percentile = 50.0;
    std::string grad_mode = "first_order";
    double hvp_eps = 1e-4;
    std::size_t k_cut = 0;
    double lambda_inv = 1.0;
    double lambda_pred = 1.0;
    double lambda_rep = 0.125;
    double lambda_grad = 0.5;
};

struct ProxySection {
    double correction_strength = 0.5;
    double temperature = 1.0;
    double lambda_kd = 0.001;
    bool confidence_scales_kd = false;
    bool kd_flow_through = false;
};

struct TrainSection {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;
    std::size_t batch_size = 32;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    bool strict_unsupervised = false;
};

struct OutputSection {
    bool write_steps = true;    // report.jsonl
    bool write_timing = true;   // timing.json (wall-clock kept out of summary.json)
};

/// Sectioned run configuration. Every key has a default; unknown keys are rejected.
struct RunConfig {
    DataSection data;
    ModelSection model;
    InvarianceSection invariance;
    ProxySection proxy;
    TrainSection train;
    OutputSection output;

    void validate() const;
    TrainConfig train_config() const;
    ForecasterConfig forecaster_config(std::size_t channels) const;
};

/// One documented key.
struct ConfigKey {
    std::string section;
    std::string name;
    std::string help;
    std::string provenance;  // where the default comes from
};

const std::vector<ConfigKey>& config_keys();
/// Human-readable listing of every key, its default and provenance.
std::string config_help();

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults. Throws ConfigError naming the offending key.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Throws ConfigError with the byte offset on malformed JSON.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

} // namespace timepd
