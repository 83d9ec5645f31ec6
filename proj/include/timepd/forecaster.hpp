#pragma once

#include "timepd/autodiff.hpp"
#include "timepd/data.hpp"
#include "timepd/decomposition.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace timepd {

/// Patch-attention forecaster geometry.
struct TsfeConfig {
    std::size_t lookback = 96;
    std::size_t horizon = 24;
    std::size_t channels = 1;
    std::size_t patch_len = 16;
    std::size_t stride = 8;
    std::size_t n_blocks = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;

    /// Throws ConfigError on an inconsistent geometry.
    void validate() const;
    /// floor((lookback - patch_len) / stride) + 1
    std::size_t n_patches() const;
};

struct ForecasterConfig {
    TsfeConfig tsfe;
    std::size_t embed_dim = 16;
    std::size_t k_trend = 25;       // moving-average window of the decomposition block
    double decomp_dropout = 0.1;
    bool instance_norm = true;      // per-window mean/std removed before embedding, restored on output

    void validate() const;
};

void to_json(nlohmann::json& j, const TsfeConfig& c);
void from_json(const nlohmann::json& j, TsfeConfig& c);
void to_json(nlohmann::json& j, const ForecasterConfig& c);
void from_json(const nlohmann::json& j, ForecasterConfig& c);

enum class BranchKind { trend, seasonal };
const char* to_string(BranchKind kind);

/// Per-window statistics [B x 1 x C] used by instance normalization.
struct InstanceStats {
    Tensor mean;
    Tensor stddev;
};

/// Everything one forward pass produces. Branch outputs are already mapped
/// back to the (dataset-normalized) input scale.
struct ForwardPass {
    Var embedding;
    ComponentVars components;
    Var trend;
    Var seasonal;
    Var prediction;  // trend + seasonal
};

class DualBranchForecaster {
public:
    DualBranchForecaster() = default;
    DualBranchForecaster(ForecasterConfig config, std::uint64_t init_seed);

    const ForecasterConfig& config() const { return config_; }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Parameter*> branch_parameters(BranchKind kind);
    Parameter& parameter(const std::string& name);
    const Parameter& parameter(const std::string& name) const;
    /// Total number of scalars.
    std::size_t parameter_count() const;

    /// Same geometry required; afterwards every parameter is bit-equal to `other`.
    void copy_from(const DualBranchForecaster& other);
    void set_frozen(bool frozen);
    bool all_frozen() const;

    InstanceStats instance_stats(const Tensor& series) const;
    /// (series - mean) / stddev per window and channel.
    Tensor normalize_input(const Tensor& series, const InstanceStats& stats) const;
    /// series [B x l x C] -> embedding [B x l x E]
    Var embed(Binding& bind, Var series);
    /// Branch network on an embedded component: z [B x H x C] in instance-normalized scale.
    /// The flattened patch features before the head are returned through `latent`.
    Var branch(Binding& bind, BranchKind kind, Var component, Var* latent = nullptr);
    /// Maps a raw branch output back to the input scale (the trend branch carries the mean).
    Var restore_scale(BranchKind kind, Var z, const InstanceStats& stats) const;
    /// branch + restore_scale
    Var branch_output(Binding& bind, BranchKind kind, Var component, const InstanceStats& stats);

    /// Normalize, embed, decompose (with decomposition dropout when a seed is given), forecast.
    ForwardPass forward(Binding& bind, const Tensor& series, std::optional<std::uint64_t> dropout_seed = {});
    /// Deterministic forward on a scratch tape.
    Tensor predict(const Tensor& series) const;
    /// Branch latent of the deterministic decomposition [B x N*d_model].
    Tensor latent(BranchKind kind, const Tensor& series) const;

private:
    struct Block {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo, norm1_gamma, norm1_beta, w1, b1, w2, b2, norm2_gamma, norm2_beta;
    };
    struct Branch {
        std::size_t patch_w, patch_b, pos, head_w, head_b;
        std::vector<Block> blocks;
        std::size_t first = 0, last = 0;  // parameter index range [first, last)
    };

    std::size_t add_parameter(const std::string& name, Tensor value);
    Branch build_branch(const std::string& prefix, std::uint64_t seed);
    const Branch& branch_of(BranchKind kind) const {
        return kind == BranchKind::trend ? trend_ : seasonal_;
    }
    Var block(Binding& bind, const Block& b, Var h);

    ForecasterConfig config_;
    std::vector<Parameter> params_;
    std::size_t embed_w_ = 0, embed_b_ = 0;
    Branch trend_{}, seasonal_{};
};

/// MSE of the summed branch outputs against the ground truth.
Var forecasting_loss(Var z_trend, Var z_seasonal, Var truth);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

Metrics metrics(const Tensor& prediction, const Tensor& truth);

/// Test metrics in the original data scale, accumulated over every window.
Metrics evaluate(const DualBranchForecaster& model, const SeriesDataset& dataset, std::size_t batch_size = 64);

/// Same, for any prediction function taking a batch.
Metrics evaluate(const std::function<Tensor(const Batch&)>& predict, const SeriesDataset& dataset,
                 std::size_t batch_size = 64);

nlohmann::json checkpoint_json(const DualBranchForecaster& model);
DualBranchForecaster model_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(const DualBranchForecaster& model, const std::filesystem::path& path);
DualBranchForecaster load_checkpoint(const std::filesystem::path& path);

} // namespace timepd
