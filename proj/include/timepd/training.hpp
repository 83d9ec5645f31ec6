#pragma once

#include "timepd/forecaster.hpp"
#include "timepd/invariance.hpp"
#include "timepd/proxy.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace timepd {

struct LossWeights {
    double inv = 1.0;
    double pred = 1.0;
    double rep = 0.125;
    double grad = 0.5;
    double kd = 0.001;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    LossWeights weights;
    AdamConfig adam;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;  // 0: no cap
    std::size_t batch_size = 32;
    std::size_t patience = 3;   // epochs without val improvement; 0 disables early stopping
    std::uint64_t seed = 0;

    bool invariance = true;     // IDFL terms; off leaves the plain forecasting loss
    double mask_percentile = 50.0;
    GradAlignMode grad_mode = GradAlignMode::first_order;
    double hvp_eps = 1e-4;
    std::size_t k_cut = 0;      // 0: max(1, floor(H / 40))

    double correction_strength = 0.5;
    double temperature = 1.0;
    bool confidence_scales_kd = false;
    bool kd_flow_through = false;
    bool strict_unsupervised = false;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

/// Component values of one step.
struct LossComponents {
    double loss = 0.0;
    double inv = 0.0;
    double pred = 0.0;
    double rep = 0.0;
    double grad = 0.0;
    double kd = 0.0;
};

/// L + l_inv L_inv + l_pred L_pred + l_rep L_rep + l_grad L_grad + kd_weight L_kd.
double total_loss(const LossComponents& c, const LossWeights& w, double kd_weight);
inline double total_loss(const LossComponents& c, const LossWeights& w) { return total_loss(c, w, w.kd); }

Var kd_loss(Var z_denoised, Var z_target);

/// Adam with bias correction. Frozen parameters are skipped.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}
    /// Applies one update from Parameter::grad.
    void step(const std::vector<Parameter*>& params);
    std::size_t steps() const { return t_; }

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    AdamConfig config_;
    std::size_t t_ = 0;
    std::unordered_map<const Parameter*, Moments> state_;
};

/// Masks and frequency targets of one step. Computed from parameter values
/// and then held fixed (they sit behind stop-gradients).
struct StepTargets {
    bool ready = false;
    InvarianceMask seasonal;
    InvarianceMask trend;
    Tensor s_prime;
    Tensor t_prime;
    std::optional<Tensor> pseudo_label;  // stop-gradient KD target
};

/// Knowledge-distillation inputs for one batch.
struct KdInputs {
    Tensor z_proxy;
    Tensor z_source;
    double alpha = 0.5;
    double weight = 0.0;  // effective lambda_kd of this step
    bool flow_through = false;
};

struct ObjectiveSpec {
    LossWeights weights;
    PassSeeds seeds;
    bool invariance = true;
    bool strict_unsupervised = false;
    double mask_percentile = 50.0;
    std::size_t k_cut = 1;
    const KdInputs* kd = nullptr;
};

/// Differentiable part of L_all for one batch. L_grad is not on the graph.
struct Objective {
    Var loss, inv, pred, rep, kd;
    Var weighted;        // every term except lambda_grad * L_grad
    Var z_target;        // deterministic prediction (the KD student output)
    Tensor embedding;    // embedding value of the batch
    InstanceStats stats;
};

/// Builds the step objective on bind's tape. `targets` is filled on first use and reused afterwards.
Objective build_objective(DualBranchForecaster& model, Binding& bind, const Batch& batch, const ObjectiveSpec& spec,
                          StepTargets& targets);

struct StepRecord {
    std::string phase;
    std::size_t epoch = 0;
    std::size_t step = 0;
    LossComponents components;
    double all = 0.0;
    double kd_weight = 0.0;
    double proxy_error = 0.0;
    double confidence = 1.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean L_all over the epoch
    double val_mse = 0.0;
    bool improved = false;
};

struct TrainReport {
    std::string phase;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
    double initial_proxy_error = 0.0;  // e_0
    double initial_confidence = 1.0;   // C_0
    std::optional<Metrics> test;
    double wall_seconds = 0.0;

    /// One JSON object per step.
    void write_steps(const std::filesystem::path& path) const;
    /// Deterministic summary (no wall-clock).
    nlohmann::json summary() const;
};

nlohmann::json to_json(const StepRecord& r);

/// One optimizer step on `model`; returns the logged record (phase/epoch/step left to the caller).
StepRecord train_step(DualBranchForecaster& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                      std::uint64_t step_seed, const KdInputs* kd);

/// Trains on the train split with the IDFL terms and no KD; early stopping on
/// validation MSE restores the best parameters.
TrainReport pretrain_source(DualBranchForecaster& model, const SeriesDataset& train, const SeriesDataset* val,
                            const TrainConfig& config);

struct AdaptResult {
    DualBranchForecaster target;
    TrainReport report;
};

/// Target model initialised from the source, then trained with the IDFL terms
/// plus distillation towards the denoised proxy. Source and proxy are read only.
AdaptResult adapt_target(const DualBranchForecaster& source, const Proxy& proxy, const SeriesDataset& train,
                         const SeriesDataset* val, const TrainConfig& config);

} // namespace timepd
