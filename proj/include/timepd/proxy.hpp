#pragma once

#include "timepd/forecaster.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace timepd {

/// Signed source-target residual z_s - z_t.
Tensor residual(const Tensor& z_source, const Tensor& z_target);

/// z_proxy - alpha * (z_s - z_t), alpha in [0, 1]. alpha = 0 returns the proxy unchanged.
Tensor denoise(const Tensor& z_proxy, const Tensor& z_source, const Tensor& z_target, double alpha);

/// Mean over samples (leading axis) of the L2 norm of each sample's residual.
double proxy_error(const Tensor& z_source, const Tensor& z_target);

/// exp(-e / tau), never below the smallest positive normal double.
double confidence(double error, double tau);

/// Frozen forecaster whose predictions guide adaptation. Outputs are in the
/// dataset-normalized space of the target domain.
class Proxy {
public:
    virtual ~Proxy() = default;
    /// series [B x l x C] -> [B x H x C]; window_ids identify each row of the batch.
    virtual Tensor predict(const Tensor& series, std::span<const std::size_t> window_ids) const = 0;
    virtual std::string describe() const = 0;
};

/// Wraps a pretrained forecaster; the wrapped parameters are frozen.
class ModelProxy final : public Proxy {
public:
    explicit ModelProxy(DualBranchForecaster model);
    static std::unique_ptr<ModelProxy> load(const std::filesystem::path& checkpoint);

    Tensor predict(const Tensor& series, std::span<const std::size_t> window_ids) const override;
    std::string describe() const override;
    const DualBranchForecaster& model() const { return model_; }

private:
    DualBranchForecaster model_;
};

/// Replays predictions stored on disk, keyed by window id.
///
/// CSV layout: header `window,step,<channel>...`, then one row per
/// (window, horizon step) with steps 0..H-1 for every window listed.
class FileProxy final : public Proxy {
public:
    FileProxy(std::map<std::size_t, Tensor> predictions, std::size_t horizon, std::size_t channels,
              std::string source = "memory");
    static std::unique_ptr<FileProxy> load(const std::filesystem::path& path);

    Tensor predict(const Tensor& series, std::span<const std::size_t> window_ids) const override;
    std::string describe() const override;
    std::size_t horizon() const { return horizon_; }
    std::size_t channels() const { return channels_; }
    std::size_t size() const { return predictions_.size(); }

private:
    std::map<std::size_t, Tensor> predictions_;  // [H x C] per window
    std::size_t horizon_;
    std::size_t channels_;
    std::string source_;
};

/// Writes predictions [B x H x C] in the FileProxy layout.
void write_proxy_file(const std::filesystem::path& path, std::span<const std::size_t> window_ids,
                      const Tensor& predictions, const std::vector<std::string>& channel_names);

} // namespace timepd
