#include "timepd/proxy.hpp"

#include "timepd/error.hpp"

#include <cfloat>
#include <cmath>

namespace timepd {

Tensor residual(const Tensor& z_source, const Tensor& z_target) {
    require_same_shape(z_source, z_target, "residual");
    Tensor out(z_source.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_source[i] - z_target[i];
    return out;
}

Tensor denoise(const Tensor& z_proxy, const Tensor& z_source, const Tensor& z_target, double alpha) {
    require_same_shape(z_proxy, z_source, "denoise");
    require_same_shape(z_proxy, z_target, "denoise");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("correction_strength must lie in [0, 1]");
    if (alpha == 0.0) return z_proxy;
    Tensor out(z_proxy.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_proxy[i] - alpha * (z_source[i] - z_target[i]);
    return out;
}

double proxy_error(const Tensor& z_source, const Tensor& z_target) {
    require_same_shape(z_source, z_target, "proxy_error");
    if (z_source.rank() == 0 || z_source.dim(0) == 0 || z_source.empty()) throw Error("proxy_error: empty batch");
    const std::size_t B = z_source.dim(0);
    const std::size_t per = z_source.size() / B;
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            const double d = z_source[b * per + k] - z_target[b * per + k];
            acc += d * d;
        }
        total += std::sqrt(acc);
    }
    return total / static_cast<double>(B);
}

double confidence(double error, double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
    if (!(error >= 0.0)) throw Error("confidence: error must be non-negative");
    return std::max(std::exp(-error / tau), DBL_MIN);
}

ModelProxy::ModelProxy(DualBranchForecaster model) : model_(std::move(model)) { model_.set_frozen(true); }

std::unique_ptr<ModelProxy> ModelProxy::load(const std::filesystem::path& checkpoint) {
    return std::make_unique<ModelProxy>(load_checkpoint(checkpoint));
}

Tensor ModelProxy::predict(const Tensor& series, std::span<const std::size_t>) const { return model_.predict(series); }

std::string ModelProxy::describe() const {
    return "model proxy (" + std::to_string(model_.parameter_count()) + " parameters)";
}

FileProxy::FileProxy(std::map<std::size_t, Tensor> predictions, std::size_t horizon, std::size_t channels,
                     std::string source)
    : predictions_(std::move(predictions)), horizon_(horizon), channels_(channels), source_(std::move(source)) {
    for (const auto& [id, block] : predictions_) {
        if (block.shape() != Shape{horizon_, channels_}) {
            throw ShapeError("file proxy: window " + std::to_string(id) + " has shape " + to_string(block.shape()));
        }
    }
}

std::unique_ptr<FileProxy> FileProxy::load(const std::filesystem::path& path) {
    const RawSeries table = load_csv(path, std::nullopt);
    if (table.channels() < 3 || table.channel_names[0] != "window" || table.channel_names[1] != "step") {
        throw DataError(path.string() + ": proxy file needs columns window,step,<channel>...");
    }
    const std::size_t C = table.channels() - 2;
    std::map<std::size_t, std::vector<std::pair<std::size_t, std::vector<double>>>> rows;
    for (std::size_t r = 0; r < table.length(); ++r) {
        const double w = table.at(r, 0), s = table.at(r, 1);
        if (w < 0 || s < 0 || w != std::floor(w) || s != std::floor(s)) {
            throw DataError(path.string() + ": row " + std::to_string(r + 1) + ": window and step must be non-negative integers");
        }
        std::vector<double> vals(C);
        for (std::size_t c = 0; c < C; ++c) vals[c] = table.at(r, c + 2);
        rows[static_cast<std::size_t>(w)].emplace_back(static_cast<std::size_t>(s), std::move(vals));
    }
    const std::size_t H = rows.begin()->second.size();
    std::map<std::size_t, Tensor> predictions;
    for (auto& [id, steps] : rows) {
        if (steps.size() != H) {
            throw DataError(path.string() + ": window " + std::to_string(id) + " has " + std::to_string(steps.size()) +
                            " steps, expected " + std::to_string(H));
        }
        Tensor block({H, C});
        std::vector<bool> seen(H, false);
        for (auto& [step, vals] : steps) {
            if (step >= H || seen[step]) {
                throw DataError(path.string() + ": window " + std::to_string(id) + " has a bad or repeated step " +
                                std::to_string(step));
            }
            seen[step] = true;
            for (std::size_t c = 0; c < C; ++c) block[step * C + c] = vals[c];
        }
        predictions.emplace(id, std::move(block));
    }
    return std::make_unique<FileProxy>(std::move(predictions), H, C, path.string());
}

Tensor FileProxy::predict(const Tensor& series, std::span<const std::size_t> window_ids) const {
    if (series.rank() != 3 || series.dim(0) != window_ids.size()) {
        throw ShapeError("file proxy: batch of " + to_string(series.shape()) + " with " +
                         std::to_string(window_ids.size()) + " window ids");
    }
    if (series.dim(2) != channels_) {
        throw ShapeError("file proxy: stores " + std::to_string(channels_) + " channels, batch has " +
                         std::to_string(series.dim(2)));
    }
    Tensor out({window_ids.size(), horizon_, channels_});
    const std::size_t per = horizon_ * channels_;
    for (std::size_t b = 0; b < window_ids.size(); ++b) {
        auto it = predictions_.find(window_ids[b]);
        if (it == predictions_.end()) {
            throw DataError("file proxy " + source_ + ": no prediction for window " + std::to_string(window_ids[b]));
        }
        std::copy(it->second.data().begin(), it->second.data().end(), out.data().begin() + b * per);
    }
    return out;
}

std::string FileProxy::describe() const {
    return "file proxy " + source_ + " (" + std::to_string(predictions_.size()) + " windows)";
}

void write_proxy_file(const std::filesystem::path& path, std::span<const std::size_t> window_ids,
                      const Tensor& predictions, const std::vector<std::string>& channel_names) {
    if (predictions.rank() != 3 || predictions.dim(0) != window_ids.size() || predictions.dim(2) != channel_names.size()) {
        throw ShapeError("write_proxy_file: predictions " + to_string(predictions.shape()) + " do not match ids/channels");
    }
    const std::size_t H = predictions.dim(1), C = predictions.dim(2);
    RawSeries table;
    table.channel_names = {"window", "step"};
    table.channel_names.insert(table.channel_names.end(), channel_names.begin(), channel_names.end());
    table.values = Tensor({window_ids.size() * H, C + 2});
    for (std::size_t b = 0; b < window_ids.size(); ++b)
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t r = b * H + h;
            table.values[r * (C + 2)] = static_cast<double>(window_ids[b]);
            table.values[r * (C + 2) + 1] = static_cast<double>(h);
            for (std::size_t c = 0; c < C; ++c) table.values[r * (C + 2) + 2 + c] = predictions[(b * H + h) * C + c];
        }
    write_csv(table, path);
}

} // namespace timepd
