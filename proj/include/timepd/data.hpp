#pragma once

#include "timepd/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace timepd {

/// Multivariate series as loaded from disk: values [L_total x C].
struct RawSeries {
    Tensor values;
    std::vector<std::string> channel_names;
    std::vector<std::string> timestamps;  // empty when the file has no date column

    std::size_t length() const { return values.rank() == 2 ? values.dim(0) : 0; }
    std::size_t channels() const { return values.rank() == 2 ? values.dim(1) : 0; }
    double at(std::size_t t, std::size_t c) const { return values[t * channels() + c]; }
};

/// Reads a headered CSV. The date column is `date_column` when given,
/// otherwise a leading column named "date" (any case) if present. Every other
/// column is a numeric channel, in file order.
RawSeries load_csv(const std::filesystem::path& path, const std::optional<std::string>& date_column = {});

/// Writes values with round-trip precision; a date column is emitted when
/// timestamps are present.
void write_csv(const RawSeries& series, const std::filesystem::path& path);

enum class Role { train, val, test };
const char* to_string(Role role);
Role role_from_string(const std::string& name);

/// Half-open row range [begin, end).
struct RoleRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
    friend bool operator==(const RoleRange&, const RoleRange&) = default;
};

/// Chronological train/val/test ranges. Train and val sizes are floored,
/// the remainder goes to test.
std::array<RoleRange, 3> split(std::size_t total_length, std::array<double, 3> ratios);

/// Per-channel z-score statistics.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    /// Fits on rows of `range`. Constant channels get stddev 1 (with a warning).
    static Normalizer fit(const RawSeries& series, RoleRange range);

    /// Works on any tensor whose last axis is the channel axis.
    Tensor normalize(const Tensor& values) const;
    Tensor denormalize(const Tensor& values) const;
    std::size_t channels() const { return mean.size(); }
};

/// A mini-batch: x [B x l x C], y [B x H x C], and each window's id.
struct Batch {
    Tensor x;
    Tensor y;
    std::vector<std::size_t> window_ids;
    std::size_t size() const { return window_ids.size(); }
};

/// Stride-1 look-back/horizon windows over one role range of a normalized
/// series. Immutable once built.
class SeriesDataset {
public:
    SeriesDataset() = default;
    SeriesDataset(Tensor rows, std::size_t lookback, std::size_t horizon, Role role, Normalizer normalizer,
                  std::vector<std::size_t> window_ids);

    std::size_t size() const { return window_ids_.size(); }
    bool empty() const { return window_ids_.empty(); }
    std::size_t lookback() const { return lookback_; }
    std::size_t horizon() const { return horizon_; }
    std::size_t channels() const { return rows_.rank() == 2 ? rows_.dim(1) : 0; }
    Role role() const { return role_; }
    const Normalizer& normalizer() const { return normalizer_; }

    /// Window ids index the full window list of the role range; subsampling keeps them.
    std::size_t window_id(std::size_t i) const { return window_ids_.at(i); }
    const std::vector<std::size_t>& window_ids() const { return window_ids_; }

    Tensor x(std::size_t i) const;
    Tensor y(std::size_t i) const;
    Batch batch(std::span<const std::size_t> indices) const;
    /// Every window, in order.
    Batch all() const;

    /// Keeps windows at the given positions (in the given order).
    SeriesDataset select(std::span<const std::size_t> positions) const;

private:
    Tensor rows_;  // normalized rows of the role range [n x C]
    std::size_t lookback_ = 0;
    std::size_t horizon_ = 0;
    Role role_ = Role::train;
    Normalizer normalizer_;
    std::vector<std::size_t> window_ids_;
};

/// Windows x = rows[t-l+1..t], y = rows[t+1..t+H] fully inside `range`,
/// normalized with `normalizer`. Count = range length - l - H + 1.
SeriesDataset make_windows(const RawSeries& series, std::size_t lookback, std::size_t horizon, RoleRange range,
                           const Normalizer& normalizer, Role role);

/// Keeps the chronologically first ceil(fraction * n) windows, or a seeded
/// random subset (kept in chronological order) when `random` is set.
SeriesDataset subsample_target(const SeriesDataset& dataset, double fraction, std::uint64_t seed,
                               bool random = false);

/// Train/val/test datasets sharing train-split statistics.
struct DomainData {
    Normalizer normalizer;
    std::array<RoleRange, 3> ranges;
    SeriesDataset train;
    SeriesDataset val;
    SeriesDataset test;

    const SeriesDataset& get(Role role) const;
};

DomainData build_domain(const RawSeries& series, std::size_t lookback, std::size_t horizon,
                        std::array<double, 3> ratios);

/// values[t, c] = slope_c * t + amplitude * sin(2 pi t / period + phase_c) + N(0, noise_std^2).
struct SynthSpec {
    std::size_t length = 0;
    std::size_t channels = 1;
    std::vector<double> trend_slopes{0.0};  // one per channel, or a single shared value
    double season_period = 24.0;
    double season_amplitude = 1.0;
    std::vector<double> phases{};           // optional, one per channel
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

RawSeries synth_generate(const SynthSpec& spec);

/// Pooled multi-domain series: `spec` with its trend replaced by a continuous
/// piecewise-linear one whose slope is segment_slopes[i] on rows
/// [i * segment_length, (i + 1) * segment_length). spec.length is ignored.
RawSeries synth_regimes(const SynthSpec& spec, const std::vector<double>& segment_slopes,
                        std::size_t segment_length);

} // namespace timepd
