#include "timepd/data.hpp"

#include "timepd/error.hpp"
#include "timepd/log.hpp"
#include "timepd/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace timepd {

namespace {

std::string trim(std::string_view s) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return fields;
}

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace

RawSeries load_csv(const std::filesystem::path& path, const std::optional<std::string>& date_column) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const auto header = split_fields(line);
    if (header.empty() || (header.size() == 1 && header[0].empty())) {
        throw DataError(path.string() + ": missing header row");
    }

    std::optional<std::size_t> date_index;
    if (date_column) {
        auto it = std::find(header.begin(), header.end(), *date_column);
        if (it == header.end()) throw DataError(path.string() + ": no column named '" + *date_column + "'");
        date_index = static_cast<std::size_t>(it - header.begin());
    } else if (lower(header[0]) == "date") {
        date_index = 0;
    }

    RawSeries series;
    std::vector<std::size_t> channel_columns;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (date_index && i == *date_index) continue;
        channel_columns.push_back(i);
        series.channel_names.push_back(header[i]);
    }
    if (channel_columns.empty()) throw DataError(path.string() + ": no numeric channel columns");

    std::vector<double> values;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, header has " +
                            std::to_string(header.size()));
        }
        for (std::size_t k = 0; k < channel_columns.size(); ++k) {
            const std::string& cell = fields[channel_columns[k]];
            double v = 0.0;
            if (!parse_double(cell, v)) {
                throw DataError(path.string() + ": row " + std::to_string(row) + ", column '" +
                                series.channel_names[k] + "': non-numeric value '" + cell + "'");
            }
            values.push_back(v);
        }
        if (date_index) series.timestamps.push_back(fields[*date_index]);
    }
    if (row == 0) throw DataError(path.string() + ": no data rows");
    series.values = Tensor(Shape{row, channel_columns.size()}, std::move(values));
    return series;
}

void write_csv(const RawSeries& series, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    const bool dated = !series.timestamps.empty();
    if (dated && series.timestamps.size() != series.length()) {
        throw DataError("write_csv: timestamp count does not match row count");
    }
    if (dated) out << "date";
    for (std::size_t c = 0; c < series.channels(); ++c) {
        if (dated || c) out << ',';
        out << series.channel_names.at(c);
    }
    out << '\n';
    for (std::size_t t = 0; t < series.length(); ++t) {
        if (dated) out << series.timestamps[t];
        for (std::size_t c = 0; c < series.channels(); ++c) {
            if (dated || c) out << ',';
            out << format_double(series.at(t, c));
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

const char* to_string(Role role) {
    switch (role) {
        case Role::train: return "train";
        case Role::val: return "val";
        case Role::test: return "test";
    }
    return "?";
}

Role role_from_string(const std::string& name) {
    if (name == "train") return Role::train;
    if (name == "val") return Role::val;
    if (name == "test") return Role::test;
    throw DataError("unknown split '" + name + "' (expected train, val or test)");
}

std::array<RoleRange, 3> split(std::size_t total_length, std::array<double, 3> ratios) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw DataError("split ratios must be finite and non-negative");
        total += r;
    }
    if (!(total > 0.0)) throw DataError("split ratios sum to zero");
    // The epsilon absorbs representation error such as 10 * 0.6 = 5.999...
    auto floor_share = [&](double r) {
        return static_cast<std::size_t>(std::floor(static_cast<long double>(total_length) * r / total + 1e-9L));
    };
    const std::size_t n_train = floor_share(ratios[0]);
    const std::size_t n_val = floor_share(ratios[1]);
    if (n_train + n_val > total_length) throw DataError("split ratios exceed series length");
    std::array<RoleRange, 3> out{RoleRange{0, n_train}, RoleRange{n_train, n_train + n_val},
                                 RoleRange{n_train + n_val, total_length}};
    for (std::size_t i = 0; i < 3; ++i) {
        if (out[i].length() == 0) {
            throw DataError(std::string("split '") + to_string(static_cast<Role>(i)) +
                            "' is empty for series length " + std::to_string(total_length));
        }
    }
    return out;
}

Normalizer Normalizer::fit(const RawSeries& series, RoleRange range) {
    if (range.end > series.length() || range.length() == 0) throw DataError("normalizer: invalid fit range");
    const std::size_t C = series.channels();
    Normalizer n;
    n.mean.assign(C, 0.0);
    n.stddev.assign(C, 0.0);
    const double count = static_cast<double>(range.length());
    for (std::size_t c = 0; c < C; ++c) {
        double mu = 0.0;
        for (std::size_t t = range.begin; t < range.end; ++t) mu += series.at(t, c);
        mu /= count;
        double var = 0.0;
        for (std::size_t t = range.begin; t < range.end; ++t) var += (series.at(t, c) - mu) * (series.at(t, c) - mu);
        var /= count;
        n.mean[c] = mu;
        n.stddev[c] = std::sqrt(var);
        if (!(n.stddev[c] > 0.0)) {
            logger()->warn("channel {} is constant on the training split; using stddev 1",
                           c < series.channel_names.size() ? series.channel_names[c] : std::to_string(c));
            n.stddev[c] = 1.0;
        }
    }
    return n;
}

Tensor Normalizer::normalize(const Tensor& values) const {
    const std::size_t C = channels();
    if (values.rank() == 0 || values.dim(values.rank() - 1) != C) {
        throw ShapeError("normalize: last axis must have " + std::to_string(C) + " channels");
    }
    Tensor out(values.shape());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean[i % C]) / stddev[i % C];
    return out;
}

Tensor Normalizer::denormalize(const Tensor& values) const {
    const std::size_t C = channels();
    if (values.rank() == 0 || values.dim(values.rank() - 1) != C) {
        throw ShapeError("denormalize: last axis must have " + std::to_string(C) + " channels");
    }
    Tensor out(values.shape());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * stddev[i % C] + mean[i % C];
    return out;
}

SeriesDataset::SeriesDataset(Tensor rows, std::size_t lookback, std::size_t horizon, Role role,
                             Normalizer normalizer, std::vector<std::size_t> window_ids)
    : rows_(std::move(rows)),
      lookback_(lookback),
      horizon_(horizon),
      role_(role),
      normalizer_(std::move(normalizer)),
      window_ids_(std::move(window_ids)) {
    const std::size_t n_rows = rows_.rank() == 2 ? rows_.dim(0) : 0;
    for (std::size_t id : window_ids_) {
        if (id + lookback_ + horizon_ > n_rows) throw DataError("window id out of range");
    }
}

Tensor SeriesDataset::x(std::size_t i) const {
    const std::size_t C = channels();
    const std::size_t start = window_id(i) * C;
    return Tensor(Shape{lookback_, C}, std::vector<double>(rows_.values().begin() + static_cast<std::ptrdiff_t>(start),
                                                           rows_.values().begin() + static_cast<std::ptrdiff_t>(start + lookback_ * C)));
}

Tensor SeriesDataset::y(std::size_t i) const {
    const std::size_t C = channels();
    const std::size_t start = (window_id(i) + lookback_) * C;
    return Tensor(Shape{horizon_, C}, std::vector<double>(rows_.values().begin() + static_cast<std::ptrdiff_t>(start),
                                                          rows_.values().begin() + static_cast<std::ptrdiff_t>(start + horizon_ * C)));
}

Batch SeriesDataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t C = channels();
    const std::size_t B = indices.size();
    Batch b;
    b.x = Tensor(Shape{B, lookback_, C});
    b.y = Tensor(Shape{B, horizon_, C});
    const auto& rows = rows_.values();
    for (std::size_t k = 0; k < B; ++k) {
        const std::size_t id = window_id(indices[k]);
        std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(id * C), lookback_ * C,
                    b.x.data().begin() + static_cast<std::ptrdiff_t>(k * lookback_ * C));
        std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>((id + lookback_) * C), horizon_ * C,
                    b.y.data().begin() + static_cast<std::ptrdiff_t>(k * horizon_ * C));
        b.window_ids.push_back(id);
    }
    return b;
}

Batch SeriesDataset::all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
}

SeriesDataset SeriesDataset::select(std::span<const std::size_t> positions) const {
    std::vector<std::size_t> ids;
    ids.reserve(positions.size());
    for (std::size_t p : positions) ids.push_back(window_id(p));
    return SeriesDataset(rows_, lookback_, horizon_, role_, normalizer_, std::move(ids));
}

SeriesDataset make_windows(const RawSeries& series, std::size_t lookback, std::size_t horizon, RoleRange range,
                           const Normalizer& normalizer, Role role) {
    if (lookback == 0 || horizon == 0) throw DataError("look-back and horizon must be at least 1");
    if (range.end > series.length() || range.begin > range.end) throw DataError("role range outside the series");
    if (range.length() < lookback + horizon) {
        throw DataError(std::string(to_string(role)) + " range too short: " + std::to_string(range.length()) +
                        " rows < look-back " + std::to_string(lookback) + " + horizon " + std::to_string(horizon));
    }
    const std::size_t C = series.channels();
    Tensor raw(Shape{range.length(), C},
               std::vector<double>(series.values.values().begin() + static_cast<std::ptrdiff_t>(range.begin * C),
                                   series.values.values().begin() + static_cast<std::ptrdiff_t>(range.end * C)));
    const std::size_t count = range.length() - lookback - horizon + 1;
    std::vector<std::size_t> ids(count);
    for (std::size_t i = 0; i < count; ++i) ids[i] = i;
    return SeriesDataset(normalizer.normalize(raw), lookback, horizon, role, normalizer, std::move(ids));
}

SeriesDataset subsample_target(const SeriesDataset& dataset, double fraction, std::uint64_t seed, bool random) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw DataError("target fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    const std::size_t n = dataset.size();
    const auto keep = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fraction - 1e-9)));
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    if (random) {
        Rng rng(seed);
        for (std::size_t i = n; i > 1; --i) std::swap(positions[i - 1], positions[rng.below(i)]);
        positions.resize(keep);
        std::sort(positions.begin(), positions.end());
    } else {
        positions.resize(keep);
    }
    return dataset.select(positions);
}

const SeriesDataset& DomainData::get(Role role) const {
    switch (role) {
        case Role::train: return train;
        case Role::val: return val;
        case Role::test: return test;
    }
    return test;
}

DomainData build_domain(const RawSeries& series, std::size_t lookback, std::size_t horizon,
                        std::array<double, 3> ratios) {
    if (series.length() < 3 * (lookback + horizon)) {
        logger()->warn("series length {} is below 3 * (look-back + horizon) = {}", series.length(),
                       3 * (lookback + horizon));
    }
    DomainData d;
    d.ranges = split(series.length(), ratios);
    d.normalizer = Normalizer::fit(series, d.ranges[0]);
    d.train = make_windows(series, lookback, horizon, d.ranges[0], d.normalizer, Role::train);
    d.val = make_windows(series, lookback, horizon, d.ranges[1], d.normalizer, Role::val);
    d.test = make_windows(series, lookback, horizon, d.ranges[2], d.normalizer, Role::test);
    return d;
}

RawSeries synth_generate(const SynthSpec& spec) {
    if (spec.length == 0 || spec.channels == 0) throw DataError("synthetic series needs length and channels >= 1");
    if (!(spec.season_period >= 2.0)) throw DataError("season period must be >= 2");
    if (!(spec.noise_std >= 0.0)) throw DataError("noise_std must be non-negative");
    if (spec.trend_slopes.size() != 1 && spec.trend_slopes.size() != spec.channels) {
        throw DataError("trend_slopes must have one entry or one per channel");
    }
    if (!spec.phases.empty() && spec.phases.size() != spec.channels) {
        throw DataError("phases must be empty or have one entry per channel");
    }
    RawSeries series;
    series.values = Tensor(Shape{spec.length, spec.channels});
    for (std::size_t c = 0; c < spec.channels; ++c) series.channel_names.push_back("ch" + std::to_string(c));
    Rng rng(spec.seed);
    for (std::size_t t = 0; t < spec.length; ++t) {
        for (std::size_t c = 0; c < spec.channels; ++c) {
            const double slope = spec.trend_slopes.size() == 1 ? spec.trend_slopes[0] : spec.trend_slopes[c];
            const double phase = spec.phases.empty() ? 0.0 : spec.phases[c];
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / spec.season_period + phase;
            double v = slope * static_cast<double>(t) + spec.season_amplitude * std::sin(angle);
            if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
            series.values[t * spec.channels + c] = v;
        }
    }
    return series;
}

RawSeries synth_regimes(const SynthSpec& spec, const std::vector<double>& segment_slopes,
                        std::size_t segment_length) {
    if (segment_slopes.empty() || segment_length == 0) throw DataError("synth_regimes needs segments");
    SynthSpec flat = spec;
    flat.length = segment_slopes.size() * segment_length;
    flat.trend_slopes = {0.0};
    RawSeries series = synth_generate(flat);
    double level = 0.0;
    for (std::size_t t = 0; t < flat.length; ++t) {
        for (std::size_t c = 0; c < flat.channels; ++c) series.values[t * flat.channels + c] += level;
        level += segment_slopes[t / segment_length];
    }
    return series;
}

} // namespace timepd
