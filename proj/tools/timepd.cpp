// timepd command-line tool: pretrain, adapt, eval, predict, decompose, report, synth.

#include "timepd/config.hpp"
#include "timepd/data.hpp"
#include "timepd/decomposition.hpp"
#include "timepd/error.hpp"
#include "timepd/log.hpp"
#include "timepd/proxy.hpp"
#include "timepd/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace timepd;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

std::optional<std::string> date_column(const RunConfig& c) {
    if (c.data.date_column.empty()) return std::nullopt;
    return c.data.date_column;
}

fs::path prepare_out(const std::string& dir) {
    fs::path out(dir);
    fs::create_directories(out);
    // Fail early on read-only targets instead of after a long training run.
    const fs::path probe = out / ".timepd_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw DataError("I/O error: output directory " + out.string() + " is not writable");
    }
    fs::remove(probe);
    return out;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("I/O error: cannot write " + path.string());
    f << j.dump(2) << "\n";
    if (!f) throw DataError("I/O error: write failed for " + path.string());
}

json metrics_json(const Metrics& m) { return {{"mse", m.mse}, {"mae", m.mae}}; }

void write_outputs(const RunConfig& cfg, const fs::path& out, const DualBranchForecaster& model, TrainReport& report,
                   json summary) {
    save_checkpoint(model, out / "model.ckpt");
    if (cfg.output.write_steps) report.write_steps(out / "report.jsonl");
    save_run_config(cfg, out / "config.json");
    write_json(summary, out / "summary.json");
    if (cfg.output.write_timing) {
        const double per_step = report.steps.empty() ? 0.0 : report.wall_seconds / report.steps.size();
        write_json({{"wall_seconds", report.wall_seconds}, {"steps", report.steps.size()}, {"seconds_per_step", per_step}},
                   out / "timing.json");
    }
}

struct PretrainArgs {
    std::string config, data, out;
};

int cmd_pretrain(const PretrainArgs& a) {
    const RunConfig cfg = config_or_default(a.config);
    const RawSeries raw = load_csv(a.data, date_column(cfg));
    const DomainData d = build_domain(raw, cfg.data.lookback, cfg.data.horizon, cfg.data.split);
    const fs::path out = prepare_out(a.out);

    DualBranchForecaster model(cfg.forecaster_config(raw.channels()), cfg.model.init_seed);
    logger()->info("pretrain: {} train windows, {} parameters", d.train.size(), model.parameter_count());
    TrainReport report = pretrain_source(model, d.train, &d.val, cfg.train_config());
    report.config = to_json(cfg);
    report.test = evaluate(model, d.test);
    logger()->info("pretrain: test mse {:.6f} mae {:.6f}", report.test->mse, report.test->mae);
    write_outputs(cfg, out, model, report, report.summary());
    return kOk;
}

struct AdaptArgs {
    std::string config, source_ckpt, proxy_ckpt, proxy_file, data, out;
};

int cmd_adapt(const AdaptArgs& a) {
    if (a.proxy_ckpt.empty() == a.proxy_file.empty()) {
        throw UsageError("adapt needs exactly one proxy: --proxy-ckpt <model.ckpt> or --proxy-file <predictions.csv>");
    }
    const RunConfig cfg = config_or_default(a.config);
    const DualBranchForecaster source = load_checkpoint(a.source_ckpt);
    std::unique_ptr<Proxy> proxy;
    if (!a.proxy_ckpt.empty())
        proxy = ModelProxy::load(a.proxy_ckpt);
    else
        proxy = FileProxy::load(a.proxy_file);

    const auto& geo = source.config().tsfe;
    if (geo.lookback != cfg.data.lookback || geo.horizon != cfg.data.horizon) {
        throw ConfigError("data.lookback/horizon (" + std::to_string(cfg.data.lookback) + "/" +
                          std::to_string(cfg.data.horizon) + ") do not match the source checkpoint (" +
                          std::to_string(geo.lookback) + "/" + std::to_string(geo.horizon) + ")");
    }
    const RawSeries raw = load_csv(a.data, date_column(cfg));
    const DomainData d = build_domain(raw, cfg.data.lookback, cfg.data.horizon, cfg.data.split);
    const SeriesDataset train =
        subsample_target(d.train, cfg.data.target_fraction, cfg.data.subsample_seed, cfg.data.random_subsample);
    const fs::path out = prepare_out(a.out);

    logger()->info("adapt: {} of {} target train windows, proxy {}", train.size(), d.train.size(), proxy->describe());
    AdaptResult result = adapt_target(source, *proxy, train, &d.val, cfg.train_config());
    TrainReport& report = result.report;
    report.config = to_json(cfg);
    report.test = evaluate(result.target, d.test);
    json summary = report.summary();
    summary["source_zero_shot_test"] = metrics_json(evaluate(source, d.test));
    summary["proxy"] = proxy->describe();
    summary["train_windows"] = train.size();
    logger()->info("adapt: target test mse {:.6f} (source zero-shot {:.6f})", report.test->mse,
                   summary["source_zero_shot_test"]["mse"].get<double>());
    write_outputs(cfg, out, result.target, report, std::move(summary));
    return kOk;
}

struct EvalArgs {
    std::string config, ckpt, data, split = "test", out;
};

const SeriesDataset& split_of(const DomainData& d, const std::string& name) { return d.get(role_from_string(name)); }

int cmd_eval(const EvalArgs& a) {
    const RunConfig cfg = config_or_default(a.config);
    const DualBranchForecaster model = load_checkpoint(a.ckpt);
    const auto& geo = model.config().tsfe;
    const RawSeries raw = load_csv(a.data, date_column(cfg));
    const DomainData d = build_domain(raw, geo.lookback, geo.horizon, cfg.data.split);
    const json m = metrics_json(evaluate(model, split_of(d, a.split)));
    std::cout << m.dump() << "\n";
    if (!a.out.empty()) {
        fs::create_directories(fs::path(a.out).parent_path().empty() ? fs::path(".") : fs::path(a.out).parent_path());
        write_json(m, a.out);
    }
    return kOk;
}

struct PredictArgs {
    std::string config, ckpt, data, split = "train", out;
};

int cmd_predict(const PredictArgs& a) {
    const RunConfig cfg = config_or_default(a.config);
    const DualBranchForecaster model = load_checkpoint(a.ckpt);
    const auto& geo = model.config().tsfe;
    const RawSeries raw = load_csv(a.data, date_column(cfg));
    const DomainData d = build_domain(raw, geo.lookback, geo.horizon, cfg.data.split);
    const Batch all = split_of(d, a.split).all();
    write_proxy_file(a.out, all.window_ids, model.predict(all.x), raw.channel_names);
    return kOk;
}

struct DecomposeArgs {
    std::string config, data, method = "ma", out;
    std::size_t k = 25;
};

int cmd_decompose(const DecomposeArgs& a) {
    const RunConfig cfg = config_or_default(a.config);
    const RawSeries raw = load_csv(a.data, date_column(cfg));
    const std::size_t L = raw.length(), C = raw.channels();
    const Tensor x = raw.values.reshaped({1, L, C});
    ComponentPair parts;
    if (a.method == "ma")
        parts = decompose(x, a.k);
    else if (a.method == "dft")
        parts = fourier_split(x, a.k);
    else
        throw UsageError("--method must be ma or dft");
    const fs::path out = prepare_out(a.out);

    RawSeries seasonal = raw, trend = raw, recon = raw;
    seasonal.values = parts.seasonal.reshaped({L, C});
    trend.values = parts.trend.reshaped({L, C});
    for (std::size_t i = 0; i < L * C; ++i) {
        recon.values[i] = std::abs(seasonal.values[i] + trend.values[i] - raw.values[i]);
    }
    write_csv(seasonal, out / "seasonal.csv");
    write_csv(trend, out / "trend.csv");
    write_csv(recon, out / "reconstruction.csv");
    double worst = 0.0;
    for (double v : recon.values.data()) worst = std::max(worst, v);
    std::cout << json{{"method", a.method}, {"k", a.k}, {"max_reconstruction_error", worst}}.dump() << "\n";
    return kOk;
}

struct ReportArgs {
    std::string report, out;
};

int cmd_report(const ReportArgs& a) {
    std::ifstream in(a.report);
    if (!in) throw DataError("cannot open " + a.report);
    const fs::path out = prepare_out(a.out);
    std::ofstream curves(out / "loss_curves.csv"), proxy(out / "proxy_confidence.csv");
    if (!curves || !proxy) throw DataError("I/O error: cannot write under " + out.string());
    curves << "step,L,L_inv,L_pred,L_rep,L_grad,L_kd,L_all,e_t,C_t\n";
    proxy << "step,e_t,C_t\n";
    curves.precision(17);
    proxy.precision(17);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json r;
        try {
            r = json::parse(line);
            curves << r.at("step").get<std::size_t>() << ',' << r.at("loss").get<double>() << ','
                   << r.at("inv").get<double>() << ',' << r.at("pred").get<double>() << ','
                   << r.at("rep").get<double>() << ',' << r.at("grad").get<double>() << ','
                   << r.at("kd").get<double>() << ',' << r.at("all").get<double>() << ','
                   << r.at("e_t").get<double>() << ',' << r.at("C_t").get<double>() << '\n';
            proxy << r.at("step").get<std::size_t>() << ',' << r.at("e_t").get<double>() << ','
                  << r.at("C_t").get<double>() << '\n';
        } catch (const json::exception& e) {
            throw DataError(a.report + ": line " + std::to_string(row) + ": " + e.what());
        }
    }
    if (!curves || !proxy) throw DataError("I/O error: write failed under " + out.string());
    return kOk;
}

struct SynthArgs {
    std::string out;
    std::size_t length = 1000, channels = 1, segment_length = 0;
    std::vector<double> slopes{0.0};
    double period = 24.0, amplitude = 1.0, noise = 0.1;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    SynthSpec spec{.length = a.length, .channels = a.channels, .trend_slopes = a.slopes, .season_period = a.period,
                   .season_amplitude = a.amplitude, .noise_std = a.noise, .seed = a.seed};
    const RawSeries s = a.segment_length ? synth_regimes(spec, a.slopes, a.segment_length) : synth_generate(spec);
    const fs::path target(a.out);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    write_csv(s, target);
    return kOk;
}

int run(int argc, char** argv) {
    CLI::App app{"Source-free time-series domain adaptation with invariant disentangled features and proxy denoising"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    const std::string footer = config_help();

    PretrainArgs pa;
    auto* pre = app.add_subcommand("pretrain", "train the source model");
    pre->add_option("--config", pa.config, "run config (JSON)");
    pre->add_option("--data", pa.data, "source CSV")->required();
    pre->add_option("--out", pa.out, "output directory")->required();
    pre->footer(footer);

    AdaptArgs aa;
    auto* adapt = app.add_subcommand("adapt", "adapt a source model to target data");
    adapt->add_option("--config", aa.config, "run config (JSON)");
    adapt->add_option("--source-ckpt", aa.source_ckpt, "source checkpoint")->required();
    auto* pc = adapt->add_option("--proxy-ckpt", aa.proxy_ckpt, "proxy forecaster checkpoint");
    auto* pf = adapt->add_option("--proxy-file", aa.proxy_file, "proxy predictions CSV (window,step,<channels>)");
    pc->excludes(pf);
    adapt->add_option("--data", aa.data, "target CSV")->required();
    adapt->add_option("--out", aa.out, "output directory")->required();
    adapt->footer(footer);

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "MSE/MAE of a checkpoint on one split, in data scale");
    eval->add_option("--config", ea.config, "run config (split ratios, date column)");
    eval->add_option("--ckpt", ea.ckpt, "checkpoint")->required();
    eval->add_option("--data", ea.data, "CSV")->required();
    eval->add_option("--split", ea.split, "train, val or test")->capture_default_str();
    eval->add_option("--out", ea.out, "also write the metrics JSON here");
    eval->footer(footer);

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "write a checkpoint's predictions as a proxy file");
    predict->add_option("--config", pr.config, "run config (split ratios, date column)");
    predict->add_option("--ckpt", pr.ckpt, "checkpoint")->required();
    predict->add_option("--data", pr.data, "CSV")->required();
    predict->add_option("--split", pr.split, "train, val or test")->capture_default_str();
    predict->add_option("--out", pr.out, "output CSV")->required();
    predict->footer(footer);

    DecomposeArgs da;
    auto* dec = app.add_subcommand("decompose", "seasonal/trend components of a CSV");
    dec->add_option("--config", da.config, "run config (date column)");
    dec->add_option("--data", da.data, "CSV")->required();
    dec->add_option("--method", da.method, "ma (moving average) or dft (Fourier split)")->capture_default_str();
    dec->add_option("--k", da.k, "ma: odd window; dft: cut-off bin")->capture_default_str();
    dec->add_option("--out", da.out, "output directory")->required();
    dec->footer(footer);

    ReportArgs ra;
    auto* rep = app.add_subcommand("report", "plot-ready CSV tables from report.jsonl");
    rep->add_option("--report", ra.report, "report.jsonl")->required();
    rep->add_option("--out", ra.out, "output directory")->required();
    rep->footer(footer);

    SynthArgs sa;
    auto* syn = app.add_subcommand("synth", "synthetic slope + sine series");
    syn->add_option("--out", sa.out, "output CSV")->required();
    syn->add_option("--length", sa.length, "rows (ignored with --segment-length)")->capture_default_str();
    syn->add_option("--channels", sa.channels)->capture_default_str();
    syn->add_option("--slopes", sa.slopes, "one per channel, or per segment with --segment-length")
        ->delimiter(',')
        ->capture_default_str();
    syn->add_option("--segment-length", sa.segment_length, "rows per regime; 0 disables regimes")
        ->capture_default_str();
    syn->add_option("--period", sa.period)->capture_default_str();
    syn->add_option("--amplitude", sa.amplitude)->capture_default_str();
    syn->add_option("--noise", sa.noise, "noise standard deviation")->capture_default_str();
    syn->add_option("--seed", sa.seed)->capture_default_str();
    syn->footer(footer);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    logger()->set_level(spdlog::level::from_str(log_level));

    if (*pre) return cmd_pretrain(pa);
    if (*adapt) return cmd_adapt(aa);
    if (*eval) return cmd_eval(ea);
    if (*predict) return cmd_predict(pr);
    if (*dec) return cmd_decompose(da);
    if (*rep) return cmd_report(ra);
    return cmd_synth(sa);
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kData;
    }
}
