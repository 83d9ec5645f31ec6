#include "timepd/config.hpp"

#include "timepd/error.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace timepd {

namespace {

using nlohmann::json;

struct Binding {
    ConfigKey doc;
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

template <class T>
T checked_get(const json& v, const std::string& where) {
    auto bad = [&](const char* want) { throw ConfigError("config key " + where + ": expected " + want); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) bad("a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) bad("a string");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_unsigned()) bad("a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) bad("a number");
    } else {
        if (!v.is_array() || v.size() != std::tuple_size_v<T>) bad("an array of 3 numbers");
        for (const auto& e : v)
            if (!e.is_number()) bad("an array of 3 numbers");
    }
    return v.get<T>();
}

template <class S, class T>
Binding field(const char* section, const char* name, S RunConfig::*sec, T S::*member, const char* help,
              const char* provenance) {
    const std::string where = std::string(section) + "." + name;
    return {{section, name, help, provenance},
            [=](RunConfig& c, const json& v) { (c.*sec).*member = checked_get<T>(v, where); },
            [=](const RunConfig& c) { return json((c.*sec).*member); }};
}

constexpr const char* kPaper = "method setting";
constexpr const char* kSilent = "project default";

const std::vector<Binding>& bindings() {
    using R = RunConfig;
    static const std::vector<Binding> table = {
        field("data", "lookback", &R::data, &DataSection::lookback, "look-back window length l", kPaper),
        field("data", "horizon", &R::data, &DataSection::horizon, "prediction length H",
              "project default for desk runs; benchmark runs use 96, 192 or 336"),
        field("data", "split", &R::data, &DataSection::split, "train/val/test ratios", "method setting (6:2:2; 7:1:2 also used)"),
        field("data", "date_column", &R::data, &DataSection::date_column,
              "name of the timestamp column; empty detects a leading 'date' column", "artifact plumbing"),
        field("data", "target_fraction", &R::data, &DataSection::target_fraction,
              "fraction of target training windows used for adaptation", kPaper),
        field("data", "random_subsample", &R::data, &DataSection::random_subsample,
              "seeded random windows instead of the chronological prefix", "project default (prefix)"),
        field("data", "subsample_seed", &R::data, &DataSection::subsample_seed, "seed of the random subsample",
              "artifact plumbing"),

        field("model", "patch_len", &R::model, &ModelSection::patch_len, "patch length P", kSilent),
        field("model", "stride", &R::model, &ModelSection::stride, "patch stride S", kSilent),
        field("model", "n_blocks", &R::model, &ModelSection::n_blocks, "attention blocks per branch", kSilent),
        field("model", "d_model", &R::model, &ModelSection::d_model, "patch feature width", kSilent),
        field("model", "n_heads", &R::model, &ModelSection::n_heads, "attention heads", kSilent),
        field("model", "d_ff", &R::model, &ModelSection::d_ff, "feed-forward width", kSilent),
        field("model", "embed_dim", &R::model, &ModelSection::embed_dim, "channel embedding width E", kSilent),
        field("model", "k_trend", &R::model, &ModelSection::k_trend, "moving-average window (odd)", kSilent),
        field("model", "decomp_dropout", &R::model, &ModelSection::decomp_dropout,
              "dropout rate in the decomposition block", kPaper),
        field("model", "instance_norm", &R::model, &ModelSection::instance_norm,
              "per-window mean/std normalization around the forecaster", "project addition"),
        field("model", "init_seed", &R::model, &ModelSection::init_seed, "parameter initialization seed",
              "artifact plumbing"),

        field("invariance", "enabled", &R::invariance, &InvarianceSection::enabled,
              "invariance terms (L_inv, L_pred, L_rep, L_grad) on or off", kPaper),
        field("invariance", "mask_percentile", &R::invariance, &InvarianceSection::mask_percentile,
              "alpha-percentile of the gradient-difference mask, in (0, 100]", kSilent),
        field("invariance", "grad_mode", &R::invariance, &InvarianceSection::grad_mode,
              "L_grad update: first_order (sign-agreement surrogate) or hvp (finite-difference Hessian-vector)",
              kSilent),
        field("invariance", "hvp_eps", &R::invariance, &InvarianceSection::hvp_eps, "step of the hvp mode", kSilent),
        field("invariance", "k_cut", &R::invariance, &InvarianceSection::k_cut,
              "Fourier cut-off bin of the frequency targets; 0 means max(1, H/40)", kSilent),
        field("invariance", "lambda_inv", &R::invariance, &InvarianceSection::lambda_inv, "weight of L_inv", kSilent),
        field("invariance", "lambda_pred", &R::invariance, &InvarianceSection::lambda_pred, "weight of L_pred",
              kSilent),
        field("invariance", "lambda_rep", &R::invariance, &InvarianceSection::lambda_rep, "weight of L_rep", kPaper),
        field("invariance", "lambda_grad", &R::invariance, &InvarianceSection::lambda_grad, "weight of L_grad",
              kPaper),

        field("proxy", "correction_strength", &R::proxy, &ProxySection::correction_strength,
              "denoising strength alpha in [0, 1]", kSilent),
        field("proxy", "temperature", &R::proxy, &ProxySection::temperature, "confidence temperature tau", kSilent),
        field("proxy", "lambda_kd", &R::proxy, &ProxySection::lambda_kd, "weight of L_kd", kPaper),
        field("proxy", "confidence_scales_kd", &R::proxy, &ProxySection::confidence_scales_kd,
              "multiply lambda_kd by C_t each step", "project option; off by default"),
        field("proxy", "kd_flow_through", &R::proxy, &ProxySection::kd_flow_through,
              "let gradients flow through the pseudo-label", "project option; off by default"),

        field("train", "lr", &R::train, &TrainSection::lr, "Adam learning rate", kPaper),
        field("train", "beta1", &R::train, &TrainSection::beta1, "Adam beta1", kSilent),
        field("train", "beta2", &R::train, &TrainSection::beta2, "Adam beta2", kSilent),
        field("train", "eps", &R::train, &TrainSection::eps, "Adam epsilon", kSilent),
        field("train", "epochs", &R::train, &TrainSection::epochs, "maximum epochs", kSilent),
        field("train", "max_steps", &R::train, &TrainSection::max_steps, "step cap; 0 disables", "artifact plumbing"),
        field("train", "batch_size", &R::train, &TrainSection::batch_size, "mini-batch size", kSilent),
        field("train", "patience", &R::train, &TrainSection::patience,
              "early-stopping patience in epochs on val MSE; 0 disables", kSilent),
        field("train", "seed", &R::train, &TrainSection::seed, "shuffle, dropout and step seed", "artifact plumbing"),
        field("train", "strict_unsupervised", &R::train, &TrainSection::strict_unsupervised,
              "adapt without target labels (drops L and L_inv)", "project option; off by default"),

        field("output", "write_steps", &R::output, &OutputSection::write_steps, "write report.jsonl",
              "artifact plumbing"),
        field("output", "write_timing", &R::output, &OutputSection::write_timing, "write timing.json",
              "artifact plumbing"),
    };
    return table;
}

const char* kSections[] = {"data", "model", "invariance", "proxy", "train", "output"};

} // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& b : bindings()) out.push_back(b.doc);
        return out;
    }();
    return keys;
}

std::string config_help() {
    const RunConfig defaults;
    std::ostringstream os;
    os << "Config keys (JSON sections; every key optional):\n";
    std::string section;
    for (const auto& b : bindings()) {
        if (b.doc.section != section) {
            section = b.doc.section;
            os << "  [" << section << "]\n";
        }
        os << "    " << b.doc.name << " = " << b.get(defaults).dump() << "\n"
           << "        " << b.doc.help << " (" << b.doc.provenance << ")\n";
    }
    return os.str();
}

void RunConfig::validate() const {
    const double sum = data.split[0] + data.split[1] + data.split[2];
    for (double r : data.split)
        if (!(r > 0.0)) throw ConfigError("data.split: every ratio must be positive");
    if (!(sum > 0.0)) throw ConfigError("data.split: ratios must sum to a positive value");
    if (!(data.target_fraction > 0.0 && data.target_fraction <= 1.0)) {
        throw ConfigError("data.target_fraction must lie in (0, 1]");
    }
    forecaster_config(1).validate();
    grad_align_mode_from_string(invariance.grad_mode);
    train_config().validate();
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.weights = {invariance.lambda_inv, invariance.lambda_pred, invariance.lambda_rep, invariance.lambda_grad,
                 proxy.lambda_kd};
    t.adam = {train.lr, train.beta1, train.beta2, train.eps};
    t.epochs = train.epochs;
    t.max_steps = train.max_steps;
    t.batch_size = train.batch_size;
    t.patience = train.patience;
    t.seed = train.seed;
    t.invariance = invariance.enabled;
    t.mask_percentile = invariance.mask_percentile;
    t.grad_mode = grad_align_mode_from_string(invariance.grad_mode);
    t.hvp_eps = invariance.hvp_eps;
    t.k_cut = invariance.k_cut;
    t.correction_strength = proxy.correction_strength;
    t.temperature = proxy.temperature;
    t.confidence_scales_kd = proxy.confidence_scales_kd;
    t.kd_flow_through = proxy.kd_flow_through;
    t.strict_unsupervised = train.strict_unsupervised;
    return t;
}

ForecasterConfig RunConfig::forecaster_config(std::size_t channels) const {
    ForecasterConfig f;
    f.tsfe = {data.lookback, data.horizon, channels,      model.patch_len, model.stride,
              model.n_blocks, model.d_model, model.n_heads, model.d_ff};
    f.embed_dim = model.embed_dim;
    f.k_trend = model.k_trend;
    f.decomp_dropout = model.decomp_dropout;
    f.instance_norm = model.instance_norm;
    return f;
}

nlohmann::json to_json(const RunConfig& c) {
    json j = json::object();
    for (const char* s : kSections) j[s] = json::object();
    for (const auto& b : bindings()) j[b.doc.section][b.doc.name] = b.get(c);
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    const std::set<std::string> sections(std::begin(kSections), std::end(kSections));
    for (const auto& [name, value] : j.items()) {
        if (!sections.count(name)) throw ConfigError("config: unknown section '" + name + "'");
        if (!value.is_object()) throw ConfigError("config: section '" + name + "' must be an object");
    }
    RunConfig c;
    std::set<std::string> seen;
    for (const auto& b : bindings()) {
        const auto sec = j.find(b.doc.section);
        if (sec == j.end()) continue;
        const auto it = sec->find(b.doc.name);
        if (it == sec->end()) continue;
        b.set(c, *it);
        seen.insert(b.doc.section + "." + b.doc.name);
    }
    for (const auto& [sname, sval] : j.items()) {
        for (const auto& [key, unused] : sval.items()) {
            if (!seen.count(sname + "." + key)) throw ConfigError("config: unknown key '" + sname + "." + key + "'");
        }
    }
    c.validate();
    return c;
}

RunConfig parse_run_config(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error at byte (1-based) " + std::to_string(e.byte) + ": " + e.what());
    }
    return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json(c).dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path.string());
}

} // namespace timepd
