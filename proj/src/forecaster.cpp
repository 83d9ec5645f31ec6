#include "timepd/forecaster.hpp"

#include "timepd/error.hpp"
#include "timepd/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace timepd {

namespace {

constexpr double kInstanceEps = 1e-5;
constexpr const char* kCheckpointFormat = "timepd-checkpoint";
constexpr int kCheckpointVersion = 1;

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

Tensor linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    return uniform_init({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Var affine(Binding& bind, Var x, Parameter& w, Parameter& b) {
    return ops::add(ops::matmul(x, bind(w)), bind(b));
}

} // namespace

void TsfeConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
    if (lookback == 0 || horizon == 0 || channels == 0) fail("lookback, horizon and channels must be positive");
    if (patch_len < 1) fail("patch_len must be >= 1");
    if (stride < 1 || stride > patch_len) fail("stride must satisfy 1 <= stride <= patch_len");
    if (lookback < patch_len) {
        fail("lookback " + std::to_string(lookback) + " is shorter than patch_len " + std::to_string(patch_len));
    }
    if (n_blocks < 1) fail("n_blocks must be >= 1");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
    if (d_ff == 0) fail("d_ff must be positive");
}

std::size_t TsfeConfig::n_patches() const { return (lookback - patch_len) / stride + 1; }

void ForecasterConfig::validate() const {
    tsfe.validate();
    if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
    if (k_trend % 2 == 0 || k_trend > tsfe.lookback) {
        throw ConfigError("model: k_trend must be odd and at most lookback");
    }
    if (!(decomp_dropout >= 0.0 && decomp_dropout < 1.0)) throw ConfigError("model: decomp_dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const TsfeConfig& c) {
    j = {{"lookback", c.lookback}, {"horizon", c.horizon}, {"channels", c.channels},
         {"patch_len", c.patch_len}, {"stride", c.stride},     {"n_blocks", c.n_blocks},
         {"d_model", c.d_model},     {"n_heads", c.n_heads},   {"d_ff", c.d_ff}};
}

void from_json(const nlohmann::json& j, TsfeConfig& c) {
    j.at("lookback").get_to(c.lookback);
    j.at("horizon").get_to(c.horizon);
    j.at("channels").get_to(c.channels);
    j.at("patch_len").get_to(c.patch_len);
    j.at("stride").get_to(c.stride);
    j.at("n_blocks").get_to(c.n_blocks);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_ff").get_to(c.d_ff);
}

void to_json(nlohmann::json& j, const ForecasterConfig& c) {
    j = {{"tsfe", c.tsfe},
         {"embed_dim", c.embed_dim},
         {"k_trend", c.k_trend},
         {"decomp_dropout", c.decomp_dropout},
         {"instance_norm", c.instance_norm}};
}

void from_json(const nlohmann::json& j, ForecasterConfig& c) {
    j.at("tsfe").get_to(c.tsfe);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("k_trend").get_to(c.k_trend);
    j.at("decomp_dropout").get_to(c.decomp_dropout);
    j.at("instance_norm").get_to(c.instance_norm);
}

const char* to_string(BranchKind kind) { return kind == BranchKind::trend ? "trend" : "seasonal"; }

DualBranchForecaster::DualBranchForecaster(ForecasterConfig config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    const auto& t = config_.tsfe;
    Rng rng(derive_seed(init_seed, 0));
    embed_w_ = add_parameter("embed/weight", linear_weight(t.channels, config_.embed_dim, rng));
    embed_b_ = add_parameter("embed/bias", Tensor::zeros({config_.embed_dim}));
    trend_ = build_branch("trend", derive_seed(init_seed, 1));
    seasonal_ = build_branch("seasonal", derive_seed(init_seed, 2));
}

std::size_t DualBranchForecaster::add_parameter(const std::string& name, Tensor value) {
    params_.emplace_back(name, std::move(value));
    return params_.size() - 1;
}

DualBranchForecaster::Branch DualBranchForecaster::build_branch(const std::string& prefix, std::uint64_t seed) {
    const auto& t = config_.tsfe;
    const std::size_t d = t.d_model;
    Rng rng(seed);
    Branch br;
    br.first = params_.size();
    const std::size_t patch_in = t.patch_len * config_.embed_dim;
    br.patch_w = add_parameter(prefix + "/patch/weight", linear_weight(patch_in, d, rng));
    br.patch_b = add_parameter(prefix + "/patch/bias", Tensor::zeros({d}));
    Tensor pos({t.n_patches(), d});
    for (double& v : pos.data()) v = 0.02 * rng.normal();
    br.pos = add_parameter(prefix + "/pos", std::move(pos));
    for (std::size_t i = 0; i < t.n_blocks; ++i) {
        const std::string p = prefix + "/block" + std::to_string(i);
        Block b{};
        b.wq = add_parameter(p + "/attn/wq", linear_weight(d, d, rng));
        b.bq = add_parameter(p + "/attn/bq", Tensor::zeros({d}));
        b.wk = add_parameter(p + "/attn/wk", linear_weight(d, d, rng));
        b.bk = add_parameter(p + "/attn/bk", Tensor::zeros({d}));
        b.wv = add_parameter(p + "/attn/wv", linear_weight(d, d, rng));
        b.bv = add_parameter(p + "/attn/bv", Tensor::zeros({d}));
        b.wo = add_parameter(p + "/attn/wo", linear_weight(d, d, rng));
        b.bo = add_parameter(p + "/attn/bo", Tensor::zeros({d}));
        b.norm1_gamma = add_parameter(p + "/norm1/gamma", Tensor::ones({d}));
        b.norm1_beta = add_parameter(p + "/norm1/beta", Tensor::zeros({d}));
        b.w1 = add_parameter(p + "/ffn/w1", linear_weight(d, t.d_ff, rng));
        b.b1 = add_parameter(p + "/ffn/b1", Tensor::zeros({t.d_ff}));
        b.w2 = add_parameter(p + "/ffn/w2", linear_weight(t.d_ff, d, rng));
        b.b2 = add_parameter(p + "/ffn/b2", Tensor::zeros({d}));
        b.norm2_gamma = add_parameter(p + "/norm2/gamma", Tensor::ones({d}));
        b.norm2_beta = add_parameter(p + "/norm2/beta", Tensor::zeros({d}));
        br.blocks.push_back(b);
    }
    br.head_w = add_parameter(prefix + "/head/weight", linear_weight(t.n_patches() * d, t.horizon * t.channels, rng));
    br.head_b = add_parameter(prefix + "/head/bias", Tensor::zeros({t.horizon * t.channels}));
    br.last = params_.size();
    return br;
}

std::vector<Parameter*> DualBranchForecaster::parameters() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> DualBranchForecaster::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Parameter*> DualBranchForecaster::branch_parameters(BranchKind kind) {
    const Branch& br = branch_of(kind);
    std::vector<Parameter*> out;
    for (std::size_t i = br.first; i < br.last; ++i) out.push_back(&params_[i]);
    return out;
}

Parameter& DualBranchForecaster::parameter(const std::string& name) {
    return const_cast<Parameter&>(std::as_const(*this).parameter(name));
}

const Parameter& DualBranchForecaster::parameter(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw Error("no parameter named '" + name + "'");
}

std::size_t DualBranchForecaster::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void DualBranchForecaster::copy_from(const DualBranchForecaster& other) {
    if (params_.size() != other.params_.size()) throw ShapeError("copy_from: architectures differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name || params_[i].value.shape() != other.params_[i].value.shape()) {
            throw ShapeError("copy_from: parameter '" + params_[i].name + "' does not match '" +
                             other.params_[i].name + "'");
        }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i].value = other.params_[i].value;
        params_[i].zero_grad();
    }
}

void DualBranchForecaster::set_frozen(bool frozen) {
    for (auto& p : params_) p.frozen = frozen;
}

bool DualBranchForecaster::all_frozen() const {
    return std::all_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.frozen; });
}

InstanceStats DualBranchForecaster::instance_stats(const Tensor& series) const {
    if (series.rank() != 3) throw ShapeError("forecaster input must be [B x l x C], got " + to_string(series.shape()));
    const std::size_t B = series.dim(0), L = series.dim(1), C = series.dim(2);
    InstanceStats st{Tensor::zeros({B, 1, C}), Tensor::ones({B, 1, C})};
    if (!config_.instance_norm) return st;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            double mu = 0.0;
            for (std::size_t t = 0; t < L; ++t) mu += series[(b * L + t) * C + c];
            mu /= static_cast<double>(L);
            double var = 0.0;
            for (std::size_t t = 0; t < L; ++t) {
                const double d = series[(b * L + t) * C + c] - mu;
                var += d * d;
            }
            var /= static_cast<double>(L);
            st.mean[b * C + c] = mu;
            st.stddev[b * C + c] = std::sqrt(var + kInstanceEps);
        }
    return st;
}

Tensor DualBranchForecaster::normalize_input(const Tensor& series, const InstanceStats& stats) const {
    Tensor out = series;
    const std::size_t L = series.dim(1), C = series.dim(2);
    const std::size_t rows = series.size() / C;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t si = (r / L) * C + c;
            out[r * C + c] = (series[r * C + c] - stats.mean[si]) / stats.stddev[si];
        }
    return out;
}

Var DualBranchForecaster::embed(Binding& bind, Var series) {
    const auto& s = series.shape();
    if (s.size() != 3 || s[2] != config_.tsfe.channels) {
        throw ShapeError("embed: expected [B x l x " + std::to_string(config_.tsfe.channels) + "], got " +
                         to_string(s));
    }
    return affine(bind, series, params_[embed_w_], params_[embed_b_]);
}

Var DualBranchForecaster::block(Binding& bind, const Block& b, Var h) {
    const auto& t = config_.tsfe;
    const std::size_t dh = t.d_model / t.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = affine(bind, h, params_[b.wq], params_[b.bq]);
    Var k = affine(bind, h, params_[b.wk], params_[b.bk]);
    Var v = affine(bind, h, params_[b.wv], params_[b.bv]);
    std::vector<Var> heads;
    for (std::size_t i = 0; i < t.n_heads; ++i) {
        Var qh = ops::slice(q, 2, i * dh, dh);
        Var kh = ops::slice(k, 2, i * dh, dh);
        Var vh = ops::slice(v, 2, i * dh, dh);
        Var att = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale));
        heads.push_back(ops::matmul(att, vh));
    }
    Var ctx = t.n_heads == 1 ? heads.front() : ops::concat(heads, 2);
    Var attn_out = affine(bind, ctx, params_[b.wo], params_[b.bo]);
    h = ops::add(ops::mul(ops::layer_normalize(ops::add(h, attn_out)), bind(params_[b.norm1_gamma])),
                 bind(params_[b.norm1_beta]));
    Var ff = affine(bind, ops::gelu(affine(bind, h, params_[b.w1], params_[b.b1])), params_[b.w2], params_[b.b2]);
    return ops::add(ops::mul(ops::layer_normalize(ops::add(h, ff)), bind(params_[b.norm2_gamma])),
                    bind(params_[b.norm2_beta]));
}

Var DualBranchForecaster::branch(Binding& bind, BranchKind kind, Var component, Var* latent) {
    const auto& t = config_.tsfe;
    const auto& s = component.shape();
    if (s.size() != 3 || s[1] != t.lookback || s[2] != config_.embed_dim) {
        throw ShapeError("branch: expected [B x " + std::to_string(t.lookback) + " x " +
                         std::to_string(config_.embed_dim) + "], got " + to_string(s));
    }
    const Branch& br = branch_of(kind);
    const std::size_t B = s[0];
    Var patches = ops::unfold(component, t.patch_len, t.stride);
    Var h = ops::add(affine(bind, patches, params_[br.patch_w], params_[br.patch_b]), bind(params_[br.pos]));
    for (const Block& b : br.blocks) h = block(bind, b, h);
    Var flat = ops::reshape(h, {B, t.n_patches() * t.d_model});
    if (latent) *latent = flat;
    Var z = affine(bind, flat, params_[br.head_w], params_[br.head_b]);
    return ops::reshape(z, {B, t.horizon, t.channels});
}

Var DualBranchForecaster::restore_scale(BranchKind kind, Var z, const InstanceStats& stats) const {
    if (!config_.instance_norm) return z;
    Tape& tape = *z.tape();
    Var scaled = ops::mul(z, tape.constant(stats.stddev));
    return kind == BranchKind::trend ? ops::add(scaled, tape.constant(stats.mean)) : scaled;
}

Var DualBranchForecaster::branch_output(Binding& bind, BranchKind kind, Var component, const InstanceStats& stats) {
    return restore_scale(kind, branch(bind, kind, component), stats);
}

ForwardPass DualBranchForecaster::forward(Binding& bind, const Tensor& series,
                                          std::optional<std::uint64_t> dropout_seed) {
    const InstanceStats stats = instance_stats(series);
    ForwardPass out;
    out.embedding = embed(bind, bind.tape().constant(normalize_input(series, stats)));
    out.components = dropout_seed ? dropout_decompose(out.embedding, config_.k_trend, config_.decomp_dropout, *dropout_seed)
                                  : decompose(out.embedding, config_.k_trend);
    out.trend = branch_output(bind, BranchKind::trend, out.components.trend, stats);
    out.seasonal = branch_output(bind, BranchKind::seasonal, out.components.seasonal, stats);
    out.prediction = ops::add(out.trend, out.seasonal);
    return out;
}

Tensor DualBranchForecaster::predict(const Tensor& series) const {
    Tape tape;
    // Constant-mode bindings only read parameter values.
    Binding bind(tape, Binding::Mode::constant);
    return const_cast<DualBranchForecaster*>(this)->forward(bind, series).prediction.value();
}

Tensor DualBranchForecaster::latent(BranchKind kind, const Tensor& series) const {
    Tape tape;
    Binding bind(tape, Binding::Mode::constant);
    auto* self = const_cast<DualBranchForecaster*>(this);
    ForwardPass f = self->forward(bind, series);
    Var phi;
    self->branch(bind, kind, kind == BranchKind::trend ? f.components.trend : f.components.seasonal, &phi);
    return phi.value();
}

Var forecasting_loss(Var z_trend, Var z_seasonal, Var truth) {
    return ops::mse(ops::add(z_trend, z_seasonal), truth);
}

Metrics metrics(const Tensor& prediction, const Tensor& truth) {
    require_same_shape(prediction, truth, "metrics");
    if (prediction.empty()) throw Error("metrics: empty input");
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = prediction[i] - truth[i];
        se += d * d;
        ae += std::abs(d);
    }
    const auto n = static_cast<double>(prediction.size());
    return {se / n, ae / n};
}

Metrics evaluate(const std::function<Tensor(const Batch&)>& predict, const SeriesDataset& dataset,
                 std::size_t batch_size) {
    if (dataset.empty()) throw DataError("evaluate: empty dataset");
    if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        idx.resize(std::min(batch_size, dataset.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const Batch batch = dataset.batch(idx);
        const Tensor pred = dataset.normalizer().denormalize(predict(batch));
        const Tensor truth = dataset.normalizer().denormalize(batch.y);
        require_same_shape(pred, truth, "evaluate");
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - truth[i];
            se += d * d;
            ae += std::abs(d);
        }
        count += pred.size();
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

Metrics evaluate(const DualBranchForecaster& model, const SeriesDataset& dataset, std::size_t batch_size) {
    return evaluate([&](const Batch& b) { return model.predict(b.x); }, dataset, batch_size);
}

nlohmann::json checkpoint_json(const DualBranchForecaster& model) {
    nlohmann::json params = nlohmann::json::object();
    for (const Parameter* p : model.parameters()) {
        params[p->name] = {{"shape", p->value.shape()}, {"data", p->value.values()}};
    }
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"config", model.config()},
            {"params", std::move(params)}};
}

DualBranchForecaster model_from_checkpoint(const nlohmann::json& j) {
    try {
        if (j.at("format") != kCheckpointFormat) throw DataError("not a checkpoint file");
        if (j.at("version") != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + j.at("version").dump());
        }
        DualBranchForecaster model(j.at("config").get<ForecasterConfig>(), 0);
        const auto& params = j.at("params");
        if (params.size() != model.parameters().size()) throw DataError("checkpoint parameter count mismatch");
        for (Parameter* p : model.parameters()) {
            const auto& entry = params.at(p->name);
            Tensor value(entry.at("shape").get<Shape>(), entry.at("data").get<std::vector<double>>());
            if (value.shape() != p->value.shape()) {
                throw DataError("checkpoint parameter '" + p->name + "' has shape " + to_string(value.shape()) +
                                ", expected " + to_string(p->value.shape()));
            }
            p->value = std::move(value);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint config: ") + e.what());
    }
}

void save_checkpoint(const DualBranchForecaster& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << checkpoint_json(model).dump() << '\n';
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

DualBranchForecaster load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    return model_from_checkpoint(j);
}

} // namespace timepd
