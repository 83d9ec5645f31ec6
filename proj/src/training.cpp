#include "timepd/training.hpp"

#include "timepd/error.hpp"
#include "timepd/log.hpp"
#include "timepd/random.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace timepd {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5348;
constexpr std::uint64_t kStepSalt = 0x53544550;

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var weighted_add(Var acc, Var term, double weight) {
    if (weight == 0.0) return acc;
    return ops::add(acc, ops::scale(term, weight));
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::vector<Tensor> snapshot(const DualBranchForecaster& model) {
    std::vector<Tensor> out;
    for (const Parameter* p : model.parameters()) out.push_back(p->value);
    return out;
}

void restore(DualBranchForecaster& model, const std::vector<Tensor>& values) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::size_t resolve_k_cut(const TrainConfig& config, std::size_t horizon) {
    return config.k_cut == 0 ? default_k_cut(horizon) : config.k_cut;
}

nlohmann::json components_json(const LossComponents& c) {
    return {{"loss", c.loss}, {"inv", c.inv}, {"pred", c.pred}, {"rep", c.rep}, {"grad", c.grad}, {"kd", c.kd}};
}

using KdProvider = std::function<std::optional<KdInputs>(const Batch&, StepRecord&)>;

// Shared epoch loop of both phases.
void run_epochs(DualBranchForecaster& model, const SeriesDataset& train, const SeriesDataset* val,
                const TrainConfig& config, TrainReport& report, const KdProvider& kd_for) {
    if (train.empty()) throw DataError(report.phase + ": empty training set");
    Adam optimizer(config.adam);
    std::vector<Tensor> best = snapshot(model);
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::size_t global_step = 0;
    bool capped = false;
    for (std::size_t epoch = 0; epoch < config.epochs && !capped; ++epoch) {
        const auto order = shuffled(train.size(), derive_seed(config.seed, kShuffleSalt + epoch));
        double epoch_loss = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, order.size() - start);
            const Batch batch = train.batch(std::span<const std::size_t>(order).subspan(start, n));
            StepRecord pre;
            std::optional<KdInputs> kd = kd_for(batch, pre);
            StepRecord rec = train_step(model, optimizer, batch, config, derive_seed(config.seed, kStepSalt + global_step),
                                        kd ? &*kd : nullptr);
            rec.phase = report.phase;
            rec.epoch = epoch;
            rec.step = global_step;
            rec.proxy_error = pre.proxy_error;
            rec.confidence = pre.confidence;
            report.steps.push_back(rec);
            epoch_loss += rec.all;
            ++epoch_steps;
            ++global_step;
            if (config.max_steps && global_step >= config.max_steps) {
                capped = true;
                break;
            }
        }
        EpochRecord er{epoch, epoch_loss / static_cast<double>(epoch_steps), 0.0, false};
        if (val && !val->empty()) {
            er.val_mse = evaluate(model, *val).mse;
            er.improved = er.val_mse < best_val;
            if (er.improved) {
                best_val = er.val_mse;
                best = snapshot(model);
                report.best_epoch = epoch;
                stale = 0;
            } else {
                ++stale;
            }
        }
        logger()->info("{} epoch {}: train L_all {:.6f}, val mse {:.6f}{}", report.phase, epoch, er.train_loss,
                       er.val_mse, er.improved ? " (best)" : "");
        report.epochs.push_back(er);
        if (val && config.patience && stale >= config.patience) {
            report.early_stopped = true;
            break;
        }
    }
    if (val && !val->empty() && !report.epochs.empty()) restore(model, best);
}

} // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train: " + msg); };
    for (double w : {weights.inv, weights.pred, weights.rep, weights.grad, weights.kd}) {
        if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
    }
    if (!(adam.lr > 0.0)) fail("lr must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        fail("Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) fail("Adam eps must be positive");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(mask_percentile > 0.0 && mask_percentile <= 100.0)) fail("mask_percentile must lie in (0, 100]");
    if (!(correction_strength >= 0.0 && correction_strength <= 1.0)) fail("correction_strength must lie in [0, 1]");
    if (!(temperature > 0.0)) fail("temperature must be positive");
    if (!(hvp_eps > 0.0)) fail("hvp_eps must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lambda_inv", c.weights.inv},
         {"lambda_pred", c.weights.pred},
         {"lambda_rep", c.weights.rep},
         {"lambda_grad", c.weights.grad},
         {"lambda_kd", c.weights.kd},
         {"lr", c.adam.lr},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"adam_eps", c.adam.eps},
         {"epochs", c.epochs},
         {"max_steps", c.max_steps},
         {"batch_size", c.batch_size},
         {"patience", c.patience},
         {"seed", c.seed},
         {"invariance", c.invariance},
         {"mask_percentile", c.mask_percentile},
         {"grad_mode", to_string(c.grad_mode)},
         {"hvp_eps", c.hvp_eps},
         {"k_cut", c.k_cut},
         {"correction_strength", c.correction_strength},
         {"temperature", c.temperature},
         {"confidence_scales_kd", c.confidence_scales_kd},
         {"kd_flow_through", c.kd_flow_through},
         {"strict_unsupervised", c.strict_unsupervised}};
}

double total_loss(const LossComponents& c, const LossWeights& w, double kd_weight) {
    return c.loss + w.inv * c.inv + w.pred * c.pred + w.rep * c.rep + w.grad * c.grad + kd_weight * c.kd;
}

Var kd_loss(Var z_denoised, Var z_target) { return ops::mse(z_denoised, z_target); }

void Adam::step(const std::vector<Parameter*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        if (p->frozen) continue;
        if (!p->grad.all_finite()) throw NumericError("non-finite gradient for parameter '" + p->name + "'");
        auto [it, fresh] = state_.try_emplace(p);
        if (fresh) it->second = {Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())};
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            p->value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
        }
    }
}

Objective build_objective(DualBranchForecaster& model, Binding& bind, const Batch& batch, const ObjectiveSpec& spec,
                          StepTargets& targets) {
    Tape& tape = bind.tape();
    const auto& cfg = model.config();
    Objective obj;
    obj.stats = model.instance_stats(batch.x);
    Var x = model.embed(bind, tape.constant(model.normalize_input(batch.x, obj.stats)));
    obj.embedding = x.value();
    Var truth = tape.constant(batch.y);

    std::array<Var, 2> z_trend, z_seasonal;
    const std::uint64_t pass_seed[2] = {spec.seeds.first, spec.seeds.second};
    for (int i = 0; i < 2; ++i) {
        ComponentVars parts = dropout_decompose(x, cfg.k_trend, cfg.decomp_dropout, pass_seed[i]);
        z_trend[i] = model.branch_output(bind, BranchKind::trend, parts.trend, obj.stats);
        z_seasonal[i] = model.branch_output(bind, BranchKind::seasonal, parts.seasonal, obj.stats);
    }
    obj.loss = spec.strict_unsupervised
                   ? zero(tape)
                   : ops::scale(ops::add(forecasting_loss(z_trend[0], z_seasonal[0], truth),
                                         forecasting_loss(z_trend[1], z_seasonal[1], truth)),
                                0.5);

    if (spec.invariance) {
        if (!targets.ready) {
            const BranchGradients g = input_gradients(model, obj.embedding, spec.seeds);
            targets.seasonal = build_mask(g.seasonal_a, g.seasonal_b, spec.mask_percentile);
            targets.trend = build_mask(g.trend_a, g.trend_b, spec.mask_percentile);
        }
        ComponentVars hat = invariant_features(x, targets.seasonal.mask, targets.trend.mask);
        Var zt_hat = model.branch_output(bind, BranchKind::trend, hat.trend, obj.stats);
        Var zs_hat = model.branch_output(bind, BranchKind::seasonal, hat.seasonal, obj.stats);
        if (!targets.ready) {
            Tensor sum = zt_hat.value();
            sum.add_inplace(zs_hat.value());
            ComponentPair split = frequency_targets(sum, spec.k_cut);
            targets.s_prime = std::move(split.seasonal);
            targets.t_prime = std::move(split.trend);
            targets.ready = true;
        }
        Var s_prime = tape.constant(targets.s_prime);
        Var t_prime = tape.constant(targets.t_prime);
        obj.inv = spec.strict_unsupervised ? zero(tape) : invariant_loss(zt_hat, zs_hat, truth);
        obj.pred = pred_consistency_loss(z_seasonal, z_trend, s_prime, t_prime);
        obj.rep = representation_loss(zt_hat, zs_hat, s_prime, t_prime);
    } else {
        obj.inv = obj.pred = obj.rep = zero(tape);
    }

    if (spec.kd) {
        const KdInputs& kd = *spec.kd;
        ComponentVars parts = decompose(x, cfg.k_trend);
        obj.z_target = ops::add(model.branch_output(bind, BranchKind::trend, parts.trend, obj.stats),
                                model.branch_output(bind, BranchKind::seasonal, parts.seasonal, obj.stats));
        Var pseudo;
        if (kd.flow_through) {
            Tensor base = kd.z_proxy;
            for (std::size_t i = 0; i < base.size(); ++i) base[i] -= kd.alpha * kd.z_source[i];
            pseudo = ops::add(tape.constant(std::move(base)), ops::scale(obj.z_target, kd.alpha));
        } else {
            if (!targets.pseudo_label)
                targets.pseudo_label = denoise(kd.z_proxy, kd.z_source, obj.z_target.value(), kd.alpha);
            pseudo = tape.constant(*targets.pseudo_label);
        }
        obj.kd = kd_loss(pseudo, obj.z_target);
    } else {
        obj.kd = zero(tape);
    }

    const LossWeights& w = spec.weights;
    Var total = obj.loss;
    total = weighted_add(total, obj.inv, w.inv);
    total = weighted_add(total, obj.pred, w.pred);
    total = weighted_add(total, obj.rep, w.rep);
    total = weighted_add(total, obj.kd, spec.kd ? spec.kd->weight : 0.0);
    obj.weighted = total;
    return obj;
}

StepRecord train_step(DualBranchForecaster& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                      std::uint64_t step_seed, const KdInputs* kd) {
    for (Parameter* p : model.parameters()) p->zero_grad();
    ObjectiveSpec spec;
    spec.weights = config.weights;
    spec.seeds = PassSeeds::from(step_seed);
    spec.invariance = config.invariance;
    spec.strict_unsupervised = config.strict_unsupervised;
    spec.mask_percentile = config.mask_percentile;
    spec.k_cut = resolve_k_cut(config, model.config().tsfe.horizon);
    spec.kd = kd;

    StepRecord rec;
    StepTargets targets;
    Tape tape;
    Binding bind(tape, Binding::Mode::trainable);
    Objective obj;
    try {
        obj = build_objective(model, bind, batch, spec, targets);
        bind.accumulate(tape.backward(obj.weighted));
    } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged: ") + e.what());
    }

    rec.components.loss = obj.loss.value().item();
    rec.components.inv = obj.inv.value().item();
    rec.components.pred = obj.pred.value().item();
    rec.components.rep = obj.rep.value().item();
    rec.components.kd = obj.kd.value().item();
    rec.kd_weight = kd ? kd->weight : 0.0;

    if (config.invariance) {
        GradientAlignment ga = gradient_alignment(model, obj.embedding, obj.stats, spec.seeds, targets.s_prime,
                                                  targets.t_prime, config.grad_mode, config.hvp_eps);
        rec.components.grad = ga.value();
        if (config.weights.grad > 0.0) {
            for (std::size_t i = 0; i < ga.parameters.size(); ++i) {
                Parameter& p = *ga.parameters[i];
                if (p.frozen) continue;
                for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += config.weights.grad * ga.update[i][k];
            }
        }
    }
    rec.all = obj.weighted.value().item() + config.weights.grad * rec.components.grad;
    if (!std::isfinite(rec.all)) throw NumericError("training diverged: non-finite L_all");
    optimizer.step(model.parameters());
    return rec;
}

nlohmann::json to_json(const StepRecord& r) {
    nlohmann::json j = {{"phase", r.phase}, {"epoch", r.epoch}, {"step", r.step}};
    j.update(components_json(r.components));
    j["all"] = r.all;
    j["kd_weight"] = r.kd_weight;
    j["e_t"] = r.proxy_error;
    j["C_t"] = r.confidence;
    return j;
}

void TrainReport::write_steps(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : steps) out << to_json(r).dump() << '\n';
}

nlohmann::json TrainReport::summary() const {
    nlohmann::json epochs_json = nlohmann::json::array();
    for (const auto& e : epochs) {
        epochs_json.push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mse", e.val_mse}, {"improved", e.improved}});
    }
    nlohmann::json j = {{"phase", phase},
                        {"seed", seed},
                        {"config", config},
                        {"steps", steps.size()},
                        {"epochs", std::move(epochs_json)},
                        {"best_epoch", best_epoch},
                        {"early_stopped", early_stopped},
                        {"e_0", initial_proxy_error},
                        {"C_0", initial_confidence}};
    if (!steps.empty()) j["last_step"] = to_json(steps.back());
    if (test) j["test"] = {{"mse", test->mse}, {"mae", test->mae}};
    return j;
}

TrainReport pretrain_source(DualBranchForecaster& model, const SeriesDataset& train, const SeriesDataset* val,
                            const TrainConfig& config) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    report.phase = "pretrain";
    report.seed = config.seed;
    report.config = config;
    run_epochs(model, train, val, config, report, [](const Batch&, StepRecord&) { return std::nullopt; });
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

AdaptResult adapt_target(const DualBranchForecaster& source, const Proxy& proxy, const SeriesDataset& train,
                         const SeriesDataset* val, const TrainConfig& config) {
    config.validate();
    if (train.empty()) throw DataError("adapt: empty target training set");
    if (train.channels() != source.config().tsfe.channels || train.lookback() != source.config().tsfe.lookback ||
        train.horizon() != source.config().tsfe.horizon) {
        throw ShapeError("adapt: target data geometry does not match the source model");
    }
    const auto start = std::chrono::steady_clock::now();
    AdaptResult result{DualBranchForecaster(source.config(), 0), {}};
    DualBranchForecaster& target = result.target;
    target.copy_from(source);
    target.set_frozen(false);

    TrainReport& report = result.report;
    report.phase = "adapt";
    report.seed = config.seed;
    report.config = config;
    {
        std::vector<std::size_t> first(std::min(config.batch_size, train.size()));
        std::iota(first.begin(), first.end(), 0);
        const Batch b = train.batch(first);
        report.initial_proxy_error = proxy_error(source.predict(b.x), target.predict(b.x));
        report.initial_confidence = confidence(report.initial_proxy_error, config.temperature);
    }

    auto kd_for = [&](const Batch& batch, StepRecord& rec) -> std::optional<KdInputs> {
        KdInputs kd;
        kd.z_source = source.predict(batch.x);
        kd.z_proxy = proxy.predict(batch.x, batch.window_ids);
        require_same_shape(kd.z_proxy, kd.z_source, "proxy prediction");
        rec.proxy_error = proxy_error(kd.z_source, target.predict(batch.x));
        rec.confidence = confidence(rec.proxy_error, config.temperature);
        kd.alpha = config.correction_strength;
        kd.flow_through = config.kd_flow_through;
        kd.weight = config.weights.kd * (config.confidence_scales_kd ? rec.confidence : 1.0);
        return kd;
    };
    run_epochs(target, train, val, config, report, kd_for);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace timepd
