// Acceptance harness: one PASS/FAIL line per criterion 1-9.
//
//   timepd_acceptance [--only N]... [--known-failure N]...
//
// Exit status is nonzero when a criterion fails that was not listed with
// --known-failure. Known failures still print FAIL.

#include "timepd/decomposition.hpp"
#include "timepd/error.hpp"
#include "timepd/invariance.hpp"
#include "timepd/log.hpp"
#include "timepd/proxy.hpp"
#include "timepd/random.hpp"
#include "timepd/training.hpp"

#include "op_cases.hpp"
#include "param_fd.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

using namespace timepd;

namespace {

// Tolerances and limits, pinned.
constexpr double kOpTol = 1e-4;
constexpr double kGraphTol = 1e-3;
constexpr double kFourierTol = 1e-9;
constexpr double kConfidenceTol = 1e-12;
constexpr double kKdZeroTol = 1e-24;      // z_s - (z_s - z_t) rounds, so L_kd is ~0, not bit-zero
constexpr double kAccountingTol = 1e-9;
constexpr double kLimitC1 = 60, kLimitC2 = 10, kLimitC3 = 10, kLimitC4 = 30, kLimitC5 = 300, kLimitC6 = 900,
                 kLimitC7 = 600;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Tensor normal_tensor(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal();
    return t;
}

std::string sha256(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

std::string checkpoint_hash(const DualBranchForecaster& m) { return sha256(checkpoint_json(m).dump()); }

std::vector<Tensor> values_of(const DualBranchForecaster& m) {
    std::vector<Tensor> out;
    for (const Parameter* p : m.parameters()) out.push_back(p->value);
    return out;
}

// Geometry of the gradient check.
ForecasterConfig tiny_config() {
    ForecasterConfig c;
    c.tsfe = {.lookback = 16, .horizon = 4, .channels = 2, .patch_len = 4, .stride = 4,
              .n_blocks = 1, .d_model = 8, .n_heads = 2, .d_ff = 12};
    c.embed_dim = 4;
    c.k_trend = 5;
    return c;
}

// Desk-scale forecaster of the synthetic experiments.
ForecasterConfig desk_config() {
    ForecasterConfig c;
    c.tsfe = {.lookback = 96, .horizon = 24, .channels = 1, .patch_len = 16, .stride = 8,
              .n_blocks = 1, .d_model = 16, .n_heads = 2, .d_ff = 32};
    c.embed_dim = 4;
    c.k_trend = 25;
    return c;
}

// Larger forecaster standing in for the pretrained proxy.
ForecasterConfig proxy_config() {
    ForecasterConfig c = desk_config();
    c.tsfe.n_blocks = 2;
    c.tsfe.d_model = 32;
    c.tsfe.n_heads = 4;
    c.tsfe.d_ff = 64;
    c.embed_dim = 8;
    return c;
}

constexpr std::size_t kLookback = 96, kHorizon = 24, kLength = 1000;
constexpr double kTargetFraction = 0.3;

TrainConfig source_recipe(std::uint64_t seed) {
    TrainConfig c;
    c.adam.lr = 1e-3;
    c.epochs = 30;
    c.seed = seed;
    return c;
}

TrainConfig adapt_recipe(std::uint64_t seed) {
    TrainConfig c;  // default learning rate and loss weights
    c.epochs = 30;
    c.seed = seed;
    return c;
}

struct DomainPair {
    DomainData source;
    DomainData target;
    SeriesDataset target_train;  // subsampled
};

DomainPair make_pair(std::uint64_t seed) {
    auto src = synth_generate({.length = kLength, .channels = 1, .trend_slopes = {0.0}, .season_period = 24,
                               .noise_std = 0.1, .seed = seed});
    auto tgt = synth_generate({.length = kLength, .channels = 1, .trend_slopes = {0.05}, .season_period = 24,
                               .noise_std = 0.1, .seed = seed + 100});
    DomainPair p{build_domain(src, kLookback, kHorizon, {6, 2, 2}), build_domain(tgt, kLookback, kHorizon, {6, 2, 2}),
                 {}};
    p.target_train = subsample_target(p.target.train, kTargetFraction, seed);
    return p;
}

// Every step record produced by the harness, for the accounting check.
struct Ledger {
    std::size_t records = 0;
    double worst = 0.0;
    void add(const TrainReport& r, const LossWeights& w) {
        for (const auto& s : r.steps) {
            worst = std::max(worst, std::abs(s.all - total_loss(s.components, w, s.kd_weight)));
            ++records;
        }
    }
};
Ledger g_ledger;

// ---------------------------------------------------------------- criterion 1
Outcome criterion1() {
    double op_worst = 0.0;
    std::string op_name;
    const auto cases = opcheck::op_cases();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const double e = opcheck::op_case_error(cases[i], static_cast<int>(i));
        if (e > op_worst) {
            op_worst = e;
            op_name = cases[i].name;
        }
    }

    DualBranchForecaster model(tiny_config(), 4);
    Batch batch{normal_tensor({2, 16, 2}, 5), normal_tensor({2, 4, 2}, 6), {0, 1}};
    KdInputs kd{normal_tensor({2, 4, 2}, 7), normal_tensor({2, 4, 2}, 8), 0.5, 0.001, false};
    ObjectiveSpec spec;
    spec.seeds = PassSeeds::from(9);
    spec.kd = &kd;
    StepTargets targets;
    {
        Tape tape;
        Binding bind(tape, Binding::Mode::constant);
        build_objective(model, bind, batch, spec, targets);
    }
    auto r = fdcheck::check_parameter_gradients(model.parameters(), [&](Binding& bind) {
        return build_objective(model, bind, batch, spec, targets).weighted;
    });
    return {op_worst < kOpTol && r.max_rel_error < kGraphTol,
            "per-op max rel err " + fmt("%.2e", op_worst) + " (" + op_name + ") < 1e-4; L_all graph " +
                fmt("%.2e", r.max_rel_error) + " < 1e-3 over " + std::to_string(r.checked) + " parameters"};
}

// ---------------------------------------------------------------- criterion 2
std::vector<Complex> naive_dft(const std::vector<double>& x) {
    const std::size_t L = x.size();
    std::vector<Complex> X(L / 2 + 1);
    for (std::size_t k = 0; k <= L / 2; ++k) {
        Complex acc = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
            const double a = -2.0 * std::numbers::pi * static_cast<double>((k * t) % L) / static_cast<double>(L);
            acc += x[t] * Complex(std::cos(a), std::sin(a));
        }
        X[k] = acc;
    }
    return X;
}

Outcome criterion2() {
    Rng rng(2024);
    // Moving average: bitwise reconstruction.
    std::size_t ma_elems = 0, ma_mismatch = 0;
    double ma_worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t L = 8 + rng.below(120);
        std::size_t k = 1 + 2 * rng.below((L + 1) / 2);
        if (k > L) k = L % 2 ? L : L - 1;
        const Tensor x = normal_tensor({2, L, 3}, 5000 + rep);
        const ComponentPair p = decompose(x, k);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double back = p.seasonal[i] + p.trend[i];
            ++ma_elems;
            if (back != x[i]) ++ma_mismatch;
            ma_worst = std::max(ma_worst, std::abs(back - x[i]));
        }
    }
    // Fourier split, including k_cut 0 and floor(L/2), odd and even L.
    double fs_worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t L = 2 + rng.below(200) + (rep % 2);
        std::size_t k_cut;
        if (rep % 4 == 0)
            k_cut = 0;
        else if (rep % 4 == 1)
            k_cut = L / 2;
        else
            k_cut = rng.below(L / 2 + 1);
        const Tensor x = normal_tensor({2, L, 2}, 6000 + rep);
        const ComponentPair p = fourier_split(x, k_cut);
        for (std::size_t i = 0; i < x.size(); ++i) fs_worst = std::max(fs_worst, std::abs(p.seasonal[i] + p.trend[i] - x[i]));
    }
    // Forward transform against the O(L^2) oracle, and inverse(forward(x)) == x.
    double dft_worst = 0.0, inv_worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t L = 2 + rng.below(150);
        std::vector<double> x(L);
        for (double& v : x) v = rng.normal();
        const Spectrum s = dft_forward(x);
        const auto oracle = naive_dft(x);
        for (std::size_t k = 0; k < oracle.size(); ++k) dft_worst = std::max(dft_worst, std::abs(s.coefficients[k] - oracle[k]));
        const auto back = dft_inverse(s);
        for (std::size_t t = 0; t < L; ++t) inv_worst = std::max(inv_worst, std::abs(back[t] - x[t]));
    }
    const bool ma_ok = ma_mismatch == 0;
    return {ma_ok && fs_worst <= kFourierTol && dft_worst <= kFourierTol && inv_worst <= kFourierTol,
            "moving average s+t==x bitwise: " + std::to_string(ma_mismatch) + "/" + std::to_string(ma_elems) +
                " elements differ (max " + fmt("%.1e", ma_worst) + "); fourier_split " + fmt("%.1e", fs_worst) +
                ", dft vs naive " + fmt("%.1e", dft_worst) + ", inverse " + fmt("%.1e", inv_worst) + " (<= 1e-9)"};
}

// ---------------------------------------------------------------- criterion 3
Outcome criterion3() {
    Rng rng(77);
    std::size_t mismatches = 0, asymmetric = 0, checked = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const Shape shape{static_cast<std::size_t>(1 + rng.below(3)), static_cast<std::size_t>(1 + rng.below(20)), static_cast<std::size_t>(1 + rng.below(6))};
        Tensor a(shape), b(shape);
        const bool ties = rep % 3 == 0;  // coarse values force repeated differences
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = ties ? std::round(rng.uniform(-3, 3)) : rng.normal();
            b[i] = ties ? std::round(rng.uniform(-3, 3)) : rng.normal();
        }
        for (double alpha : {10.0, 50.0, 90.0}) {
            // Sort-and-count oracle.
            std::vector<double> dg(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) dg[i] = std::abs(a[i] - b[i]);
            std::vector<double> sorted = dg;
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            const auto rank = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(dg.size()) / 100.0));
            const double d = sorted[rank - 1];
            std::size_t expected_zeros = 0;
            for (double v : sorted) expected_zeros += v >= d;

            const InvarianceMask m = build_mask(a, b, alpha, false);
            const InvarianceMask swapped = build_mask(b, a, alpha, false);
            bool ok = m.threshold == d;
            std::size_t zeros = 0;
            for (std::size_t i = 0; i < dg.size(); ++i) {
                ok = ok && m.mask[i] == (dg[i] >= d ? 0.0 : 1.0);
                zeros += m.mask[i] == 0.0;
            }
            ok = ok && zeros == expected_zeros;
            mismatches += !ok;
            asymmetric += !(swapped.mask == m.mask && swapped.threshold == m.threshold);
            ++checked;
        }
    }
    return {mismatches == 0 && asymmetric == 0,
            std::to_string(checked) + " masks: " + std::to_string(mismatches) + " oracle mismatches, " +
                std::to_string(asymmetric) + " order-dependent"};
}

// ---------------------------------------------------------------- criterion 4
Outcome criterion4() {
    bool ok = true;
    std::string notes;
    // alpha = 0 returns the proxy bit-exactly.
    const Tensor zp = normal_tensor({4, 6, 2}, 41), zs = normal_tensor({4, 6, 2}, 42), zt = normal_tensor({4, 6, 2}, 43);
    const bool alpha0 = denoise(zp, zs, zt, 0.0) == zp;
    // theta_t == theta_s: every alpha returns the proxy.
    ForecasterConfig cfg = tiny_config();
    DualBranchForecaster source(cfg, 44), target(cfg, 45);
    target.copy_from(source);
    const Tensor x = normal_tensor({4, 16, 2}, 46);
    const Tensor z_s = source.predict(x), z_t = target.predict(x), z_p = normal_tensor({4, 4, 2}, 47);
    bool same = true;
    for (double a : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) same = same && denoise(z_p, z_s, z_t, a) == z_p;
    // File proxy replaying z_s, alpha = 1, over a full adaptation run.
    auto raw = synth_generate({.length = 240, .channels = 2, .trend_slopes = {0.05, -0.02}, .season_period = 8,
                               .noise_std = 0.1, .seed = 48});
    auto d = build_domain(raw, 16, 4, {6, 2, 2});
    std::map<std::size_t, Tensor> preds;
    {
        const Batch all = d.train.all();
        const Tensor z = source.predict(all.x);
        for (std::size_t b = 0; b < all.size(); ++b) {
            Tensor block({4, 2});
            std::copy(z.data().begin() + b * 8, z.data().begin() + (b + 1) * 8, block.data().begin());
            preds.emplace(all.window_ids[b], std::move(block));
        }
    }
    FileProxy replay(std::move(preds), 4, 2);
    TrainConfig tc;
    tc.adam.lr = 1e-3;
    tc.epochs = 3;
    tc.patience = 0;
    tc.batch_size = 16;
    tc.seed = 49;
    tc.correction_strength = 1.0;
    AdaptResult r = adapt_target(source, replay, d.train, &d.val, tc);
    g_ledger.add(r.report, tc.weights);
    double kd_max = 0.0, e_max = 0.0;
    for (const auto& s : r.report.steps) {
        kd_max = std::max(kd_max, s.components.kd);
        e_max = std::max(e_max, s.proxy_error);
    }
    const bool kd_zero = !r.report.steps.empty() && kd_max <= kKdZeroTol;
    // Confidence.
    const double tau = 0.7;
    const bool c0 = confidence(0.0, tau) == 1.0;
    const bool c1 = std::abs(confidence(tau, tau) - std::exp(-1.0)) <= kConfidenceTol;
    ok = alpha0 && same && kd_zero && c0 && c1;
    notes = std::string("alpha=0 exact ") + (alpha0 ? "yes" : "NO") + ", theta_t==theta_s returns proxy " +
            (same ? "yes" : "NO") + ", replay L_kd max " + fmt("%.1e", kd_max) + " <= 1e-24 over " +
            std::to_string(r.report.steps.size()) + " steps (max e_t " + fmt("%.2e", e_max) + "), C(0)=1 " +
            (c0 ? "yes" : "NO") + ", C(tau)=e^-1 " + (c1 ? "yes" : "NO");
    return {ok, notes};
}

// ---------------------------------------------------------------- criterion 5
Outcome criterion5() {
    const DomainPair p = make_pair(5);
    DualBranchForecaster source(desk_config(), 51);
    ModelProxy proxy(DualBranchForecaster(proxy_config(), 52));
    const std::string src_before = checkpoint_hash(source), proxy_before = checkpoint_hash(proxy.model());
    TrainConfig tc = adapt_recipe(53);
    tc.epochs = 1000;
    tc.patience = 0;
    tc.max_steps = 200;
    AdaptResult r = adapt_target(source, proxy, p.target_train, &p.target.val, tc);
    g_ledger.add(r.report, tc.weights);
    const bool src_same = checkpoint_hash(source) == src_before;
    const bool proxy_same = checkpoint_hash(proxy.model()) == proxy_before;
    const auto before = values_of(source), after = values_of(r.target);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) changed += !(before[i] == after[i]);
    const bool steps_ok = r.report.steps.size() == 200;
    return {src_same && proxy_same && changed > 0 && steps_ok,
            std::to_string(r.report.steps.size()) + " steps; theta_s sha256 " + (src_same ? "unchanged" : "CHANGED") +
                ", theta_ts sha256 " + (proxy_same ? "unchanged" : "CHANGED") + ", " + std::to_string(changed) + "/" +
                std::to_string(before.size()) + " theta_t tensors changed"};
}

// ---------------------------------------------------------------- criteria 6, 7, 9
struct SeedResult {
    double zero_shot = 0, adapted = 0, scratch = 0, no_kd = 0;
    double probe_untrained = 0, probe_trained = 0;
};

struct Experiment {
    std::vector<SeedResult> seeds;
    double shared_seconds = 0;  // proxy pretraining + source pretraining (criterion 6 budget)
    double c6_seconds = 0, c7_seconds = 0, c9_seconds = 0;
    std::string proxy_note;
};

// Generic pretrained proxy: larger model on one pooled series whose trend
// slope changes across regimes. The target slope 0.05 is not among them.
DualBranchForecaster pretrain_proxy(std::string& note) {
    auto pooled = synth_regimes({.channels = 1, .season_period = 24, .noise_std = 0.1, .seed = 900},
                                {0.0, 0.08, -0.03, 0.03}, 500);
    auto d = build_domain(pooled, kLookback, kHorizon, {8, 1, 1});
    DualBranchForecaster proxy(proxy_config(), 901);
    TrainConfig tc = source_recipe(902);
    tc.epochs = 20;
    TrainReport r = pretrain_source(proxy, d.train, &d.val, tc);
    g_ledger.add(r, tc.weights);
    note = "proxy " + std::to_string(proxy.parameter_count()) + " params, pooled val mse " +
           fmt("%.4f", evaluate(proxy, d.val).mse);
    return proxy;
}

Experiment run_experiment() {
    Experiment ex;
    auto t0 = Clock::now();
    const ModelProxy proxy(pretrain_proxy(ex.proxy_note));
    ex.shared_seconds += seconds_since(t0);
    for (std::uint64_t seed : kSeeds) {
        SeedResult sr;
        const DomainPair p = make_pair(seed);

        t0 = Clock::now();
        DualBranchForecaster source(desk_config(), seed);
        const DualBranchForecaster untrained = source;
        TrainConfig src_cfg = source_recipe(seed);
        g_ledger.add(pretrain_source(source, p.source.train, &p.source.val, src_cfg), src_cfg.weights);
        sr.zero_shot = evaluate(source, p.target.test).mse;
        ex.shared_seconds += seconds_since(t0);

        t0 = Clock::now();
        TrainConfig ad_cfg = adapt_recipe(seed);
        AdaptResult full = adapt_target(source, proxy, p.target_train, &p.target.val, ad_cfg);
        g_ledger.add(full.report, ad_cfg.weights);
        sr.adapted = evaluate(full.target, p.target.test).mse;
        // From-scratch target-only model with the source recipe.
        DualBranchForecaster scratch(desk_config(), seed + 1000);
        g_ledger.add(pretrain_source(scratch, p.target_train, &p.target.val, src_cfg), src_cfg.weights);
        sr.scratch = evaluate(scratch, p.target.test).mse;
        ex.c6_seconds += seconds_since(t0);

        t0 = Clock::now();
        TrainConfig no_kd = ad_cfg;
        no_kd.weights.kd = 0.0;
        AdaptResult ablated = adapt_target(source, proxy, p.target_train, &p.target.val, no_kd);
        g_ledger.add(ablated.report, no_kd.weights);
        sr.no_kd = evaluate(ablated.target, p.target.test).mse;
        ex.c9_seconds += seconds_since(t0);

        // Probe on source test windows: the IDFL-trained source model against
        // its own initialization.
        t0 = Clock::now();
        const Tensor x = p.source.test.all().x;
        const Tensor dt = ramp_perturbation(x.shape()), ds = sine_perturbation(x.shape(), 24.0);
        sr.probe_untrained = invariance_probe(untrained, x, dt, ds, 0.1).delta_seasonal;
        sr.probe_trained = invariance_probe(source, x, dt, ds, 0.1).delta_seasonal;
        ex.c7_seconds += seconds_since(t0);

        logger()->info("seed {}: zero-shot {:.4f} adapted {:.4f} scratch {:.4f} no-kd {:.4f} | probe {:.5f} -> {:.5f}",
                       seed, sr.zero_shot, sr.adapted, sr.scratch, sr.no_kd, sr.probe_untrained, sr.probe_trained);
        ex.seeds.push_back(sr);
    }
    return ex;
}

std::string per_seed(const std::vector<SeedResult>& s, const std::function<std::string(const SeedResult&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "; " : "") + ("seed " + std::to_string(kSeeds[i]) + " ") + f(s[i]);
    return out;
}

Outcome criterion6(const Experiment& ex) {
    int beats_zero = 0, beats_scratch = 0;
    for (const auto& s : ex.seeds) {
        beats_zero += s.adapted < s.zero_shot;
        beats_scratch += s.adapted <= s.scratch;
    }
    const double secs = ex.shared_seconds + ex.c6_seconds;
    return {beats_zero == 3 && beats_scratch >= 2 && secs < kLimitC6,
            "adapted < zero-shot " + std::to_string(beats_zero) + "/3, adapted <= scratch " +
                std::to_string(beats_scratch) + "/3 [" +
                per_seed(ex.seeds,
                         [](const SeedResult& s) {
                             return fmt("%.4f", s.adapted) + " vs " + fmt("%.4f", s.zero_shot) + " / " +
                                    fmt("%.4f", s.scratch);
                         }) +
                "]; " + ex.proxy_note + "; " + fmt("%.0f", secs) + " s < 900 s"};
}

Outcome criterion7(const Experiment& ex) {
    int wins = 0;
    for (const auto& s : ex.seeds) wins += s.probe_trained < s.probe_untrained;
    return {wins >= 2 && ex.c7_seconds < kLimitC7,
            "trained delta_s < untrained in " + std::to_string(wins) + "/3 [" +
                per_seed(ex.seeds,
                         [](const SeedResult& s) {
                             return fmt("%.5f", s.probe_trained) + " vs " + fmt("%.5f", s.probe_untrained);
                         }) +
                "]"};
}

Outcome criterion9(const Experiment& ex) {
    double full = 0, ablated = 0;
    for (const auto& s : ex.seeds) {
        full += s.adapted / ex.seeds.size();
        ablated += s.no_kd / ex.seeds.size();
    }
    return {ablated >= full,
            "mean test mse without KD " + fmt("%.5f", ablated) + " >= full " + fmt("%.5f", full) + " [" +
                per_seed(ex.seeds, [](const SeedResult& s) { return fmt("%.5f", s.no_kd) + " vs " + fmt("%.5f", s.adapted); }) +
                "]"};
}

// ---------------------------------------------------------------- criterion 8
Outcome criterion8() {
    const DomainPair p = make_pair(8);
    DualBranchForecaster source(desk_config(), 81);
    const ModelProxy proxy(DualBranchForecaster(proxy_config(), 82));
    TrainConfig tc = adapt_recipe(83);
    tc.max_steps = 40;
    auto run = [&] {
        AdaptResult r = adapt_target(source, proxy, p.target_train, &p.target.val, tc);
        r.report.test = evaluate(r.target, p.target.test);
        g_ledger.add(r.report, tc.weights);
        return r.report.summary().dump(2);
    };
    const std::string a = run(), b = run();
    const bool identical = a == b;
    return {identical && g_ledger.worst <= kAccountingTol && g_ledger.records > 0,
            std::string("summary.json byte-identical ") + (identical ? "yes" : "NO") + " (" + std::to_string(a.size()) +
                " bytes); L_all vs weighted sum max |diff| " + fmt("%.1e", g_ledger.worst) + " <= 1e-9 over " +
                std::to_string(g_ledger.records) + " step records"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria 1-9"};
    std::vector<int> only, known;
    app.add_option("--only", only, "run only these criteria");
    app.add_option("--known-failure", known, "criteria whose FAIL does not fail the exit status");
    CLI11_PARSE(app, argc, argv);
    logger()->set_level(spdlog::level::warn);
    const std::set<int> selected(only.begin(), only.end()), known_set(known.begin(), known.end());
    auto wanted = [&](int n) { return selected.empty() || selected.count(n); };

    int unexpected = 0;
    auto report = [&](int n, const char* title, double seconds, double limit, Outcome o) {
        const bool in_time = limit <= 0 || seconds < limit;
        const bool pass = o.pass && in_time;
        std::printf("criterion %d %s  %s: %s [%.1f s%s]\n", n, pass ? "PASS" : "FAIL", title, o.detail.c_str(), seconds,
                    in_time ? "" : ", over time limit");
        if (!pass && known_set.count(n)) std::printf("criterion %d is a documented known failure\n", n);
        if (!pass && !known_set.count(n)) ++unexpected;
        std::fflush(stdout);
    };
    auto timed = [&](int n, const char* title, double limit, Outcome (*fn)()) {
        if (!wanted(n)) return;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        report(n, title, seconds_since(t0), limit, o);
    };

    timed(1, "gradient correctness", kLimitC1, criterion1);
    timed(2, "decomposition identities", kLimitC2, criterion2);
    timed(3, "mask oracle", kLimitC3, criterion3);
    timed(4, "proxy algebra", kLimitC4, criterion4);
    timed(5, "freeze contract", kLimitC5, criterion5);
    if (wanted(6) || wanted(7) || wanted(9)) {
        Experiment ex;
        std::string failure;
        try {
            ex = run_experiment();
        } catch (const std::exception& e) {
            failure = std::string("exception: ") + e.what();
        }
        auto emit = [&](int n, const char* title, double secs, double limit, Outcome (*fn)(const Experiment&)) {
            if (!wanted(n)) return;
            report(n, title, secs, limit, failure.empty() ? fn(ex) : Outcome{false, failure});
        };
        emit(6, "domain-shift win", ex.shared_seconds + ex.c6_seconds, kLimitC6, criterion6);
        emit(7, "invariance probe", ex.c7_seconds, kLimitC7, criterion7);
        emit(9, "KD ablation direction", ex.c9_seconds, 0, criterion9);
    }
    timed(8, "determinism and accounting", 0, criterion8);
    return unexpected == 0 ? 0 : 1;
}
