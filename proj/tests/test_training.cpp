#include "timepd/error.hpp"
#include "timepd/random.hpp"
#include "timepd/training.hpp"

#include "param_fd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <limits>

using namespace timepd;

namespace {

ForecasterConfig tiny_config() {
    ForecasterConfig c;
    c.tsfe = {.lookback = 16, .horizon = 4, .channels = 2, .patch_len = 4, .stride = 4,
              .n_blocks = 1, .d_model = 8, .n_heads = 2, .d_ff = 12};
    c.embed_dim = 4;
    c.k_trend = 5;
    c.decomp_dropout = 0.1;
    return c;
}

DomainData tiny_domain(double slope, std::uint64_t seed) {
    auto raw = synth_generate({.length = 160, .channels = 2, .trend_slopes = {slope, -slope}, .season_period = 8,
                               .noise_std = 0.1, .seed = seed});
    return build_domain(raw, 16, 4, {6, 2, 2});
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal();
    return t;
}

std::vector<Tensor> values_of(const DualBranchForecaster& m) {
    std::vector<Tensor> out;
    for (const Parameter* p : m.parameters()) out.push_back(p->value);
    return out;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.adam.lr = 1e-3;
    c.epochs = 2;
    c.batch_size = 8;
    c.seed = 3;
    return c;
}

// Proxy that replays given per-window predictions.
std::unique_ptr<FileProxy> replay_source(const DualBranchForecaster& source, const SeriesDataset& data) {
    std::map<std::size_t, Tensor> preds;
    const Batch all = data.all();
    const Tensor z = source.predict(all.x);
    const auto& t = source.config().tsfe;
    for (std::size_t b = 0; b < all.size(); ++b) {
        Tensor block({t.horizon, t.channels});
        std::copy(z.data().begin() + b * block.size(), z.data().begin() + (b + 1) * block.size(), block.data().begin());
        preds.emplace(all.window_ids[b], std::move(block));
    }
    return std::make_unique<FileProxy>(std::move(preds), t.horizon, t.channels);
}

} // namespace

TEST(TotalLoss, Examples) {
    const LossComponents ones{1, 1, 1, 1, 1, 1};
    EXPECT_EQ(total_loss({2.5, 1, 1, 1, 1, 1}, LossWeights{0, 0, 0, 0, 0}), 2.5);
    EXPECT_EQ(total_loss(ones, LossWeights{1, 1, 1, 1, 1}), 6.0);
    EXPECT_NEAR(total_loss(ones, LossWeights{}), 3.626, 1e-15);
    EXPECT_EQ(total_loss(ones, LossWeights{}, 0.0), 3.625);
}

TEST(KdLoss, Examples) {
    Tape tape;
    const Tensor z = random_tensor({2, 3}, 1);
    EXPECT_EQ(kd_loss(tape.constant(z), tape.constant(z)).value().item(), 0.0);
    EXPECT_EQ(kd_loss(tape.constant(Tensor::vector({1})), tape.constant(Tensor::vector({0}))).value().item(), 1.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Parameter p("w", random_tensor({3}, 2));
    const Tensor before = p.value;
    Adam adam({});
    adam.step({&p});
    adam.step({&p});
    EXPECT_EQ(p.value, before);
    EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, ConstantGradientMovesByLearningRate) {
    Parameter p("w", Tensor::vector({0.0}));
    AdamConfig cfg;
    cfg.lr = 0.01;
    Adam adam(cfg);
    double previous = 0.0;
    for (int i = 0; i < 50; ++i) {
        p.grad = Tensor::vector({1.0});
        adam.step({&p});
        // m_hat = v_hat = 1 exactly, so every step is lr / (1 + eps).
        EXPECT_NEAR(previous - p.value[0], cfg.lr / (1.0 + cfg.eps), 1e-15);
        previous = p.value[0];
    }
}

TEST(Adam, MatchesScalarRecurrence) {
    Parameter p("w", Tensor::vector({0.3}));
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam adam(cfg);
    double theta = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 20; ++t) {
        const double g = std::sin(static_cast<double>(t)) + theta;
        p.grad = Tensor::vector({g});
        adam.step({&p});
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        theta -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        ASSERT_NEAR(p.value[0], theta, 1e-14);
    }
}

TEST(Adam, SkipsFrozenAndRejectsNonFinite) {
    Parameter frozen("f", Tensor::vector({1.0}));
    frozen.frozen = true;
    frozen.grad = Tensor::vector({5.0});
    Adam adam({});
    adam.step({&frozen});
    EXPECT_EQ(frozen.value[0], 1.0);
    Parameter bad("b", Tensor::vector({1.0}));
    bad.grad = Tensor::vector({std::numeric_limits<double>::quiet_NaN()});
    EXPECT_THROW(adam.step({&bad}), NumericError);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.weights.kd = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.adam.lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.correction_strength = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.mask_percentile = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
    DualBranchForecaster model(tiny_config(), 4);
    Batch batch{random_tensor({2, 16, 2}, 5), random_tensor({2, 4, 2}, 6), {0, 1}};
    KdInputs kd{random_tensor({2, 4, 2}, 7), random_tensor({2, 4, 2}, 8), 0.5, 0.001, false};
    ObjectiveSpec spec;
    spec.seeds = PassSeeds::from(9);
    spec.kd = &kd;
    StepTargets targets;
    {
        Tape tape;
        Binding bind(tape, Binding::Mode::constant);
        build_objective(model, bind, batch, spec, targets);
    }
    ASSERT_TRUE(targets.ready);
    auto r = fdcheck::check_parameter_gradients(model.parameters(), [&](Binding& bind) {
        return build_objective(model, bind, batch, spec, targets).weighted;
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Objective, StrictModeDropsSupervisedTerms) {
    DualBranchForecaster model(tiny_config(), 10);
    Batch batch{random_tensor({2, 16, 2}, 11), random_tensor({2, 4, 2}, 12), {0, 1}};
    ObjectiveSpec spec;
    spec.seeds = PassSeeds::from(13);
    spec.strict_unsupervised = true;
    StepTargets targets;
    Tape tape;
    Binding bind(tape, Binding::Mode::constant);
    Objective o = build_objective(model, bind, batch, spec, targets);
    EXPECT_EQ(o.loss.value().item(), 0.0);
    EXPECT_EQ(o.inv.value().item(), 0.0);
    EXPECT_GT(o.pred.value().item(), 0.0);
    EXPECT_GT(o.rep.value().item(), 0.0);
}

TEST(Objective, FlowThroughScalesKdGradient) {
    DualBranchForecaster model(tiny_config(), 14);
    Batch batch{random_tensor({2, 16, 2}, 15), random_tensor({2, 4, 2}, 16), {0, 1}};
    const double alpha = 0.3;
    auto head_grad = [&](bool flow) {
        KdInputs kd{random_tensor({2, 4, 2}, 17), random_tensor({2, 4, 2}, 18), alpha, 1.0, flow};
        ObjectiveSpec spec;
        spec.weights = {0, 0, 0, 0, 1};
        spec.seeds = PassSeeds::from(19);
        spec.invariance = false;
        spec.strict_unsupervised = true;
        spec.kd = &kd;
        StepTargets targets;
        Tape tape;
        Binding bind(tape, Binding::Mode::trainable);
        Objective o = build_objective(model, bind, batch, spec, targets);
        Gradients g = tape.backward(o.weighted);
        return std::make_pair(o.kd.value().item(), bind.gradient(g, model.parameter("trend/head/bias")));
    };
    auto [v_stop, g_stop] = head_grad(false);
    auto [v_flow, g_flow] = head_grad(true);
    EXPECT_NEAR(v_stop, v_flow, 1e-12);
    for (std::size_t i = 0; i < g_stop.size(); ++i) EXPECT_NEAR(g_flow[i], (1 - alpha) * g_stop[i], 1e-12);
}

TEST(Pretrain, ZeroEpochsKeepsInitialisation) {
    DualBranchForecaster m(tiny_config(), 20);
    const auto before = values_of(m);
    auto d = tiny_domain(0.02, 21);
    TrainConfig c = quick_config();
    c.epochs = 0;
    auto report = pretrain_source(m, d.train, &d.val, c);
    EXPECT_TRUE(report.steps.empty());
    EXPECT_EQ(values_of(m), before);
}

TEST(Pretrain, DeterministicAndAccounted) {
    auto d = tiny_domain(0.02, 22);
    TrainConfig c = quick_config();
    DualBranchForecaster a(tiny_config(), 23), b(tiny_config(), 23);
    auto ra = pretrain_source(a, d.train, &d.val, c);
    auto rb = pretrain_source(b, d.train, &d.val, c);
    EXPECT_EQ(ra.summary().dump(), rb.summary().dump());
    EXPECT_EQ(checkpoint_json(a).dump(), checkpoint_json(b).dump());
    ASSERT_FALSE(ra.steps.empty());
    for (const auto& s : ra.steps) {
        EXPECT_NEAR(s.all, total_loss(s.components, c.weights, s.kd_weight), 1e-9);
        EXPECT_EQ(s.components.kd, 0.0);
        EXPECT_GT(s.components.grad, 0.0);
    }
}

TEST(Pretrain, MaxStepsCapsTheRun) {
    auto d = tiny_domain(0.02, 24);
    TrainConfig c = quick_config();
    c.epochs = 50;
    c.max_steps = 5;
    DualBranchForecaster m(tiny_config(), 25);
    EXPECT_EQ(pretrain_source(m, d.train, nullptr, c).steps.size(), 5u);
}

TEST(Pretrain, EarlyStoppingRestoresBest) {
    auto d = tiny_domain(0.02, 26);
    TrainConfig c = quick_config();
    c.epochs = 40;
    c.patience = 1;
    c.adam.lr = 0.05;  // noisy on purpose
    DualBranchForecaster m(tiny_config(), 27);
    auto r = pretrain_source(m, d.train, &d.val, c);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.epochs) best = std::min(best, e.val_mse);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(evaluate(m, d.val).mse, best);
    EXPECT_EQ(r.epochs[r.best_epoch].val_mse, best);
}

TEST(Pretrain, LearnsNoiselessRamp) {
    ForecasterConfig mc = tiny_config();
    mc.tsfe.channels = 1;
    auto raw = synth_generate({.length = 400, .channels = 1, .trend_slopes = {0.1}, .season_amplitude = 0.0});
    auto d = build_domain(raw, 16, 4, {6, 2, 2});
    TrainConfig c = quick_config();
    c.epochs = 50;
    c.batch_size = 32;
    DualBranchForecaster m(mc, 28);
    auto r = pretrain_source(m, d.train, &d.val, c);
    EXPECT_LT(evaluate(m, d.val).mse, 1e-2);
    EXPECT_LE(r.epochs.size(), 50u);
}

TEST(Pretrain, DivergenceIsReported) {
    auto d = tiny_domain(0.02, 29);
    DualBranchForecaster m(tiny_config(), 30);
    m.parameter("trend/head/bias").value[0] = std::numeric_limits<double>::infinity();
    try {
        pretrain_source(m, d.train, nullptr, quick_config());
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos) << e.what();
    }
}

TEST(Adapt, ZeroIterationsCopiesSource) {
    auto d = tiny_domain(0.05, 31);
    DualBranchForecaster source(tiny_config(), 32);
    ModelProxy proxy(DualBranchForecaster(tiny_config(), 33));
    TrainConfig c = quick_config();
    c.epochs = 0;
    auto r = adapt_target(source, proxy, d.train, &d.val, c);
    EXPECT_EQ(values_of(r.target), values_of(source));
    EXPECT_EQ(r.report.initial_proxy_error, 0.0);
    EXPECT_EQ(r.report.initial_confidence, 1.0);
}

TEST(Adapt, KdOnlyStepTouchesOnlyTarget) {
    auto d = tiny_domain(0.05, 34);
    DualBranchForecaster source(tiny_config(), 35);
    ModelProxy proxy(DualBranchForecaster(tiny_config(), 36));
    const auto source_before = values_of(source);
    const auto proxy_before = values_of(proxy.model());
    TrainConfig c = quick_config();
    c.weights = {0, 0, 0, 0, 1};
    c.invariance = false;
    c.strict_unsupervised = true;
    c.max_steps = 1;
    auto r = adapt_target(source, proxy, d.train, nullptr, c);
    ASSERT_EQ(r.report.steps.size(), 1u);
    EXPECT_GT(r.report.steps[0].components.kd, 0.0);
    EXPECT_EQ(values_of(source), source_before);
    EXPECT_EQ(values_of(proxy.model()), proxy_before);
    EXPECT_NE(values_of(r.target), source_before);
}

TEST(Adapt, ReplayedSourceWithFullCorrectionGivesZeroKd) {
    auto d = tiny_domain(0.05, 37);
    DualBranchForecaster source(tiny_config(), 38);
    auto proxy = replay_source(source, d.train);
    TrainConfig c = quick_config();
    c.correction_strength = 1.0;
    auto r = adapt_target(source, *proxy, d.train, &d.val, c);
    bool drifted = false;
    for (const auto& s : r.report.steps) {
        EXPECT_LE(s.components.kd, 1e-20);
        drifted = drifted || s.proxy_error > 0.0;
    }
    EXPECT_TRUE(drifted);
}

TEST(Adapt, ConfidenceCanScaleKdWeight) {
    auto d = tiny_domain(0.05, 39);
    DualBranchForecaster source(tiny_config(), 40);
    ModelProxy proxy(DualBranchForecaster(tiny_config(), 41));
    TrainConfig c = quick_config();
    c.confidence_scales_kd = true;
    c.max_steps = 4;
    auto r = adapt_target(source, proxy, d.train, nullptr, c);
    for (const auto& s : r.report.steps) {
        EXPECT_EQ(s.kd_weight, c.weights.kd * s.confidence);
        EXPECT_EQ(s.confidence, confidence(s.proxy_error, c.temperature));
        EXPECT_NEAR(s.all, total_loss(s.components, c.weights, s.kd_weight), 1e-9);
    }
}

TEST(Adapt, RejectsMismatchedData) {
    auto d = tiny_domain(0.05, 42);
    auto cfg = tiny_config();
    cfg.tsfe.horizon = 8;
    DualBranchForecaster source(cfg, 43);
    ModelProxy proxy(DualBranchForecaster(cfg, 44));
    EXPECT_THROW(adapt_target(source, proxy, d.train, nullptr, quick_config()), ShapeError);
}

TEST(Report, SummaryAndSteps) {
    auto d = tiny_domain(0.02, 45);
    DualBranchForecaster m(tiny_config(), 46);
    TrainConfig c = quick_config();
    c.max_steps = 3;
    auto r = pretrain_source(m, d.train, &d.val, c);
    r.test = evaluate(m, d.test);
    const auto s = r.summary();
    EXPECT_EQ(s["phase"], "pretrain");
    EXPECT_EQ(s["steps"], 3);
    EXPECT_TRUE(s.contains("test"));
    EXPECT_FALSE(s.contains("wall_seconds"));
    EXPECT_EQ(s["config"]["lambda_rep"], 0.125);
    const auto path = std::filesystem::temp_directory_path() / "timepd_steps_test.jsonl";
    r.write_steps(path);
    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("all"));
        EXPECT_TRUE(j.contains("C_t"));
        ++lines;
    }
    EXPECT_EQ(lines, 3u);
    std::filesystem::remove(path);
}
