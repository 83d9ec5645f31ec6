#include "timepd/invariance.hpp"

#include "timepd/error.hpp"
#include "timepd/log.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace timepd {

namespace {

Var branch_component(const ComponentVars& parts, BranchKind kind) {
    return kind == BranchKind::trend ? parts.trend : parts.seasonal;
}

// Gradient of l(branch_j(component of pass `seed`), target) w.r.t. the branch parameters.
std::vector<Tensor> branch_parameter_gradients(DualBranchForecaster& model, BranchKind kind, const Tensor& embedding,
                                               const InstanceStats& stats, std::uint64_t seed,
                                               const Tensor& target) {
    const auto& cfg = model.config();
    Tape tape;
    Binding bind(tape, Binding::Mode::trainable, /*force_frozen=*/true);
    ComponentVars parts = dropout_decompose(tape.constant(embedding), cfg.k_trend, cfg.decomp_dropout, seed);
    Var z = model.branch_output(bind, kind, branch_component(parts, kind), stats);
    Gradients grads = tape.backward(ops::mse(z, tape.constant(target)));
    std::vector<Tensor> out;
    for (Parameter* p : model.branch_parameters(kind)) out.push_back(bind.gradient(grads, *p));
    return out;
}

double distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            const double d = a[i][k] - b[i][k];
            s += d * d;
        }
    return std::sqrt(s);
}

void shift_parameters(const std::vector<Parameter*>& params, const std::vector<Tensor>& direction, double step) {
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t k = 0; k < params[i]->value.size(); ++k) params[i]->value[k] += step * direction[i][k];
}

} // namespace

BranchGradients input_gradients(DualBranchForecaster& model, const Tensor& embedding, const PassSeeds& seeds) {
    const auto& cfg = model.config();
    Tape tape;
    Binding bind(tape, Binding::Mode::constant);
    Var x = tape.leaf(embedding);
    BranchGradients out;
    auto grad_of = [&](BranchKind kind, std::uint64_t seed) {
        ComponentVars parts = dropout_decompose(x, cfg.k_trend, cfg.decomp_dropout, seed);
        Var z = model.branch(bind, kind, branch_component(parts, kind));
        Tensor g = tape.backward(ops::sum(z))[x];
        if (!g.all_finite()) throw NumericError("input_gradients: non-finite gradient");
        return g;
    };
    out.seasonal_a = grad_of(BranchKind::seasonal, seeds.first);
    out.seasonal_b = grad_of(BranchKind::seasonal, seeds.second);
    out.trend_a = grad_of(BranchKind::trend, seeds.first);
    out.trend_b = grad_of(BranchKind::trend, seeds.second);
    return out;
}

double nearest_rank_descending(std::vector<double> values, double alpha_pct) {
    if (values.empty()) throw Error("nearest_rank_descending: empty input");
    if (!(alpha_pct > 0.0 && alpha_pct <= 100.0)) throw ConfigError("mask percentile must lie in (0, 100]");
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(alpha_pct * n / 100.0));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    auto nth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(values.begin(), nth, values.end(), std::greater<>());
    return *nth;
}

InvarianceMask build_mask(const Tensor& g_a, const Tensor& g_b, double alpha_pct, bool ones_when_degenerate) {
    require_same_shape(g_a, g_b, "build_mask");
    std::vector<double> diff(g_a.size());
    bool all_zero = true;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] = std::abs(g_a[i] - g_b[i]);
        all_zero = all_zero && diff[i] == 0.0;
    }
    InvarianceMask out;
    out.threshold = nearest_rank_descending(diff, alpha_pct);
    out.degenerate = all_zero;
    out.mask = Tensor(g_a.shape());
    if (all_zero && ones_when_degenerate) {
        logger()->warn("build_mask: gradient variants are identical; using an all-ones mask");
        out.mask.fill(1.0);
        return out;
    }
    for (std::size_t i = 0; i < diff.size(); ++i) out.mask[i] = diff[i] >= out.threshold ? 0.0 : 1.0;
    return out;
}

ComponentVars invariant_features(Var embedding, const Tensor& mask_seasonal, const Tensor& mask_trend) {
    return {ops::mask_mul(embedding, mask_seasonal), ops::mask_mul(embedding, mask_trend)};
}

Var invariant_loss(Var z_hat_trend, Var z_hat_seasonal, Var truth) {
    return forecasting_loss(z_hat_trend, z_hat_seasonal, truth);
}

ComponentPair frequency_targets(const Tensor& invariant_prediction, std::size_t k_cut) {
    return fourier_split(invariant_prediction, k_cut, 1);
}

Var pred_consistency_loss(const std::array<Var, 2>& z_seasonal, const std::array<Var, 2>& z_trend, Var s_prime,
                          Var t_prime) {
    Var total = ops::mse(z_seasonal[0], s_prime);
    total = ops::add(total, ops::mse(z_seasonal[1], s_prime));
    total = ops::add(total, ops::mse(z_trend[0], t_prime));
    return ops::add(total, ops::mse(z_trend[1], t_prime));
}

Var representation_loss(Var z_hat_trend, Var z_hat_seasonal, Var s_prime, Var t_prime) {
    return ops::add(ops::mse(z_hat_trend, t_prime), ops::mse(z_hat_seasonal, s_prime));
}

GradAlignMode grad_align_mode_from_string(const std::string& name) {
    if (name == "first_order") return GradAlignMode::first_order;
    if (name == "hvp") return GradAlignMode::hvp;
    throw ConfigError("unknown gradient alignment mode '" + name + "' (expected first_order or hvp)");
}

const char* to_string(GradAlignMode mode) { return mode == GradAlignMode::hvp ? "hvp" : "first_order"; }

GradientAlignment gradient_alignment(DualBranchForecaster& model, const Tensor& embedding, const InstanceStats& stats,
                                     const PassSeeds& seeds, const Tensor& s_prime, const Tensor& t_prime,
                                     GradAlignMode mode, double hvp_eps) {
    GradientAlignment out;
    for (BranchKind kind : {BranchKind::seasonal, BranchKind::trend}) {
        const Tensor& target = kind == BranchKind::seasonal ? s_prime : t_prime;
        auto grads = [&](std::uint64_t seed) {
            return branch_parameter_gradients(model, kind, embedding, stats, seed, target);
        };
        const std::vector<Tensor> ga = grads(seeds.first);
        const std::vector<Tensor> gb = grads(seeds.second);
        const double d = distance(ga, gb);
        if (!std::isfinite(d)) throw NumericError("gradient_alignment: non-finite gradients");
        (kind == BranchKind::seasonal ? out.seasonal_distance : out.trend_distance) = d;

        const std::vector<Parameter*> params = model.branch_parameters(kind);
        std::vector<Tensor> update;
        if (mode == GradAlignMode::first_order) {
            // Keep the mean gradient only where both variants agree in sign.
            for (std::size_t i = 0; i < ga.size(); ++i) {
                Tensor u(ga[i].shape());
                for (std::size_t k = 0; k < u.size(); ++k) {
                    const double a = ga[i][k], b = gb[i][k];
                    u[k] = (a > 0 && b > 0) || (a < 0 && b < 0) ? 0.5 * (a + b) : 0.0;
                }
                update.push_back(std::move(u));
            }
        } else {
            // grad of ||G_a - G_b|| = (H_a - H_b) v with v the unit difference.
            std::vector<Tensor> v;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                Tensor t(ga[i].shape());
                for (std::size_t k = 0; k < t.size(); ++k) t[k] = d > 0 ? (ga[i][k] - gb[i][k]) / d : 0.0;
                v.push_back(std::move(t));
            }
            if (d > 0) {
                shift_parameters(params, v, hvp_eps);
                auto pa = grads(seeds.first), pb = grads(seeds.second);
                shift_parameters(params, v, -2 * hvp_eps);
                auto ma = grads(seeds.first), mb = grads(seeds.second);
                shift_parameters(params, v, hvp_eps);
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    Tensor t(ga[i].shape());
                    for (std::size_t k = 0; k < t.size(); ++k) {
                        t[k] = ((pa[i][k] - ma[i][k]) - (pb[i][k] - mb[i][k])) / (2 * hvp_eps);
                    }
                    update.push_back(std::move(t));
                }
            } else {
                for (const Tensor& g : ga) update.push_back(Tensor::zeros(g.shape()));
            }
        }
        out.parameters.insert(out.parameters.end(), params.begin(), params.end());
        for (auto& u : update) out.update.push_back(std::move(u));
    }
    return out;
}

ProbeResult invariance_probe(const DualBranchForecaster& model, const Tensor& series, const Tensor& delta_trend,
                             const Tensor& delta_seasonal, double eps) {
    require_same_shape(series, delta_trend, "invariance_probe");
    require_same_shape(series, delta_seasonal, "invariance_probe");
    auto shift = [&](const Tensor& delta) {
        Tensor out = series;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += eps * delta[i];
        return out;
    };
    auto mean_distance = [](const Tensor& a, const Tensor& b) {
        const std::size_t B = a.dim(0);
        const std::size_t per = a.size() / B;
        double total = 0.0;
        for (std::size_t s = 0; s < B; ++s) {
            double acc = 0.0;
            for (std::size_t k = 0; k < per; ++k) {
                const double d = a[s * per + k] - b[s * per + k];
                acc += d * d;
            }
            total += std::sqrt(acc);
        }
        return total / static_cast<double>(B);
    };
    ProbeResult r;
    r.delta_seasonal = mean_distance(model.latent(BranchKind::seasonal, shift(delta_trend)),
                                     model.latent(BranchKind::seasonal, series));
    r.delta_trend = mean_distance(model.latent(BranchKind::trend, shift(delta_seasonal)),
                                  model.latent(BranchKind::trend, series));
    return r;
}

Tensor ramp_perturbation(const Shape& shape) {
    if (shape.size() != 3) throw ShapeError("ramp_perturbation: expected [B x L x C]");
    Tensor out(shape);
    const std::size_t L = shape[1], C = shape[2];
    const double denom = L > 1 ? static_cast<double>(L - 1) : 1.0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>((i / C) % L) / denom;
    return out;
}

Tensor sine_perturbation(const Shape& shape, double period) {
    if (shape.size() != 3) throw ShapeError("sine_perturbation: expected [B x L x C]");
    if (!(period > 0)) throw Error("sine_perturbation: period must be positive");
    Tensor out(shape);
    const std::size_t L = shape[1], C = shape[2];
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::sin(2.0 * std::numbers::pi * static_cast<double>((i / C) % L) / period);
    }
    return out;
}

} // namespace timepd
