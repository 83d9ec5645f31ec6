#pragma once

#include "timepd/forecaster.hpp"

#include <array>
#include <string>
#include <vector>

namespace timepd {

/// Input gradients g_j^i w.r.t. the embedding, one per branch and decomposition pass.
/// seasonal_a/b: seasonal branch under the (s,t) and (s,t-bar) variants;
/// trend_a/b: trend branch under the (t,s) and (t,s-bar) variants.
struct BranchGradients {
    Tensor seasonal_a;
    Tensor seasonal_b;
    Tensor trend_a;
    Tensor trend_b;
};

/// Gradient of sum(branch output) w.r.t. the embedding, for each stochastic
/// pass. Parameters are held constant; the embedding is the only leaf.
BranchGradients input_gradients(DualBranchForecaster& model, const Tensor& embedding, const PassSeeds& seeds);

struct InvarianceMask {
    Tensor mask;             // 0/1, shape of the embedding
    double threshold = 0.0;  // d^alpha
    bool degenerate = false; // every gradient difference was zero
};

/// Nearest-rank percentile of the descending-sorted values:
/// element ceil(alpha_pct / 100 * n) - 1.
double nearest_rank_descending(std::vector<double> values, double alpha_pct);

/// m = 0 where |g_a - g_b| >= d^alpha, 1 elsewhere. When every difference is
/// zero the literal rule zeroes the whole mask; with `ones_when_degenerate`
/// an all-ones mask is returned instead and a warning is logged.
InvarianceMask build_mask(const Tensor& g_a, const Tensor& g_b, double alpha_pct, bool ones_when_degenerate = true);

/// (s-hat, t-hat) = (X * m_sea, X * m_tre); masks enter as constants.
ComponentVars invariant_features(Var embedding, const Tensor& mask_seasonal, const Tensor& mask_trend);

/// l(z_tre(t-hat) + z_sea(s-hat), y)
Var invariant_loss(Var z_hat_trend, Var z_hat_seasonal, Var truth);

/// (s', t') from the invariant prediction, split along the horizon axis.
ComponentPair frequency_targets(const Tensor& invariant_prediction, std::size_t k_cut);

/// Sum over both passes of l(z_sea^(i), s') + l(z_tre^(i), t').
Var pred_consistency_loss(const std::array<Var, 2>& z_seasonal, const std::array<Var, 2>& z_trend, Var s_prime,
                          Var t_prime);

/// l(z_tre(t-hat), t') + l(z_sea(s-hat), s')
Var representation_loss(Var z_hat_trend, Var z_hat_seasonal, Var s_prime, Var t_prime);

enum class GradAlignMode {
    first_order,  // sign-agreement surrogate update
    hvp,          // exact gradient of the distance via finite-difference Hessian-vector products
};
GradAlignMode grad_align_mode_from_string(const std::string& name);
const char* to_string(GradAlignMode mode);

struct GradientAlignment {
    double seasonal_distance = 0.0;
    double trend_distance = 0.0;
    double value() const { return seasonal_distance + trend_distance; }
    /// Parameter-space update direction for the loss, one tensor per parameter
    /// in `parameters` order (seasonal branch first, then trend branch).
    std::vector<Parameter*> parameters;
    std::vector<Tensor> update;
};

/// Per-variant gradients G_j^i of l(branch_j(component^(i)), target') w.r.t. the
/// branch parameters, from separate sweeps with the targets held fixed.
GradientAlignment gradient_alignment(DualBranchForecaster& model, const Tensor& embedding, const InstanceStats& stats,
                                     const PassSeeds& seeds, const Tensor& s_prime, const Tensor& t_prime,
                                     GradAlignMode mode = GradAlignMode::first_order, double hvp_eps = 1e-4);

struct ProbeResult {
    double delta_seasonal = 0.0;  // seasonal latent shift under a trend perturbation
    double delta_trend = 0.0;     // trend latent shift under a seasonal perturbation
};

/// Mean over samples of ||phi_s(x + eps dt) - phi_s(x)|| and ||phi_t(x + eps ds) - phi_t(x)||,
/// phi being the branch latent before the head.
ProbeResult invariance_probe(const DualBranchForecaster& model, const Tensor& series, const Tensor& delta_trend,
                             const Tensor& delta_seasonal, double eps = 0.1);

/// Linear ramp t / (L - 1) on every channel, shape [B x L x C].
Tensor ramp_perturbation(const Shape& shape);
/// sin(2 pi t / period) on every channel.
Tensor sine_perturbation(const Shape& shape, double period);

} // namespace timepd
