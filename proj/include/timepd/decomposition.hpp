#pragma once

#include "timepd/autodiff.hpp"

#include <complex>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace timepd {

/// Seasonal/trend pair; seasonal + trend reproduces the input.
struct ComponentPair {
    Tensor seasonal;
    Tensor trend;
};

/// Graph-side pair, for components that feed a differentiable loss.
struct ComponentVars {
    Var seasonal;
    Var trend;
};

/// Moving-average split along axis 1 of [B x L x C] (axis 0 for rank-1 input):
/// trend = replicate-padded average over an odd window, seasonal = series - trend.
ComponentVars decompose(Var series, std::size_t k_trend);
ComponentPair decompose(const Tensor& series, std::size_t k_trend);

/// Dropout seeds of the two stochastic passes, derived from one step seed.
struct PassSeeds {
    std::uint64_t first = 0;
    std::uint64_t second = 0;
    static PassSeeds from(std::uint64_t seed);
};

/// Applies inverted dropout to the input, then decomposes it. With p = 0 the
/// result equals decompose(series).
ComponentVars dropout_decompose(Var series, std::size_t k_trend, double dropout_p, std::uint64_t seed);

/// Two passes with independent dropout masks.
std::pair<ComponentVars, ComponentVars> stochastic_decompose(Var series, std::size_t k_trend, double dropout_p,
                                                             std::uint64_t seed);
std::pair<ComponentPair, ComponentPair> stochastic_decompose(const Tensor& series, std::size_t k_trend,
                                                             double dropout_p, std::uint64_t seed);

using Complex = std::complex<double>;

/// Half spectrum of a real signal: bins k = 0..floor(L/2).
struct Spectrum {
    std::vector<Complex> coefficients;
    std::size_t length = 0;
};

/// In-place discrete Fourier transform of any length (radix-2, Bluestein otherwise).
/// The inverse includes the 1/L factor.
void fft(std::vector<Complex>& data, bool inverse);

/// X[k] = sum_t x[t] exp(-2 pi i k t / L) for k <= L/2. Bin 0 (and L/2 for even L) is real.
Spectrum dft_forward(std::span<const double> signal);
/// Real signal from a half spectrum, using Hermitian symmetry for the upper bins.
std::vector<double> dft_inverse(const Spectrum& spectrum);

/// Default low-frequency cut-off for a window of length L: max(1, floor(L / 40)).
std::size_t default_k_cut(std::size_t length);

/// Frequency split along `axis`: trend keeps bins 0..k_cut, seasonal keeps
/// bins k_cut+1..floor(L/2); both mirrored so they stay real.
ComponentPair fourier_split(const Tensor& series, std::size_t k_cut, std::size_t axis = 1);

} // namespace timepd
