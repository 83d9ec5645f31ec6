#include "timepd/decomposition.hpp"

#include "timepd/error.hpp"
#include "timepd/random.hpp"

#include <cmath>
#include <numbers>

namespace timepd {

namespace {

std::size_t time_axis(const Shape& shape) { return shape.size() == 1 ? 0 : 1; }

void validate_kernel(const Shape& shape, std::size_t k_trend) {
    if (shape.empty()) throw ShapeError("decompose: scalar input");
    const std::size_t length = shape[time_axis(shape)];
    if (k_trend == 0 || k_trend > length || k_trend % 2 == 0) {
        throw Error("k_trend must be odd and within [1, " + std::to_string(length) + "], got " +
                    std::to_string(k_trend));
    }
}

} // namespace

ComponentVars decompose(Var series, std::size_t k_trend) {
    validate_kernel(series.shape(), k_trend);
    Var trend = ops::avg_pool_1d(series, k_trend, time_axis(series.shape()));
    return {ops::sub(series, trend), trend};
}

ComponentPair decompose(const Tensor& series, std::size_t k_trend) {
    Tape tape;
    auto parts = decompose(tape.constant(series), k_trend);
    return {parts.seasonal.value(), parts.trend.value()};
}

PassSeeds PassSeeds::from(std::uint64_t seed) { return {derive_seed(seed, 1), derive_seed(seed, 2)}; }

ComponentVars dropout_decompose(Var series, std::size_t k_trend, double dropout_p, std::uint64_t seed) {
    validate_kernel(series.shape(), k_trend);
    return decompose(ops::dropout(series, dropout_p, seed), k_trend);
}

std::pair<ComponentVars, ComponentVars> stochastic_decompose(Var series, std::size_t k_trend, double dropout_p,
                                                             std::uint64_t seed) {
    const PassSeeds seeds = PassSeeds::from(seed);
    return {dropout_decompose(series, k_trend, dropout_p, seeds.first),
            dropout_decompose(series, k_trend, dropout_p, seeds.second)};
}

std::pair<ComponentPair, ComponentPair> stochastic_decompose(const Tensor& series, std::size_t k_trend,
                                                             double dropout_p, std::uint64_t seed) {
    Tape tape;
    auto [a, b] = stochastic_decompose(tape.constant(series), k_trend, dropout_p, seed);
    return {{a.seasonal.value(), a.trend.value()}, {b.seasonal.value(), b.trend.value()}};
}

// ---------------------------------------------------------------------------
// Spectral analysis
// ---------------------------------------------------------------------------

namespace {

bool is_power_of_two(std::size_t n) { return n && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<Complex>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double angle = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // Twiddles computed directly rather than by repeated multiplication
                // to keep the error flat in len.
                const Complex w = std::polar(1.0, angle * static_cast<double>(k));
                const Complex u = a[i + k];
                const Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

// Chirp-z: an arbitrary-length DFT as a power-of-two circular convolution.
void fft_bluestein(std::vector<Complex>& a, bool inverse) {
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<Complex> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small and exact.
        const auto k2 = static_cast<double>((static_cast<unsigned long long>(k) * k) % (2 * n));
        chirp[k] = std::polar(1.0, sign * std::numbers::pi * k2 / static_cast<double>(n));
    }
    std::vector<Complex> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    fft_radix2(x, false);
    fft_radix2(y, false);
    for (std::size_t i = 0; i < m; ++i) x[i] *= y[i];
    fft_radix2(x, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

} // namespace

void fft(std::vector<Complex>& data, bool inverse) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    if (is_power_of_two(n)) {
        fft_radix2(data, inverse);
    } else {
        fft_bluestein(data, inverse);
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& v : data) v *= inv_n;
    }
}

Spectrum dft_forward(std::span<const double> signal) {
    const std::size_t L = signal.size();
    if (L < 2) throw Error("DFT needs at least 2 samples, got " + std::to_string(L));
    std::vector<Complex> buf(signal.begin(), signal.end());
    fft(buf, false);
    Spectrum s;
    s.length = L;
    s.coefficients.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(L / 2 + 1));
    s.coefficients[0].imag(0.0);
    if (L % 2 == 0) s.coefficients[L / 2].imag(0.0);
    return s;
}

std::vector<double> dft_inverse(const Spectrum& spectrum) {
    const std::size_t L = spectrum.length;
    if (L < 2) throw Error("inverse DFT needs length >= 2");
    if (spectrum.coefficients.size() != L / 2 + 1) {
        throw ShapeError("half spectrum of length " + std::to_string(L) + " needs " + std::to_string(L / 2 + 1) +
                         " bins, got " + std::to_string(spectrum.coefficients.size()));
    }
    std::vector<Complex> full(L);
    for (std::size_t k = 0; k <= L / 2; ++k) full[k] = spectrum.coefficients[k];
    full[0] = full[0].real();
    if (L % 2 == 0) full[L / 2] = full[L / 2].real();
    for (std::size_t k = 1; k < (L + 1) / 2; ++k) full[L - k] = std::conj(full[k]);
    fft(full, true);
    std::vector<double> out(L);
    for (std::size_t t = 0; t < L; ++t) out[t] = full[t].real();
    return out;
}

std::size_t default_k_cut(std::size_t length) { return std::max<std::size_t>(1, length / 40); }

ComponentPair fourier_split(const Tensor& series, std::size_t k_cut, std::size_t axis) {
    const Shape& shape = series.shape();
    if (axis >= shape.size()) throw ShapeError("fourier_split: axis out of range for " + to_string(shape));
    const std::size_t L = shape[axis];
    if (L < 2) throw Error("fourier_split: series length must be >= 2");
    if (k_cut > L / 2) {
        throw Error("k_cut must lie in [0, " + std::to_string(L / 2) + "], got " + std::to_string(k_cut));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    ComponentPair out{Tensor(shape), Tensor(shape)};
    std::vector<double> line(L);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * L * inner + in;
            for (std::size_t t = 0; t < L; ++t) line[t] = series[base + t * inner];
            const Spectrum full = dft_forward(line);
            Spectrum low = full, high = full;
            for (std::size_t k = 0; k <= L / 2; ++k) {
                if (k <= k_cut) {
                    high.coefficients[k] = 0.0;
                } else {
                    low.coefficients[k] = 0.0;
                }
            }
            const auto trend = dft_inverse(low);
            const auto seasonal = dft_inverse(high);
            for (std::size_t t = 0; t < L; ++t) {
                out.trend[base + t * inner] = trend[t];
                out.seasonal[base + t * inner] = seasonal[t];
            }
        }
    }
    return out;
}

} // namespace timepd
