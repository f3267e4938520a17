#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "llre/error.hpp"
#include "llre/rng.hpp"
#include "llre/tensor.hpp"

// Poisson-Gaussian sensor model: x ~ k*Pois(x*/k) + N(0, sigma2), amplified
// by an exposure ratio, plus the mean/variance calibration that recovers
// (k, sigma2) from a gray-chart stack.

namespace llre {

struct NoiseParams {
    double k = 1.0;      // system gain, DN per photo-electron
    double sigma2 = 0.0; // read-noise variance, DN^2

    void validate() const {
        if (!(k > 0.0)) throw InputError("noise gain k must be positive");
        if (sigma2 < 0.0) throw InputError("read-noise variance must be nonnegative");
    }
};

struct ExposureSetting {
    double ratio = 1.0;

    void validate() const {
        if (!(ratio >= 1.0)) throw InputError("amplification ratio must be >= 1");
    }
};

// synthetic stand-in for the captured gray-scale chart sequence
struct ChartStack {
    std::vector<Tensor<double>> frames;
    Tensor<double> true_signal; // expected clean DN per pixel
    std::size_t levels = 0;
    double range_lo = 0.0;
    double range_hi = 0.0;
    std::uint64_t seed = 0;
    std::optional<NoiseParams> source; // known params when synthetic
};

namespace noise_detail {

// sequential CDF search; intended for rate <= ~30
inline double poisson_inversion(double lam, double u) {
    double p = std::exp(-lam);
    double cum = p;
    double k = 0.0;
    const double cap = lam + 18.0 * std::sqrt(lam) + 40.0;
    while (u > cum && k < cap) {
        k += 1.0;
        p *= lam / k;
        cum += p;
    }
    return k;
}

// exact for rate <= 1000 (sums of Poisson chunks are Poisson);
// Gaussian approximation above that
inline double poisson_sample(const CounterRng& rng, double lam, std::uint64_t slot0) {
    if (lam <= 0.0) return 0.0;
    if (lam > 1000.0) {
        const double z = rng.normal(slot0);
        return std::max(0.0, lam + std::sqrt(lam) * z);
    }
    double total = 0.0;
    double rem = lam;
    std::uint64_t slot = slot0;
    while (rem > 30.0) {
        total += poisson_inversion(30.0, rng.uniform(slot++));
        rem -= 30.0;
    }
    total += poisson_inversion(rem, rng.uniform(slot));
    return total;
}

constexpr std::uint64_t kGaussSlot = 0x4000000000000000ULL;

} // namespace noise_detail

// One short-exposure observation per pixel: photon shot noise at the
// pre-amplification signal level, read noise, optional sensor clipping,
// then digital amplification. Deterministic per (seed, pixel index).
template <typename T>
Tensor<T> sample_noisy(const Tensor<T>& clean, const NoiseParams& params, const ExposureSetting& exposure,
                       std::uint64_t seed, std::optional<double> white_level = std::nullopt) {
    params.validate();
    exposure.validate();
    const double sigma = std::sqrt(params.sigma2);
    Tensor<T> out(clean.shape());
    const T* pc = clean.data();
    T* po = out.data();
    for (std::size_t i = 0, n = clean.numel(); i < n; ++i) {
        const double x_star = static_cast<double>(pc[i]);
        if (x_star < 0.0) throw InputError("clean signal must be nonnegative, pixel " + std::to_string(i));
        const CounterRng rng{seed, i};
        double dn = params.k * noise_detail::poisson_sample(rng, x_star / params.k, 0);
        if (sigma > 0.0) dn += sigma * rng.normal(noise_detail::kGaussSlot);
        if (white_level) dn = std::clamp(dn, 0.0, *white_level);
        po[i] = static_cast<T>(dn * exposure.ratio);
    }
    return out;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

// Gaussian view of the amplified short exposure: noise scales with ratio
inline Moments amplified_moments(double x_star, const NoiseParams& params, const ExposureSetting& exposure) {
    params.validate();
    exposure.validate();
    if (x_star < 0.0) throw InputError("x* must be nonnegative");
    const double r = exposure.ratio;
    return {x_star * r, params.k * x_star * r * r + params.sigma2 * r * r};
}

// Gaussian view of the long-exposure reference at the same brightness
inline Moments reference_moments(double x_star, const NoiseParams& params, const ExposureSetting& exposure) {
    params.validate();
    exposure.validate();
    if (x_star < 0.0) throw InputError("x* must be nonnegative");
    const double r = exposure.ratio;
    return {x_star * r, params.k * x_star * r + params.sigma2};
}

struct ChartSpec {
    std::size_t levels = 16;
    std::size_t frame_count = 50;
    std::size_t height = 128;
    std::size_t width = 128;
    double range_lo = 50.0;
    double range_hi = 800.0;
};

// Step wedge of constant vertical strips, observed frame_count times at
// ratio 1. Frame f draws from a seed derived with mix64, so frames are
// order-independent.
inline ChartStack synthesize_gray_chart(const ChartSpec& spec, const NoiseParams& params, std::uint64_t seed) {
    params.validate();
    if (spec.levels < 2) throw ConfigError("chart needs at least 2 gray levels");
    if (spec.frame_count < 2) throw ConfigError("chart needs at least 2 frames");
    if (spec.height < 1 || spec.width < spec.levels)
        throw ConfigError("chart patches smaller than one pixel: width " + std::to_string(spec.width) + " for " +
                          std::to_string(spec.levels) + " levels");
    if (!(spec.range_lo >= 0.0) || !(spec.range_hi > spec.range_lo))
        throw ConfigError("chart DN range must satisfy 0 <= lo < hi");

    ChartStack stack;
    stack.levels = spec.levels;
    stack.range_lo = spec.range_lo;
    stack.range_hi = spec.range_hi;
    stack.seed = seed;
    stack.source = params;

    stack.true_signal = Tensor<double>({spec.height, spec.width});
    const std::size_t strip = spec.width / spec.levels;
    for (std::size_t x = 0; x < spec.width; ++x) {
        const std::size_t level = std::min(x / strip, spec.levels - 1);
        const double value =
            spec.range_lo + (spec.range_hi - spec.range_lo) * static_cast<double>(level) / static_cast<double>(spec.levels - 1);
        for (std::size_t y = 0; y < spec.height; ++y) stack.true_signal.data()[y * spec.width + x] = value;
    }

    stack.frames.reserve(spec.frame_count);
    const ExposureSetting unit{1.0};
    for (std::size_t f = 0; f < spec.frame_count; ++f)
        stack.frames.push_back(sample_noisy(stack.true_signal, params, unit, mix64(seed + 0x5851F42D4C957F2DULL * f)));
    return stack;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// ordinary least squares of v on m
inline LineFit fit_mean_variance_line(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw CalibrationError("need at least two (mean, variance) points");
    double sm = 0.0, sv = 0.0;
    for (const auto& [m, v] : points) {
        sm += m;
        sv += v;
    }
    const double n = static_cast<double>(points.size());
    const double mbar = sm / n, vbar = sv / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [m, v] : points) {
        sxx += (m - mbar) * (m - mbar);
        sxy += (m - mbar) * (v - vbar);
        syy += (v - vbar) * (v - vbar);
    }
    if (sxx <= 1e-12 * std::max(1.0, mbar * mbar))
        throw CalibrationError("all patch means identical; regression is rank-deficient");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = vbar - fit.slope * mbar;
    fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

struct CalibrationResult {
    NoiseParams params;
    double r2 = 0.0;
    std::size_t points = 0;
    bool sigma2_clamped = false;
};

// Temporal mean/variance per pixel, pooled per chart patch (grouping by the
// known wedge value), then the OLS line v = k*m + sigma2.
inline CalibrationResult calibrate_noise(const ChartStack& stack, bool pool_per_patch = true) {
    if (stack.frames.size() < 2) throw CalibrationError("need at least two frames");
    const std::size_t npx = stack.true_signal.numel();
    for (const auto& f : stack.frames)
        if (f.shape() != stack.true_signal.shape()) throw CalibrationError("frame shape mismatch");

    const double nf = static_cast<double>(stack.frames.size());
    std::vector<double> mean(npx, 0.0), var(npx, 0.0);
    for (const auto& f : stack.frames)
        for (std::size_t i = 0; i < npx; ++i) mean[i] += f.data()[i];
    for (std::size_t i = 0; i < npx; ++i) mean[i] /= nf;
    for (const auto& f : stack.frames)
        for (std::size_t i = 0; i < npx; ++i) {
            const double d = f.data()[i] - mean[i];
            var[i] += d * d;
        }
    for (std::size_t i = 0; i < npx; ++i) var[i] /= (nf - 1.0); // unbiased

    std::vector<std::pair<double, double>> points;
    if (pool_per_patch) {
        // group by distinct wedge value; the chart layout is known by design
        std::vector<double> values;
        for (std::size_t i = 0; i < npx; ++i)
            if (std::find(values.begin(), values.end(), stack.true_signal.data()[i]) == values.end())
                values.push_back(stack.true_signal.data()[i]);
        for (double v : values) {
            double sm = 0.0, sv = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < npx; ++i)
                if (stack.true_signal.data()[i] == v) {
                    sm += mean[i];
                    sv += var[i];
                    ++cnt;
                }
            points.emplace_back(sm / static_cast<double>(cnt), sv / static_cast<double>(cnt));
        }
    } else {
        points.reserve(npx);
        for (std::size_t i = 0; i < npx; ++i) points.emplace_back(mean[i], var[i]);
    }

    const LineFit fit = fit_mean_variance_line(points);
    if (!(fit.slope > 0.0))
        throw CalibrationError("fitted gain k=" + std::to_string(fit.slope) + " is not positive; stack is degenerate");

    CalibrationResult result;
    result.params.k = fit.slope;
    result.params.sigma2 = fit.intercept;
    result.r2 = fit.r2;
    result.points = points.size();
    if (result.params.sigma2 < 0.0) {
        result.params.sigma2 = 0.0;
        result.sigma2_clamped = true;
    }
    return result;
}

} // namespace llre
