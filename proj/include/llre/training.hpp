#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "llre/network.hpp"
#include "llre/noise.hpp"
#include "llre/rawproc.hpp"

// Losses (L1 + multi-scale structural similarity), the Adam optimizer, the
// synthetic raw/RGB corpus, and the two-stage training protocol at desk
// scale: denoise on simulated sensor noise, raw2rgb on clean pairs, then a
// joint fine-tune of the cascade.

namespace llre {

// ------------------------------------------------------------------ losses

struct LossConfig {
    double l1_weight = 0.8;
    double msssim_weight = 0.2;
    std::size_t msssim_levels = 3;
    std::size_t msssim_window = 11;

    void validate() const {
        if (l1_weight < 0.0 || msssim_weight < 0.0 || (l1_weight == 0.0 && msssim_weight == 0.0))
            throw ConfigError("loss weights must be nonnegative and not both zero");
        if (msssim_window % 2 == 0) throw ConfigError("msssim window must be odd");
        if (msssim_levels < 1 || msssim_levels > 5) throw ConfigError("msssim levels must be in [1,5]");
    }
};

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred, target, "l1_loss");
    return mean_all(absval(sub(pred, target)));
}

namespace detail_loss {

template <typename T>
std::vector<T> gaussian_window(std::size_t size, double sigma) {
    std::vector<T> w(size);
    const double mid = static_cast<double>(size - 1) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - mid;
        const double v = std::exp(-d * d / (2.0 * sigma * sigma));
        w[i] = static_cast<T>(v);
        sum += v;
    }
    for (auto& v : w) v = static_cast<T>(static_cast<double>(v) / sum);
    return w;
}

template <typename T>
Tensor<T> blur_valid(const Tensor<T>& x, const std::vector<T>& window) {
    Tensor<T> rows = filter2_valid(x, window, window.size(), 1);
    return filter2_valid(rows, window, 1, window.size());
}

inline std::vector<double> level_weights(std::size_t levels) {
    // standard five-level weights, renormalized over the first `levels`
    static const double base[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double sum = 0.0;
    for (std::size_t i = 0; i < levels; ++i) sum += base[i];
    std::vector<double> w(levels);
    for (std::size_t i = 0; i < levels; ++i) w[i] = base[i] / sum;
    return w;
}

} // namespace detail_loss

// Multi-scale structural similarity in [0,1]; 1 iff pred == target.
// Contrast terms are relu-clamped before the weighted geometric combination.
template <typename T>
Tensor<T> msssim(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    cfg.validate();
    detail::require_same_shape(pred, target, "msssim");
    Tensor<T> x = pred.rank() == 2 ? pred.reshaped({pred.extent(0), pred.extent(1), 1}) : pred;
    Tensor<T> y = target.rank() == 2 ? target.reshaped({target.extent(0), target.extent(1), 1}) : target;
    detail::require_rank(x, 3, "msssim");

    const std::size_t need = cfg.msssim_window << (cfg.msssim_levels - 1);
    if (x.extent(0) < need || x.extent(1) < need)
        throw ConfigError("msssim: input " + shape_str(x.shape()) + " smaller than window*2^(levels-1) = " +
                          std::to_string(need));

    const auto window = detail_loss::gaussian_window<T>(cfg.msssim_window, 1.5);
    const auto weights = detail_loss::level_weights(cfg.msssim_levels);
    const T c1 = T(0.01 * 0.01);
    const T c2 = T(0.03 * 0.03);

    Tensor<T> result = Tensor<T>::scalar(T(1));
    for (std::size_t level = 0; level < cfg.msssim_levels; ++level) {
        Tensor<T> mu_x = detail_loss::blur_valid(x, window);
        Tensor<T> mu_y = detail_loss::blur_valid(y, window);
        Tensor<T> xx = detail_loss::blur_valid(mul(x, x), window);
        Tensor<T> yy = detail_loss::blur_valid(mul(y, y), window);
        Tensor<T> xy = detail_loss::blur_valid(mul(x, y), window);
        Tensor<T> var_x = sub(xx, mul(mu_x, mu_x));
        Tensor<T> var_y = sub(yy, mul(mu_y, mu_y));
        Tensor<T> cov = sub(xy, mul(mu_x, mu_y));

        Tensor<T> cs = div(add_scalar(mul_scalar(cov, T(2)), c2), add_scalar(add(var_x, var_y), c2));
        if (level + 1 < cfg.msssim_levels) {
            Tensor<T> mcs = relu(mean_all(cs));
            result = mul(result, pow_const(mcs, static_cast<T>(weights[level])));
            x = avg_pool2(x);
            y = avg_pool2(y);
        } else {
            Tensor<T> lum = div(add_scalar(mul_scalar(mul(mu_x, mu_y), T(2)), c1),
                                add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1));
            Tensor<T> mssim = relu(mean_all(mul(lum, cs)));
            result = mul(result, pow_const(mssim, static_cast<T>(weights[level])));
        }
    }
    return result;
}

template <typename T>
Tensor<T> msssim_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    return add_scalar(mul_scalar(msssim(pred, target, cfg), T(-1)), T(1));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {}) {
    cfg.validate();
    Tensor<T> total = mul_scalar(l1_loss(pred, target), static_cast<T>(cfg.l1_weight));
    if (cfg.msssim_weight > 0.0)
        total = add(total, mul_scalar(msssim_loss(pred, target, cfg), static_cast<T>(cfg.msssim_weight)));
    return total;
}

// fidelity metric on [0,1] images; clamped at 99 dB for identical inputs
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse <= 1e-12) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = std::clamp(x.data()[i], T(0), T(1));
    return out;
}

// -------------------------------------------------------------------- adam

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptimState {
    AdamConfig cfg;
    std::size_t step = 0;
    std::vector<std::vector<T>> m, v; // aligned with the registry order

    void init(const std::vector<Param<T>*>& params) {
        m.clear();
        v.clear();
        for (auto* p : params) {
            m.emplace_back(p->value.numel(), T(0));
            v.emplace_back(p->value.numel(), T(0));
        }
        step = 0;
    }
};

// standard bias-corrected update; frozen params (requires_grad off) are skipped
template <typename T>
void adam_step(const std::vector<Param<T>*>& params, OptimState<T>& state) {
    if (state.m.size() != params.size()) throw TrainError("optimizer state does not match the parameter registry");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param<T>& p = *params[pi];
        if (!p.value.requires_grad()) continue;
        if (!p.value.grad_allocated()) throw TrainError("parameter " + p.name + " has no gradient");
        const auto& g = p.value.grad_view();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        T* w = p.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = static_cast<T>(state.cfg.beta1 * m[i] + (1.0 - state.cfg.beta1) * g[i]);
            v[i] = static_cast<T>(state.cfg.beta2 * v[i] + (1.0 - state.cfg.beta2) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= static_cast<T>(state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps));
        }
    }
}

// --------------------------------------------------------- synthetic corpus

struct SensorModel {
    double black_level = 512.0;
    double white_level = 16383.0;
    double span() const { return white_level - black_level; }
};

template <typename T>
struct Scene {
    Tensor<T> packed;     // [H,W,4] clean packed raw in [0,1]
    Tensor<T> rgb_target; // [2H,2W,3] rendered reference
};

template <typename T>
struct SceneCorpus {
    std::vector<Scene<T>> train;
    std::vector<Scene<T>> eval;
};

// fixed synthetic color pipeline: mild cross-channel matrix, then gamma 1/2.2
template <typename T>
Tensor<T> apply_isp(const Tensor<T>& linear_rgb) {
    detail::require_rank(linear_rgb, 3, "apply_isp");
    if (linear_rgb.extent(2) != 3) throw ShapeError("apply_isp expects RGB");
    static const double ccm[3][3] = {{1.30, -0.20, -0.10}, {-0.15, 1.30, -0.15}, {-0.05, -0.25, 1.30}};
    Tensor<T> out(linear_rgb.shape());
    const std::size_t n = linear_rgb.extent(0) * linear_rgb.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
        const T* src = linear_rgb.data() + i * 3;
        T* dst = out.data() + i * 3;
        for (int r = 0; r < 3; ++r) {
            double v = ccm[r][0] * src[0] + ccm[r][1] * src[1] + ccm[r][2] * src[2];
            v = std::clamp(v, 0.0, 1.0);
            dst[r] = static_cast<T>(std::pow(v, 1.0 / 2.2));
        }
    }
    return out;
}

// piecewise-smooth random scene: bilinear color field, soft blobs, a gradient
// wash, then a light box blur
template <typename T>
Tensor<T> make_linear_scene(std::size_t h, std::size_t w, SeqRng& rng) {
    Tensor<T> img({h, w, 3});
    double corners[4][3];
    for (auto& corner : corners)
        for (double& v : corner) v = rng.uniform(0.15, 0.85);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double fy = static_cast<double>(y) / static_cast<double>(h - 1);
            const double fx = static_cast<double>(x) / static_cast<double>(w - 1);
            for (int c = 0; c < 3; ++c) {
                const double top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
                const double bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
                img.data()[(y * w + x) * 3 + c] = static_cast<T>(top * (1 - fy) + bot * fy);
            }
        }

    const std::size_t blobs = 3 + rng.below(5);
    for (std::size_t b = 0; b < blobs; ++b) {
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        const double radius = rng.uniform(0.10, 0.45) * static_cast<double>(std::min(h, w));
        double delta[3];
        for (double& d : delta) d = rng.uniform(-0.35, 0.35);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = (static_cast<double>(y) - cy) / radius;
                const double dx = (static_cast<double>(x) - cx) / radius;
                const double weight = std::exp(-3.0 * (dy * dy + dx * dx));
                if (weight < 1e-4) continue;
                for (int c = 0; c < 3; ++c)
                    img.data()[(y * w + x) * 3 + c] += static_cast<T>(delta[c] * weight);
            }
    }

    const double gy = rng.uniform(-0.15, 0.15), gx = rng.uniform(-0.15, 0.15);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double wash = gy * (static_cast<double>(y) / h - 0.5) + gx * (static_cast<double>(x) / w - 0.5);
            for (int c = 0; c < 3; ++c) {
                double v = static_cast<double>(img.data()[(y * w + x) * 3 + c]) + wash;
                img.data()[(y * w + x) * 3 + c] = static_cast<T>(std::clamp(v, 0.02, 0.98));
            }
        }

    // 3x3 box blur softens mosaic aliasing
    Tensor<T> blurred(img.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                        acc += img.data()[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * 3 + c];
                        ++cnt;
                    }
                blurred.data()[(y * w + x) * 3 + c] = static_cast<T>(acc / cnt);
            }
    return blurred;
}

template <typename T>
Scene<T> make_scene(std::size_t rgb_h, std::size_t rgb_w, SeqRng& rng) {
    if (rgb_h % 2 != 0 || rgb_w % 2 != 0) throw ConfigError("scene dimensions must be even");
    Scene<T> scene;
    Tensor<T> lin = make_linear_scene<T>(rgb_h, rgb_w, rng);
    Tensor<T> bayer({rgb_h, rgb_w});
    for (std::size_t y = 0; y < rgb_h; ++y)
        for (std::size_t x = 0; x < rgb_w; ++x) {
            const int c = (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2); // RGGB sites
            bayer.data()[y * rgb_w + x] = lin.data()[(y * rgb_w + x) * 3 + c];
        }
    scene.packed = pack_bayer(bayer);
    scene.rgb_target = apply_isp(lin);
    return scene;
}

template <typename T>
SceneCorpus<T> make_corpus(std::size_t train_count, std::size_t eval_count, std::size_t train_rgb, std::size_t eval_rgb,
                           std::uint64_t seed) {
    SceneCorpus<T> corpus;
    SeqRng rng(mix64(seed ^ 0xC0FFEE5CE9E5ULL));
    for (std::size_t i = 0; i < train_count; ++i) corpus.train.push_back(make_scene<T>(train_rgb, train_rgb, rng));
    for (std::size_t i = 0; i < eval_count; ++i) corpus.eval.push_back(make_scene<T>(eval_rgb, eval_rgb, rng));
    return corpus;
}

// -------------------------------------------------------------- degradation

enum class NoiseSource { real_calibrated, random_gauss, none };

inline std::string to_string(NoiseSource s) {
    switch (s) {
        case NoiseSource::real_calibrated: return "real_calibrated";
        case NoiseSource::random_gauss: return "random";
        default: return "none";
    }
}
inline NoiseSource noise_source_from(const std::string& s) {
    if (s == "real_calibrated") return NoiseSource::real_calibrated;
    if (s == "random") return NoiseSource::random_gauss;
    if (s == "none") return NoiseSource::none;
    throw ConfigError("unknown noise source '" + s + "'");
}

// Turns a clean normalized packed patch into a simulated amplified short
// exposure. The reference brightness equals x* . ratio, so the pre-gain
// signal is clean/ratio in DN.
template <typename T>
Tensor<T> degrade_packed(const Tensor<T>& clean01, NoiseSource source, const NoiseParams& params, double ratio,
                         const SensorModel& sensor, std::uint64_t seed) {
    switch (source) {
        case NoiseSource::none: {
            return clean01.clone();
        }
        case NoiseSource::real_calibrated: {
            Tensor<T> x_star(clean01.shape());
            const double span = sensor.span();
            for (std::size_t i = 0; i < clean01.numel(); ++i)
                x_star.data()[i] = static_cast<T>(std::max(0.0, static_cast<double>(clean01.data()[i])) * span / ratio);
            Tensor<T> noisy = sample_noisy(x_star, params, {ratio}, seed);
            for (std::size_t i = 0; i < noisy.numel(); ++i)
                noisy.data()[i] = static_cast<T>(std::clamp(static_cast<double>(noisy.data()[i]) / span, 0.0, 1.0));
            return noisy;
        }
        case NoiseSource::random_gauss:
        default: {
            // uncalibrated stand-in: one variance per patch drawn uniformly
            // from [s2 r^2/4, s2 r^2 * 4] DN^2, signal-independent
            const double lo = params.sigma2 * ratio * ratio / 4.0;
            const double hi = params.sigma2 * ratio * ratio * 4.0;
            const CounterRng rng{seed, 0xABCD};
            const double variance = lo + (hi - lo) * rng.uniform(1);
            const double sd01 = std::sqrt(variance) / sensor.span();
            Tensor<T> noisy(clean01.shape());
            for (std::size_t i = 0; i < clean01.numel(); ++i) {
                const CounterRng px{seed, i};
                const double v = static_cast<double>(clean01.data()[i]) + sd01 * px.normal(0);
                noisy.data()[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
            }
            return noisy;
        }
    }
}

// ------------------------------------------------------------- train plans

enum class Phase { stage1, stage2, joint };

inline std::string to_string(Phase p) {
    switch (p) {
        case Phase::stage1: return "stage1";
        case Phase::stage2: return "stage2";
        default: return "joint";
    }
}
inline Phase phase_from(const std::string& s) {
    if (s == "stage1") return Phase::stage1;
    if (s == "stage2") return Phase::stage2;
    if (s == "joint") return Phase::joint;
    throw ConfigError("unknown phase '" + s + "'");
}

struct TrainPlan {
    Phase phase = Phase::stage1;
    std::size_t epochs = 40;  // steps = epochs * training scene count
    std::size_t patch = 64;
    std::uint64_t seed = 1;
    NoiseSource noise = NoiseSource::real_calibrated;
    double ratio = 100.0;
    AdamConfig adam;
    LossConfig loss;

    void validate() const {
        if (patch % 2 != 0) throw ConfigError("patch size must be even");
        loss.validate();
        if (!(ratio >= 1.0)) throw ConfigError("amplification ratio must be >= 1");
    }
};

inline TrainPlan plan_from_json(const nlohmann::json& j) {
    TrainPlan plan;
    try {
        if (j.contains("phase")) plan.phase = phase_from(j.at("phase").get<std::string>());
        if (j.contains("epochs")) plan.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("patch")) plan.patch = j.at("patch").get<std::size_t>();
        if (j.contains("seed")) plan.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("noise")) plan.noise = noise_source_from(j.at("noise").get<std::string>());
        if (j.contains("ratio")) plan.ratio = j.at("ratio").get<double>();
        if (j.contains("lr")) plan.adam.lr = j.at("lr").get<double>();
        if (j.contains("l1_weight")) plan.loss.l1_weight = j.at("l1_weight").get<double>();
        if (j.contains("msssim_weight")) plan.loss.msssim_weight = j.at("msssim_weight").get<double>();
        if (j.contains("msssim_levels")) plan.loss.msssim_levels = j.at("msssim_levels").get<std::size_t>();
        if (j.contains("msssim_window")) plan.loss.msssim_window = j.at("msssim_window").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad train plan: ") + e.what());
    }
    plan.validate();
    return plan;
}

inline nlohmann::json plan_to_json(const TrainPlan& plan) {
    nlohmann::json j;
    j["phase"] = to_string(plan.phase);
    j["epochs"] = plan.epochs;
    j["patch"] = plan.patch;
    j["seed"] = plan.seed;
    j["noise"] = to_string(plan.noise);
    j["ratio"] = plan.ratio;
    j["lr"] = plan.adam.lr;
    j["l1_weight"] = plan.loss.l1_weight;
    j["msssim_weight"] = plan.loss.msssim_weight;
    j["msssim_levels"] = plan.loss.msssim_levels;
    j["msssim_window"] = plan.loss.msssim_window;
    return j;
}

struct CurveRow {
    std::size_t step = 0;
    double l1 = 0.0;
    double msssim_value = 0.0;
    double total = 0.0;
    double psnr_val = 0.0;
};

inline void write_curve_csv(const std::string& path, const std::vector<CurveRow>& curve) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "step,l1,msssim,total,psnr_val\n";
    char line[160];
    for (const auto& row : curve) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", row.step, row.l1, row.msssim_value, row.total,
                      row.psnr_val);
        os << line;
    }
}

inline double smoothed_mean(const std::vector<CurveRow>& curve, std::size_t begin, std::size_t window) {
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = begin; i < std::min(curve.size(), begin + window); ++i) {
        acc += curve[i].total;
        ++cnt;
    }
    return cnt ? acc / static_cast<double>(cnt) : 0.0;
}

// ------------------------------------------------------------ train driver

enum class PairMode { denoise, rgb_from_clean, rgb_from_noisy };

template <typename T>
struct TrainSetup {
    TrainPlan plan;
    NoiseParams noise_params; // calibrated values used for simulation
    SensorModel sensor;
    const SceneCorpus<T>* corpus = nullptr;
};

namespace detail_train {

// one aligned training sample in normalized space
template <typename T>
std::pair<Tensor<T>, Tensor<T>> draw_pair(const TrainSetup<T>& setup, PairMode mode, SeqRng& rng) {
    const auto& scenes = setup.corpus->train;
    const Scene<T>& scene = scenes[rng.below(scenes.size())];
    const std::uint64_t crop_seed = rng.bits();
    const std::uint64_t noise_seed = rng.bits();
    const bool rgb = mode != PairMode::denoise;
    PatchPair<T> pair = random_patch(scene.packed, rgb ? scene.rgb_target : scene.packed, setup.plan.patch, crop_seed);
    Tensor<T> input = pair.input;
    if (mode != PairMode::rgb_from_clean)
        input = degrade_packed(pair.input, setup.plan.noise, setup.noise_params, setup.plan.ratio, setup.sensor,
                               noise_seed);
    return {input, pair.target};
}

} // namespace detail_train

// Runs the optimizer over seed-ordered patches. `forward` maps an input
// tensor to a prediction under the current tape; `params` is the full
// registry being optimized. Returns the per-step loss curve.
template <typename T, typename Fwd, typename EvalFn>
std::vector<CurveRow> train_loop(const TrainSetup<T>& setup, PairMode mode, Fwd&& forward,
                                 const std::vector<Param<T>*>& params, EvalFn&& eval_fn,
                                 std::size_t eval_interval = 25) {
    setup.plan.validate();
    if (!setup.corpus || setup.corpus->train.empty()) throw ConfigError("training corpus is empty");
    const std::size_t steps = setup.plan.epochs * setup.corpus->train.size();

    OptimState<T> opt;
    opt.cfg = setup.plan.adam;
    opt.init(params);

    SeqRng rng(mix64(setup.plan.seed ^ 0x7261696E5F5F5FULL));
    std::vector<CurveRow> curve;
    curve.reserve(steps);
    double last_psnr = 0.0;

    for (std::size_t step = 0; step < steps; ++step) {
        auto [input, target] = detail_train::draw_pair(setup, mode, rng);
        for (auto* p : params) p->value.drop_grad();

        GradTape<T> tape;
        CurveRow row;
        row.step = step;
        {
            TapeScope<T> scope(tape);
            Tensor<T> pred = forward(input);
            Tensor<T> l1 = l1_loss(pred, target);
            Tensor<T> ms = setup.plan.loss.msssim_weight > 0.0 ? msssim_loss(pred, target, setup.plan.loss)
                                                               : Tensor<T>::scalar(T(0));
            Tensor<T> total = add(mul_scalar(l1, static_cast<T>(setup.plan.loss.l1_weight)),
                                  mul_scalar(ms, static_cast<T>(setup.plan.loss.msssim_weight)));
            row.l1 = static_cast<double>(l1.item());
            row.msssim_value = 1.0 - static_cast<double>(ms.item());
            row.total = static_cast<double>(total.item());
            backward(total, tape);
        }
        adam_step(params, opt);

        if (step % eval_interval == 0 || step + 1 == steps) last_psnr = eval_fn();
        row.psnr_val = last_psnr;
        curve.push_back(row);
    }
    return curve;
}

// mean PSNR of the denoise stage on held-out scenes degraded with the true
// sensor noise at a fixed evaluation seed
template <typename T>
double eval_stage1_psnr(const Network<T>& net, const SceneCorpus<T>& corpus, const NoiseParams& true_noise,
                        double ratio, const SensorModel& sensor, std::uint64_t eval_seed) {
    double acc = 0.0;
    for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
        const Scene<T>& scene = corpus.eval[i];
        Tensor<T> noisy = degrade_packed(scene.packed, NoiseSource::real_calibrated, true_noise, ratio, sensor,
                                         mix64(eval_seed + i));
        acc += psnr(clamp01(net.forward(noisy)), scene.packed);
    }
    return acc / static_cast<double>(corpus.eval.size());
}

template <typename T>
double eval_noisy_input_psnr(const SceneCorpus<T>& corpus, const NoiseParams& true_noise, double ratio,
                             const SensorModel& sensor, std::uint64_t eval_seed) {
    double acc = 0.0;
    for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
        const Scene<T>& scene = corpus.eval[i];
        Tensor<T> noisy = degrade_packed(scene.packed, NoiseSource::real_calibrated, true_noise, ratio, sensor,
                                         mix64(eval_seed + i));
        acc += psnr(noisy, scene.packed);
    }
    return acc / static_cast<double>(corpus.eval.size());
}

// mean RGB PSNR of a packed->RGB model on held-out scenes; inputs are noisy
// unless from_clean is set
template <typename T, typename Fwd>
double eval_rgb_psnr(Fwd&& forward, const SceneCorpus<T>& corpus, const NoiseParams& true_noise, double ratio,
                     const SensorModel& sensor, std::uint64_t eval_seed, bool from_clean = false) {
    double acc = 0.0;
    for (std::size_t i = 0; i < corpus.eval.size(); ++i) {
        const Scene<T>& scene = corpus.eval[i];
        Tensor<T> input = from_clean ? scene.packed
                                     : degrade_packed(scene.packed, NoiseSource::real_calibrated, true_noise, ratio,
                                                      sensor, mix64(eval_seed + i));
        acc += psnr(clamp01(forward(input)), scene.rgb_target);
    }
    return acc / static_cast<double>(corpus.eval.size());
}

// ------------------------------------------------------------ stage runners

template <typename T>
struct StageRun {
    std::vector<CurveRow> curve;
    double eval_psnr = 0.0;
};

// stage 1: reference = clean packed patch, input = simulated short exposure
template <typename T>
StageRun<T> train_stage1(Network<T>& net, const TrainSetup<T>& setup, const NoiseParams& true_noise) {
    if (net.cfg.stage != Stage::denoise) throw ConfigError("train_stage1 expects a denoise network");
    auto params = net.params();
    StageRun<T> run;
    run.curve = train_loop(
        setup, PairMode::denoise, [&](const Tensor<T>& x) { return net.forward(x); }, params,
        [&]() {
            return eval_stage1_psnr(net, *setup.corpus, true_noise, setup.plan.ratio, setup.sensor,
                                    setup.plan.seed ^ 0xE7A1);
        });
    run.eval_psnr = eval_stage1_psnr(net, *setup.corpus, true_noise, setup.plan.ratio, setup.sensor,
                                     setup.plan.seed ^ 0xE7A1);
    return run;
}

// stage 2: clean packed input to rendered RGB; also used for the one-stage
// baseline by feeding noisy inputs
template <typename T>
StageRun<T> train_stage2(Network<T>& net, const TrainSetup<T>& setup, const NoiseParams& true_noise,
                         bool from_noisy = false) {
    if (net.cfg.stage != Stage::raw2rgb) throw ConfigError("train_stage2 expects a raw2rgb network");
    auto params = net.params();
    StageRun<T> run;
    run.curve = train_loop(
        setup, from_noisy ? PairMode::rgb_from_noisy : PairMode::rgb_from_clean,
        [&](const Tensor<T>& x) { return net.forward(x); }, params,
        [&]() {
            return eval_rgb_psnr([&](const Tensor<T>& x) { return net.forward(x); }, *setup.corpus, true_noise,
                                 setup.plan.ratio, setup.sensor, setup.plan.seed ^ 0xE7A2, !from_noisy);
        });
    run.eval_psnr = eval_rgb_psnr([&](const Tensor<T>& x) { return net.forward(x); }, *setup.corpus, true_noise,
                                  setup.plan.ratio, setup.sensor, setup.plan.seed ^ 0xE7A2, !from_noisy);
    return run;
}

// joint fine-tune of the composed cascade on RGB targets with noisy inputs
template <typename T>
StageRun<T> finetune_joint(Cascade<T>& cascade, const TrainSetup<T>& setup, const NoiseParams& true_noise) {
    cascade.validate();
    auto params = cascade.params();
    StageRun<T> run;
    run.curve = train_loop(
        setup, PairMode::rgb_from_noisy, [&](const Tensor<T>& x) { return cascade.forward(x); }, params,
        [&]() {
            return eval_rgb_psnr([&](const Tensor<T>& x) { return cascade.forward(x); }, *setup.corpus, true_noise,
                                 setup.plan.ratio, setup.sensor, setup.plan.seed ^ 0xE7A3);
        });
    run.eval_psnr = eval_rgb_psnr([&](const Tensor<T>& x) { return cascade.forward(x); }, *setup.corpus, true_noise,
                                  setup.plan.ratio, setup.sensor, setup.plan.seed ^ 0xE7A3);
    return run;
}

} // namespace llre
