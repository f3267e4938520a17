// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Thresholds and tolerances are pinned here; nothing defers to calibration.

#include <chrono>
#include <cstdio>
#include <mutex>
#include <thread>
#include <vector>

#include "llre/ablation.hpp"
#include "llre/gradcheck_suite.hpp"
#include "llre/network.hpp"
#include "llre/training.hpp"
#include "support/reference_attention.hpp"

using namespace llre;

namespace {

int g_failures = 0;

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

void report(int criterion, bool pass, const std::string& what, double seconds) {
    std::printf("[%s] criterion %d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

// ---------------------------------------------------------------- criterion 1

void criterion1_gradients() {
    Timer timer;
    auto results = gradcheck::run_suite("all");
    bool pass = true;
    std::string worst;
    double worst_rel = 0.0;
    for (const auto& r : results) {
        if (!r.pass) {
            pass = false;
            std::printf("  gradcheck failure: %s max_rel=%.3e tol=%.0e\n", r.name.c_str(), r.max_rel, r.tol);
        }
        if (r.max_rel > worst_rel) {
            worst_rel = r.max_rel;
            worst = r.name;
        }
    }
    const double secs = timer.seconds();
    pass = pass && secs < 120.0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "gradient suite, %zu checks at f64, worst %s max_rel=%.2e, budget 120s", results.size(),
                  worst.c_str(), worst_rel);
    report(1, pass, buf, secs);
}

// ---------------------------------------------------------------- criterion 2

void criterion2_linear_complexity() {
    Timer timer;
    const std::uint64_t n = 64 * 64, c = 32;
    const auto ssab_n = ssab_macs(n, c, SsaKind::gated_context, SsaKind::gelu_gate);
    const auto ssab_4n = ssab_macs(4 * n, c, SsaKind::gated_context, SsaKind::gelu_gate);
    const bool exact4 = ssab_4n == 4 * ssab_n;

    const auto ref_n = testing::dot_product_attention_macs(n, c);
    const auto ref_4n = testing::dot_product_attention_macs(4 * n, c);
    const double ref_ratio = static_cast<double>(ref_4n) / static_cast<double>(ref_n);
    const bool pairwise = ref_ratio >= 15.0;

    const double secs = timer.seconds();
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "ssab MACs(4N)/MACs(N) = %.6f (exact 4: %s), reference attention ratio = %.2f >= 15",
                  static_cast<double>(ssab_4n) / static_cast<double>(ssab_n), exact4 ? "yes" : "no", ref_ratio);
    report(2, exact4 && pairwise && secs < 1.0, buf, secs);
}

// ---------------------------------------------------------------- criterion 3

// exact fourth central moment of ratio*(k*Pois(x*/k) + N(0, s2))
double fourth_moment(double x_star, const NoiseParams& p, double ratio) {
    const double lam = x_star / p.k;
    const double k4 = p.k * p.k * p.k * p.k;
    const double core = k4 * lam + 3.0 * k4 * lam * lam + 6.0 * p.k * p.k * lam * p.sigma2 + 3.0 * p.sigma2 * p.sigma2;
    return ratio * ratio * ratio * ratio * core;
}

void criterion3_moments() {
    Timer timer;
    const double ks[3] = {0.5, 2.0, 8.0};
    const double s2s[3] = {1.0, 25.0, 100.0};
    const double ratios[3] = {1.0, 100.0, 300.0};
    const double x_star = 40.0;
    const std::size_t n = 100000;
    Tensor<double> clean({250, 400}, x_star);

    bool pass = true;
    double worst_sigma = 0.0;
    std::uint64_t seed = 0xACC3;
    for (double k : ks)
        for (double s2 : s2s)
            for (double ratio : ratios) {
                const NoiseParams p{k, s2};
                const ExposureSetting e{ratio};
                Tensor<double> draw = sample_noisy(clean, p, e, seed++);
                double mean = 0.0;
                for (std::size_t i = 0; i < n; ++i) mean += draw.data()[i];
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = draw.data()[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(n - 1);

                const Moments m = amplified_moments(x_star, p, e);
                const double se_mean = std::sqrt(m.var / static_cast<double>(n));
                const double mu4 = fourth_moment(x_star, p, ratio);
                const double se_var =
                    std::sqrt(mu4 / n - m.var * m.var * (static_cast<double>(n) - 3.0) /
                                            (static_cast<double>(n) * (static_cast<double>(n) - 1.0)));
                const double z_mean = std::abs(mean - m.mean) / se_mean;
                const double z_var = std::abs(var - m.var) / se_var;
                worst_sigma = std::max({worst_sigma, z_mean, z_var});
                if (z_mean >= 4.0 || z_var >= 4.0) {
                    pass = false;
                    std::printf("  moment breach k=%.1f s2=%.0f ratio=%.0f: z_mean=%.2f z_var=%.2f\n", k, s2, ratio,
                                z_mean, z_var);
                }
            }
    const double secs = timer.seconds();
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "sampler moments vs amplified-distribution over 27 combos, 1e5 draws, worst |z| = %.2f < 4",
                  worst_sigma);
    report(3, pass && secs < 60.0, buf, secs);
}

// ---------------------------------------------------------------- criterion 4

void criterion4_calibration() {
    Timer timer;
    const double ks[3] = {0.5, 2.0, 8.0};
    const double s2s[3] = {1.0, 25.0, 100.0};
    bool pass = true;
    double worst_k = 0.0, worst_s2 = 0.0;
    std::uint64_t seed = 0xCA1;
    for (double k : ks)
        for (double s2 : s2s) {
            ChartSpec spec;
            spec.levels = 16;
            spec.frame_count = 50;
            spec.height = 128;
            spec.width = 128;
            // OLS resolves the intercept only when the wedge stays in the
            // read-noise-comparable range; see the module notes
            spec.range_lo = 0.25 * s2 / k;
            spec.range_hi = 2.0 * s2 / k;
            auto stack = synthesize_gray_chart(spec, {k, s2}, seed++);
            auto cal = calibrate_noise(stack);
            const double ek = std::abs(cal.params.k - k) / k;
            const double es = std::abs(cal.params.sigma2 - s2) / s2;
            worst_k = std::max(worst_k, ek);
            worst_s2 = std::max(worst_s2, es);
            if (ek >= 0.05 || es >= 0.10) {
                pass = false;
                std::printf("  calibration breach k=%.1f s2=%.0f: k_err=%.3f s2_err=%.3f\n", k, s2, ek, es);
            }
        }
    const double secs = timer.seconds();
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "mean/variance regression over the 3x3 grid, worst k err %.2f%% (<5%%), sigma2 err %.2f%% (<10%%)",
                  100.0 * worst_k, 100.0 * worst_s2);
    report(4, pass && secs < 60.0, buf, secs);
}

// ---------------------------------------------------------------- criterion 5

void criterion5_structural() {
    Timer timer;
    SeqRng rng(0x57);
    bool pass = true;

    // exact shuffle round trips over random shapes
    for (int it = 0; it < 30 && pass; ++it) {
        const std::size_t r = 1 + rng.below(3);
        const std::size_t h = r * (1 + rng.below(6)), w = r * (1 + rng.below(6)), c = 1 + rng.below(5);
        auto x = gradcheck::random_tensor<double>(rng, {h, w, c});
        auto y = pixel_shuffle(pixel_unshuffle(x, r), r);
        for (std::size_t i = 0; i < x.numel(); ++i) pass = pass && y.data()[i] == x.data()[i];
    }

    // bayer packing bijection
    {
        auto bayer = gradcheck::random_tensor<double>(rng, {12, 10});
        auto back = unpack_bayer(pack_bayer(bayer));
        for (std::size_t i = 0; i < bayer.numel(); ++i) pass = pass && back.data()[i] == bayer.data()[i];
    }

    // saturated sca equals the plain skip within 1e-6 (network level)
    {
        NetworkConfig cfg;
        cfg.scales = 2;
        cfg.widths = {8, 16};
        cfg.blocks_per_scale = 1;
        cfg.bottleneck_blocks = 1;
        auto net_sca = build<double>(cfg, 404);
        NetworkConfig cfg_add = cfg;
        cfg_add.skip_mode = SkipMode::add;
        auto net_add = build<double>(cfg_add, 405);
        auto sca_params = net_sca.params();
        for (auto* dst : net_add.params())
            for (auto* src : sca_params)
                if (src->name == dst->name) {
                    std::copy(src->value.vec().begin(), src->value.vec().end(), dst->value.vec().begin());
                    break;
                }
        for (auto& level : net_sca.dec) {
            std::fill(level.skip.sca->mlp1_w.value.vec().begin(), level.skip.sca->mlp1_w.value.vec().end(), 0.0);
            std::fill(level.skip.sca->mlp1_b.value.vec().begin(), level.skip.sca->mlp1_b.value.vec().end(), 0.0);
            std::fill(level.skip.sca->mlp2_b.value.vec().begin(), level.skip.sca->mlp2_b.value.vec().end(), 20.0);
        }
        auto x = gradcheck::random_tensor<double>(rng, {8, 8, 4}, 0.3);
        auto ys = net_sca.forward(x);
        auto ya = net_add.forward(x);
        for (std::size_t i = 0; i < ys.numel(); ++i) pass = pass && std::abs(ys.data()[i] - ya.data()[i]) < 1e-6;
    }

    // shape preservation across 50 random block configurations
    for (int it = 0; it < 50 && pass; ++it) {
        const std::size_t heads = 1 + rng.below(3);
        const std::size_t c = heads * 4 * (1 + rng.below(2));
        const std::size_t h = 1 + rng.below(7), w = 1 + rng.below(7);
        auto bw = init_ssab<double>("b", c, heads, SsaKind::gated_context, SsaKind::gelu_gate, rng);
        auto sw = init_sca<double>("s", c, 4, rng);
        auto x = gradcheck::random_tensor<double>(rng, {h, w, c});
        auto deep = gradcheck::random_tensor<double>(rng, {h, w, c});
        pass = pass && ssab_block(x, bw).shape() == x.shape() && sca_forward(x, deep, sw).shape() == x.shape();
    }

    const double secs = timer.seconds();
    report(5, pass && secs < 60.0,
           "structural identities: shuffle round trip, pack bijection, saturated gate, shape preservation", secs);
}

// ---------------------------------------------------------------- criterion 6

void criterion6_two_stage() {
    Timer timer;
    const BenchmarkSettings settings; // pinned toy benchmark
    const int n_seeds = 5;
    std::vector<TwoStageOutcome> outcomes(n_seeds);

    // per-seed runs are independent and internally single-threaded, so two
    // workers change nothing but the wall clock
    std::vector<std::thread> workers;
    std::size_t next = 0;
    std::mutex mtx;
    for (int w = 0; w < 2; ++w)
        workers.emplace_back([&]() {
            for (;;) {
                std::size_t mine;
                {
                    std::lock_guard<std::mutex> lock(mtx);
                    if (next >= outcomes.size()) return;
                    mine = next++;
                }
                outcomes[mine] = run_two_stage_benchmark(settings, mine + 1);
            }
        });
    for (auto& w : workers) w.join();

    double mean_real = 0, mean_random = 0, mean_none = 0, mean_one = 0, mean_gain = 0;
    std::printf("  %-5s %8s %8s %8s %8s %8s %8s\n", "seed", "noisy", "stage1", "real", "random", "none", "onestage");
    for (const auto& o : outcomes) {
        std::printf("  %-5llu %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", (unsigned long long)o.seed, o.noisy_psnr,
                    o.stage1_psnr, o.rgb_real, o.rgb_random, o.rgb_none, o.rgb_onestage);
        mean_real += o.rgb_real;
        mean_random += o.rgb_random;
        mean_none += o.rgb_none;
        mean_one += o.rgb_onestage;
        mean_gain += o.stage1_psnr - o.noisy_psnr;
    }
    mean_real /= n_seeds;
    mean_random /= n_seeds;
    mean_none /= n_seeds;
    mean_one /= n_seeds;
    mean_gain /= n_seeds;

    const bool ordering = mean_real >= mean_random && mean_random >= mean_none;
    const bool beats_one_stage = mean_real >= mean_one;
    const bool gain = mean_gain >= 3.0;
    const double secs = timer.seconds();
    char buf[260];
    std::snprintf(buf, sizeof(buf),
                  "two-stage study over 5 seeds: mean real %.2f >= random %.2f >= none %.2f; two-stage >= one-stage "
                  "%.2f; stage-1 gain %.2f dB >= 3",
                  mean_real, mean_random, mean_none, mean_one, mean_gain);
    report(6, ordering && beats_one_stage && gain && secs < 1800.0, buf, secs);
}

// ---------------------------------------------------------------- criterion 7

void criterion7_cost() {
    Timer timer;
    NetworkConfig c1; // spec default widths 16..128
    NetworkConfig c2;
    c2.stage = Stage::raw2rgb;
    const std::size_t ph = 2848 / 2, pw = 4256 / 2;
    const CostReport r1 = count_cost(c1, ph, pw);
    const CostReport r2 = count_cost(c2, ph, pw);
    const CostReport total = cascade_cost(c1, c2, ph, pw);
    const bool additive = total.macs == r1.macs + r2.macs && total.params == r1.params + r2.params;

    const CostReport doubled = cascade_cost(c1, c2, 2 * ph, 2 * pw);
    const bool exact4 = doubled.macs == 4 * total.macs;

    const double secs = timer.seconds();
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "4256x2848 preset: two-stage %.3f GMACs (%.3f + %.3f), params %.3f M; doubled extents x%.4f",
                  total.macs / 1e9, r1.macs / 1e9, r2.macs / 1e9, total.params / 1e6,
                  static_cast<double>(doubled.macs) / static_cast<double>(total.macs));
    report(7, additive && exact4, buf, secs);
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion1_gradients();
    criterion2_linear_complexity();
    criterion3_moments();
    criterion4_calibration();
    criterion5_structural();
    criterion6_two_stage();
    criterion7_cost();
    std::printf(g_failures == 0 ? "acceptance: all criteria passed\n"
                                : "acceptance: %d criterion(s) FAILED\n",
                g_failures);
    return g_failures;
}
