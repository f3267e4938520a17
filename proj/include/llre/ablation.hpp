#pragma once

#include <string>
#include <vector>

#include "llre/training.hpp"

// Toy-scale benchmark grids: network-variant and skip-gate comparisons, and
// the two-stage pipeline study (noise-source ablation plus the one-stage
// baseline). Shared by the `ablate` command and the acceptance suite.

namespace llre {

struct BenchmarkSettings {
    // sensor and its true noise; training sees only the calibrated estimate.
    // The sensor is shot-noise dominated, so an uncalibrated read-noise-scaled
    // guess is badly wrong -- which is what the noise-source study probes.
    SensorModel sensor;
    NoiseParams true_noise{2.0, 4.0};
    double ratio = 100.0;
    ChartSpec chart{16, 50, 128, 128, 0.5, 4.0};

    // corpus
    std::size_t train_scenes = 12;
    std::size_t eval_scenes = 6;
    std::size_t train_rgb = 160; // 80x80 packed
    std::size_t eval_rgb = 128;  // 64x64 packed

    // network
    NetworkConfig net;

    // optimization
    double lr = 2e-3;
    double joint_lr = 5e-4; // fine-tune gently: both stages are converged
    std::size_t patch = 48;
    std::size_t stage1_epochs = 50;   // x train_scenes = steps
    std::size_t stage2_epochs = 150;
    std::size_t joint_epochs = 42;
    std::size_t onestage_epochs = 150;

    BenchmarkSettings() {
        net.stage = Stage::denoise;
        net.scales = 3;
        net.widths = {8, 16, 32};
        net.blocks_per_scale = 1;
        net.bottleneck_blocks = 2;
        net.heads = 2;
        net.skip_mode = SkipMode::sca;
        net.variant = Variant::full;
    }

    TrainPlan plan_for(Phase phase, std::size_t epochs, NoiseSource noise, std::uint64_t seed) const {
        TrainPlan plan;
        plan.phase = phase;
        plan.epochs = epochs;
        plan.patch = patch;
        plan.seed = seed;
        plan.noise = noise;
        plan.ratio = ratio;
        plan.adam.lr = phase == Phase::joint ? joint_lr : lr;
        plan.loss.msssim_levels = 3;
        return plan;
    }
};

template <typename T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Param<T>*>& params) {
    std::vector<std::vector<T>> snap;
    snap.reserve(params.size());
    for (auto* p : params) snap.push_back(p->value.vec());
    return snap;
}

template <typename T>
void restore_params(const std::vector<Param<T>*>& params, const std::vector<std::vector<T>>& snap) {
    if (snap.size() != params.size()) throw TrainError("parameter snapshot does not match the registry");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.vec() = snap[i];
}

struct TwoStageOutcome {
    std::uint64_t seed = 0;
    double calibrated_k = 0.0;
    double calibrated_sigma2 = 0.0;
    double noisy_psnr = 0.0;    // packed-domain input baseline
    double stage1_psnr = 0.0;   // packed-domain after the real-noise denoiser
    double rgb_real = 0.0;      // two-stage, real-noise training
    double rgb_random = 0.0;    // two-stage, random-noise training
    double rgb_none = 0.0;      // two-stage, trained without noise
    double rgb_onestage = 0.0;  // single raw2rgb stage on noisy input
};

// Full pipeline for one seed: calibrate, train stage 2 once, then train the
// denoiser and fine-tune the cascade under each noise source; evaluation
// always uses the true sensor noise.
inline TwoStageOutcome run_two_stage_benchmark(const BenchmarkSettings& settings, std::uint64_t seed) {
    using T = float;
    TwoStageOutcome outcome;
    outcome.seed = seed;

    auto stack = synthesize_gray_chart(settings.chart, settings.true_noise, mix64(seed ^ 0xCA11B0A7));
    const CalibrationResult cal = calibrate_noise(stack);
    outcome.calibrated_k = cal.params.k;
    outcome.calibrated_sigma2 = cal.params.sigma2;

    SceneCorpus<T> corpus = make_corpus<T>(settings.train_scenes, settings.eval_scenes, settings.train_rgb,
                                           settings.eval_rgb, mix64(seed ^ 0x5CE9E5));
    outcome.noisy_psnr =
        eval_noisy_input_psnr(corpus, settings.true_noise, settings.ratio, settings.sensor, mix64(seed ^ 0xE7A1));

    NetworkConfig cfg1 = settings.net;
    cfg1.stage = Stage::denoise;
    NetworkConfig cfg2 = settings.net;
    cfg2.stage = Stage::raw2rgb;

    TrainSetup<T> setup;
    setup.noise_params = cal.params;
    setup.sensor = settings.sensor;
    setup.corpus = &corpus;

    // stage 2 is noise-independent; train once and reuse per variant
    Network<T> stage2 = build<T>(cfg2, mix64(seed ^ 0x5702));
    setup.plan = settings.plan_for(Phase::stage2, settings.stage2_epochs, NoiseSource::none, seed * 7 + 2);
    train_stage2(stage2, setup, settings.true_noise);
    const auto stage2_snapshot = snapshot_params(stage2.params());

    const NoiseSource sources[3] = {NoiseSource::real_calibrated, NoiseSource::random_gauss, NoiseSource::none};
    double rgb_scores[3] = {0, 0, 0};
    for (int si = 0; si < 3; ++si) {
        Network<T> stage1 = build<T>(cfg1, mix64(seed ^ 0x5701));
        setup.plan = settings.plan_for(Phase::stage1, settings.stage1_epochs, sources[si], seed * 7 + 3);
        StageRun<T> run1 = train_stage1(stage1, setup, settings.true_noise);
        if (sources[si] == NoiseSource::real_calibrated) outcome.stage1_psnr = run1.eval_psnr;

        // registries are re-collected after every move; param objects shift
        // when a network is moved into the cascade
        Cascade<T> cascade{std::move(stage1), std::move(stage2)};
        restore_params(cascade.stage2.params(), stage2_snapshot);
        setup.plan = settings.plan_for(Phase::joint, settings.joint_epochs, sources[si], seed * 7 + 4);
        StageRun<T> joint = finetune_joint(cascade, setup, settings.true_noise);
        rgb_scores[si] = joint.eval_psnr;
        stage2 = std::move(cascade.stage2);
    }
    outcome.rgb_real = rgb_scores[0];
    outcome.rgb_random = rgb_scores[1];
    outcome.rgb_none = rgb_scores[2];

    Network<T> onestage = build<T>(cfg2, mix64(seed ^ 0x5703));
    setup.plan = settings.plan_for(Phase::stage2, settings.onestage_epochs, NoiseSource::real_calibrated, seed * 7 + 5);
    StageRun<T> one = train_stage2(onestage, setup, settings.true_noise, /*from_noisy=*/true);
    outcome.rgb_onestage = one.eval_psnr;
    return outcome;
}

struct VariantScore {
    std::string label;
    double psnr = 0.0;
    std::uint64_t params = 0;
};

// one-stage PSNR per attention variant
inline std::vector<VariantScore> run_variant_grid(const BenchmarkSettings& settings, std::uint64_t seed) {
    using T = float;
    auto chart = synthesize_gray_chart(settings.chart, settings.true_noise, mix64(seed ^ 0xCA11B0A7));
    const CalibrationResult cal = calibrate_noise(chart);
    SceneCorpus<T> corpus = make_corpus<T>(settings.train_scenes, settings.eval_scenes, settings.train_rgb,
                                           settings.eval_rgb, mix64(seed ^ 0x5CE9E5));
    TrainSetup<T> setup;
    setup.noise_params = cal.params;
    setup.sensor = settings.sensor;
    setup.corpus = &corpus;

    std::vector<VariantScore> rows;
    for (Variant v : {Variant::ssa1_only, Variant::ssa2_only, Variant::ssa1_ssa1, Variant::ssa2_ssa2, Variant::full}) {
        NetworkConfig cfg = settings.net;
        cfg.stage = Stage::raw2rgb;
        cfg.variant = v;
        Network<T> net = build<T>(cfg, mix64(seed ^ 0x77));
        setup.plan = settings.plan_for(Phase::stage2, settings.onestage_epochs, NoiseSource::real_calibrated, seed + 11);
        StageRun<T> run = train_stage2(net, setup, settings.true_noise, /*from_noisy=*/true);
        rows.push_back({to_string(v), run.eval_psnr, net.param_count()});
    }
    return rows;
}

// one-stage PSNR per skip-fusion mode
inline std::vector<VariantScore> run_skip_grid(const BenchmarkSettings& settings, std::uint64_t seed) {
    using T = float;
    auto chart = synthesize_gray_chart(settings.chart, settings.true_noise, mix64(seed ^ 0xCA11B0A7));
    const CalibrationResult cal = calibrate_noise(chart);
    SceneCorpus<T> corpus = make_corpus<T>(settings.train_scenes, settings.eval_scenes, settings.train_rgb,
                                           settings.eval_rgb, mix64(seed ^ 0x5CE9E5));
    TrainSetup<T> setup;
    setup.noise_params = cal.params;
    setup.sensor = settings.sensor;
    setup.corpus = &corpus;

    std::vector<VariantScore> rows;
    for (SkipMode m : {SkipMode::add, SkipMode::se, SkipMode::eca, SkipMode::sca}) {
        NetworkConfig cfg = settings.net;
        cfg.stage = Stage::raw2rgb;
        cfg.skip_mode = m;
        Network<T> net = build<T>(cfg, mix64(seed ^ 0x88));
        setup.plan = settings.plan_for(Phase::stage2, settings.onestage_epochs, NoiseSource::real_calibrated, seed + 12);
        StageRun<T> run = train_stage2(net, setup, settings.true_noise, /*from_noisy=*/true);
        rows.push_back({to_string(m), run.eval_psnr, net.param_count()});
    }
    return rows;
}

} // namespace llre
