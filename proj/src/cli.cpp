#include "llre/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "llre/ablation.hpp"
#include "llre/gradcheck_suite.hpp"
#include "llre/image_io.hpp"
#include "llre/serialize.hpp"
#include "llre/training.hpp"

namespace llre::cli {

namespace {

using Real = float; // run mode

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed json " + path + ": " + e.what());
    }
    return j;
}

NetworkConfig load_config(const std::string& path, Stage stage) {
    NetworkConfig cfg;
    if (!path.empty()) cfg = config_from_json(read_json_file(path));
    cfg.stage = stage;
    cfg.validate();
    return cfg;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

void print_resolved(const std::string& command, const nlohmann::json& detail) {
    nlohmann::json line = detail;
    line["command"] = command;
    std::cout << "resolved: " << line.dump() << "\n";
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw ConfigError("size must look like 4256x2848, got '" + text + "'");
    return {static_cast<std::size_t>(std::stoull(text.substr(0, x))),
            static_cast<std::size_t>(std::stoull(text.substr(x + 1)))};
}

// ------------------------------------------------------------ chart files

void save_chart(const std::string& dir, const ChartStack& stack) {
    ensure_dir(dir);
    write_slt_file(dir + "/chart_true.slt", stack.true_signal);
    for (std::size_t f = 0; f < stack.frames.size(); ++f) {
        char name[64];
        std::snprintf(name, sizeof(name), "/chart_frame_%03zu.slt", f);
        write_slt_file(dir + name, stack.frames[f]);
    }
    nlohmann::json meta;
    meta["levels"] = stack.levels;
    meta["range_lo"] = stack.range_lo;
    meta["range_hi"] = stack.range_hi;
    meta["seed"] = stack.seed;
    meta["frames"] = stack.frames.size();
    if (stack.source) {
        meta["source_k"] = stack.source->k;
        meta["source_sigma2"] = stack.source->sigma2;
    }
    std::ofstream os(dir + "/chart_meta.json");
    os << meta.dump(2) << "\n";
}

ChartStack load_chart(const std::string& dir) {
    const auto meta = read_json_file(dir + "/chart_meta.json");
    ChartStack stack;
    try {
        stack.levels = meta.at("levels").get<std::size_t>();
        stack.range_lo = meta.at("range_lo").get<double>();
        stack.range_hi = meta.at("range_hi").get<double>();
        stack.seed = meta.at("seed").get<std::uint64_t>();
        const std::size_t frames = meta.at("frames").get<std::size_t>();
        stack.true_signal = read_slt_file<double>(dir + "/chart_true.slt");
        for (std::size_t f = 0; f < frames; ++f) {
            char name[64];
            std::snprintf(name, sizeof(name), "/chart_frame_%03zu.slt", f);
            stack.frames.push_back(read_slt_file<double>(dir + name));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("chart metadata incomplete: " + std::string(e.what()));
    }
    return stack;
}

// ------------------------------------------------------------- subcommands

int cmd_synth_chart(std::size_t levels, std::size_t frames, const std::string& size, double lo, double hi, double k,
                    double sigma2, std::uint64_t seed, const std::string& out_dir) {
    ChartSpec spec;
    spec.levels = levels;
    spec.frame_count = frames;
    std::tie(spec.width, spec.height) = parse_size(size); // given as WxH
    spec.range_lo = lo;
    spec.range_hi = hi;
    auto stack = synthesize_gray_chart(spec, {k, sigma2}, seed);
    save_chart(out_dir, stack);
    std::cout << "chart written to " << out_dir << " (" << frames << " frames, " << levels << " levels)\n";
    return 0;
}

int cmd_calibrate(const std::string& chart_dir, bool per_pixel, const std::string& out_dir) {
    auto stack = load_chart(chart_dir);
    auto result = calibrate_noise(stack, !per_pixel);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "k=%.6g\nsigma2=%.6g\nr2=%.6f\npatches=%zu\nclamped=%d\n", result.params.k,
                  result.params.sigma2, result.r2, result.points, result.sigma2_clamped ? 1 : 0);
    std::cout << buf;
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        std::ofstream os(out_dir + "/calibration.txt");
        os << buf;
    }
    return 0;
}

int cmd_simulate(const std::string& input, double k, double sigma2, double ratio, std::uint64_t seed,
                 int iso, const std::string& out) {
    RawFrame<double> clean = read_raw<double>(input);
    // expected pre-gain signal of one short exposure
    Tensor<double> x_star(clean.bayer.shape());
    for (std::size_t i = 0; i < x_star.numel(); ++i)
        x_star.data()[i] =
            std::max(0.0, (static_cast<double>(clean.bayer.data()[i]) - clean.black_level)) / ratio;
    Tensor<double> noisy = sample_noisy(x_star, {k, sigma2}, {1.0}, seed);
    RawFrame<double> frame = clean;
    frame.exposure_s = clean.exposure_s / ratio;
    if (iso) frame.iso = iso;
    frame.bayer = Tensor<double>(clean.bayer.shape());
    for (std::size_t i = 0; i < noisy.numel(); ++i)
        frame.bayer.data()[i] = std::clamp(noisy.data()[i] + clean.black_level, 0.0, clean.white_level);
    write_raw(out, frame);
    std::cout << "simulated short exposure written to " << out << "\n";
    return 0;
}

int cmd_preprocess(const std::string& input, double ratio, const std::string& out) {
    RawFrame<Real> frame = read_raw<Real>(input);
    PackedRaw<Real> packed = preprocess(frame, {ratio});
    write_slt_file(out, packed.data);
    std::cout << "packed " << shape_str(packed.data.shape()) << " written to " << out << "\n";
    return 0;
}

int cmd_cost(const std::string& config_path, const std::string& input, bool one_stage) {
    const auto [raw_w, raw_h] = parse_size(input);
    if (raw_w % 2 != 0 || raw_h % 2 != 0) throw ConfigError("raw extents must be even");
    const std::size_t ph = raw_h / 2, pw = raw_w / 2;

    NetworkConfig c1 = load_config(config_path, Stage::denoise);
    NetworkConfig c2 = load_config(config_path, Stage::raw2rgb);
    const CostReport r1 = count_cost(c1, ph, pw);
    const CostReport r2 = count_cost(c2, ph, pw);
    CostReport total = r1;
    if (!one_stage) total += r2;

    auto print_row = [](const std::string& label, const CostReport& r) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s GMACs=%.4f Params_M=%.4f\n", label.c_str(),
                      static_cast<double>(r.macs) / 1e9, static_cast<double>(r.params) / 1e6);
        std::cout << buf;
    };
    print_row("stage1", r1);
    if (!one_stage) {
        print_row("stage2", r2);
        print_row("total", total);
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "fixed_macs=%llu (per-image pooled gates, excluded from GMACs)\n",
                  static_cast<unsigned long long>(total.fixed_macs));
    std::cout << buf;
    return 0;
}

int cmd_gradcheck(const std::string& ops) {
    const auto results = gradcheck::run_suite(ops);
    bool all_pass = true;
    for (const auto& r : results) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-26s %s max_rel=%.3e tol=%.0e\n", r.name.c_str(), r.pass ? "pass" : "FAIL",
                      r.max_rel, r.tol);
        std::cout << buf;
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "gradcheck: all passed\n" : "gradcheck: FAILURES\n");
    return all_pass ? 0 : 1;
}

struct TrainArgs {
    std::string phase = "stage1";
    std::string config_path;
    std::string plan_path;
    std::string out_dir = ".";
    std::string stage1_ckpt, stage2_ckpt;
    std::string variant, skip_mode; // override the config when set
    std::size_t epochs = 0;         // 0: keep plan/default
    std::uint64_t seed = 1;
    std::string noise = "real_calibrated";
    double ratio = 100.0;
    double lr = 0.0;
    std::size_t patch = 0;
    double k = 2.0, sigma2 = 4.0;
    std::size_t train_scenes = 12, eval_scenes = 4;
    std::size_t scene_rgb = 160, eval_rgb = 128;

    NetworkConfig config(Stage stage) const {
        NetworkConfig cfg = load_config(config_path, stage);
        if (!variant.empty()) cfg.variant = variant_from(variant);
        if (!skip_mode.empty()) cfg.skip_mode = skip_mode_from(skip_mode);
        cfg.validate();
        return cfg;
    }
};

int cmd_train(const TrainArgs& args) {
    TrainPlan plan;
    if (!args.plan_path.empty()) plan = plan_from_json(read_json_file(args.plan_path));
    plan.phase = args.phase == "joint" ? Phase::joint : (args.phase == "stage2" ? Phase::stage2 : Phase::stage1);
    if (args.epochs) plan.epochs = args.epochs;
    plan.seed = args.seed;
    plan.noise = noise_source_from(args.noise);
    plan.ratio = args.ratio;
    if (args.lr > 0.0) plan.adam.lr = args.lr;
    if (args.patch) plan.patch = args.patch;
    if (plan.patch < 44 && plan.loss.msssim_levels > 2) plan.loss.msssim_levels = 2;
    plan.validate();

    ensure_dir(args.out_dir);
    SceneCorpus<Real> corpus =
        make_corpus<Real>(args.train_scenes, args.eval_scenes, args.scene_rgb, args.eval_rgb, mix64(plan.seed ^ 0x5CE9E5));
    const NoiseParams noise{args.k, args.sigma2};
    TrainSetup<Real> setup{plan, noise, SensorModel{}, &corpus};

    if (args.phase == "stage1") {
        Network<Real> net = build<Real>(args.config(Stage::denoise), plan.seed);
        auto run = train_stage1(net, setup, noise);
        auto params = net.params();
        save_checkpoint(args.out_dir + "/stage1.ckpt", params);
        write_curve_csv(args.out_dir + "/stage1_curve.csv", run.curve);
        std::printf("stage1 eval psnr: %.2f dB (checkpoint %s/stage1.ckpt)\n", run.eval_psnr, args.out_dir.c_str());
    } else if (args.phase == "stage2" || args.phase == "onestage") {
        Network<Real> net = build<Real>(args.config(Stage::raw2rgb), plan.seed);
        auto run = train_stage2(net, setup, noise, args.phase == "onestage");
        auto params = net.params();
        const std::string name = args.phase == "onestage" ? "onestage" : "stage2";
        save_checkpoint(args.out_dir + "/" + name + ".ckpt", params);
        write_curve_csv(args.out_dir + "/" + name + "_curve.csv", run.curve);
        std::printf("%s eval psnr: %.2f dB (checkpoint %s/%s.ckpt)\n", name.c_str(), run.eval_psnr,
                    args.out_dir.c_str(), name.c_str());
    } else if (args.phase == "joint") {
        Cascade<Real> cascade{build<Real>(args.config(Stage::denoise), plan.seed),
                              build<Real>(args.config(Stage::raw2rgb), plan.seed + 1)};
        if (!args.stage1_ckpt.empty()) {
            auto p = cascade.stage1.params();
            load_checkpoint(args.stage1_ckpt, p);
        }
        if (!args.stage2_ckpt.empty()) {
            auto p = cascade.stage2.params();
            load_checkpoint(args.stage2_ckpt, p);
        }
        auto run = finetune_joint(cascade, setup, noise);
        auto p1 = cascade.stage1.params();
        auto p2 = cascade.stage2.params();
        save_checkpoint(args.out_dir + "/joint_stage1.ckpt", p1);
        save_checkpoint(args.out_dir + "/joint_stage2.ckpt", p2);
        write_curve_csv(args.out_dir + "/joint_curve.csv", run.curve);
        std::printf("joint eval psnr: %.2f dB (checkpoints %s/joint_stage{1,2}.ckpt)\n", run.eval_psnr,
                    args.out_dir.c_str());
    } else {
        throw ConfigError("unknown phase '" + args.phase + "'");
    }
    return 0;
}

int cmd_infer(const std::string& input, double ratio, const std::string& config_path, const std::string& stage1_ckpt,
              const std::string& stage2_ckpt, const std::string& stage_sel, std::size_t tile, unsigned bits,
              std::uint64_t seed, const std::string& out) {
    RawFrame<Real> frame = read_raw<Real>(input);
    PackedRaw<Real> packed = preprocess(frame, {ratio});

    const bool denoise_only = stage_sel == "denoise";
    Network<Real> stage1 = build<Real>(load_config(config_path, Stage::denoise), seed);
    if (!stage1_ckpt.empty()) {
        auto p = stage1.params();
        load_checkpoint(stage1_ckpt, p);
    }

    if (denoise_only) {
        Tensor<Real> result = tile ? tiled_forward(stage1, packed.data, tile) : stage1.forward(packed.data);
        const std::size_t clamped = write_image(out, unpack_bayer(clamp01(result)), bits);
        std::printf("denoised bayer written to %s (%zu values clamped)\n", out.c_str(), clamped);
        return 0;
    }

    Network<Real> stage2 = build<Real>(load_config(config_path, Stage::raw2rgb), seed + 1);
    if (!stage2_ckpt.empty()) {
        auto p = stage2.params();
        load_checkpoint(stage2_ckpt, p);
    }
    Cascade<Real> cascade{std::move(stage1), std::move(stage2)};
    Tensor<Real> rgb = tile ? tiled_forward(cascade, packed.data, tile) : cascade.forward(packed.data);
    const std::size_t clamped = write_image(out, clamp01(rgb), bits);
    std::printf("rgb written to %s (%zu values clamped)\n", out.c_str(), clamped);
    return 0;
}

int cmd_ablate(const std::string& table, std::uint64_t seed, std::size_t seeds, double epoch_scale,
               const std::string& out_dir) {
    BenchmarkSettings settings;
    if (epoch_scale != 1.0) {
        auto scale = [&](std::size_t e) { return std::max<std::size_t>(1, static_cast<std::size_t>(e * epoch_scale)); };
        settings.stage1_epochs = scale(settings.stage1_epochs);
        settings.stage2_epochs = scale(settings.stage2_epochs);
        settings.joint_epochs = scale(settings.joint_epochs);
        settings.onestage_epochs = scale(settings.onestage_epochs);
    }
    ensure_dir(out_dir);
    std::ofstream csv(out_dir.empty() ? "/dev/null" : out_dir + "/ablate_table" + table + ".csv");

    if (table == "2" || table == "3") {
        auto rows = table == "2" ? run_variant_grid(settings, seed) : run_skip_grid(settings, seed);
        std::printf("%-12s %10s %10s\n", table == "2" ? "variant" : "skip", "psnr", "params");
        csv << (table == "2" ? "variant" : "skip") << ",psnr,params\n";
        for (const auto& row : rows) {
            std::printf("%-12s %10.2f %10llu\n", row.label.c_str(), row.psnr,
                        static_cast<unsigned long long>(row.params));
            csv << row.label << "," << row.psnr << "," << row.params << "\n";
        }
        return 0;
    }
    if (table != "4") throw ConfigError("unknown table '" + table + "' (use 2, 3 or 4)");

    std::printf("%-6s %8s %8s %8s %8s %8s %8s\n", "seed", "noisy", "stage1", "real", "random", "none", "onestage");
    csv << "seed,noisy,stage1,real,random,none,onestage\n";
    double mean_real = 0, mean_random = 0, mean_none = 0, mean_one = 0;
    for (std::size_t s = 0; s < seeds; ++s) {
        auto o = run_two_stage_benchmark(settings, seed + s);
        std::printf("%-6llu %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", (unsigned long long)o.seed, o.noisy_psnr,
                    o.stage1_psnr, o.rgb_real, o.rgb_random, o.rgb_none, o.rgb_onestage);
        std::fflush(stdout);
        csv << o.seed << "," << o.noisy_psnr << "," << o.stage1_psnr << "," << o.rgb_real << "," << o.rgb_random << ","
            << o.rgb_none << "," << o.rgb_onestage << "\n";
        mean_real += o.rgb_real;
        mean_random += o.rgb_random;
        mean_none += o.rgb_none;
        mean_one += o.rgb_onestage;
    }
    const double n = static_cast<double>(seeds);
    std::printf("mean   %8s %8s %8.2f %8.2f %8.2f %8.2f\n", "", "", mean_real / n, mean_random / n, mean_none / n,
                mean_one / n);
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"low-light raw enhancement toolkit"};
    app.require_subcommand(1);

    // ---- synth-chart
    auto* synth = app.add_subcommand("synth-chart", "generate a synthetic gray-chart stack");
    std::size_t levels = 16, frames = 50;
    std::string chart_size = "128x128";
    double range_lo = 0.5, range_hi = 4.0, k = 2.0, sigma2 = 4.0;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    synth->add_option("--levels", levels, "gray levels in the wedge");
    synth->add_option("--frames", frames, "frames in the stack");
    synth->add_option("--size", chart_size, "chart size WxH");
    synth->add_option("--range-lo", range_lo, "lowest wedge value, DN");
    synth->add_option("--range-hi", range_hi, "highest wedge value, DN");
    synth->add_option("--k", k, "true system gain");
    synth->add_option("--sigma2", sigma2, "true read-noise variance");
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--out-dir", out_dir, "output directory");

    // ---- calibrate
    auto* calib = app.add_subcommand("calibrate", "fit (k, sigma2) from a chart stack");
    std::string chart_dir = ".";
    bool per_pixel = false;
    std::string calib_out;
    calib->add_option("--input", chart_dir, "chart directory");
    calib->add_flag("--per-pixel", per_pixel, "fit per pixel instead of pooling patches");
    calib->add_option("--out-dir", calib_out, "also write calibration.txt here");

    // ---- simulate
    auto* sim = app.add_subcommand("simulate", "synthesize a noisy short exposure from a clean raw");
    std::string sim_in, sim_out = "short.raw";
    double sim_ratio = 100.0;
    int sim_iso = 0;
    sim->add_option("--input", sim_in, "clean raw file")->required();
    sim->add_option("--k", k, "system gain");
    sim->add_option("--sigma2", sigma2, "read-noise variance");
    sim->add_option("--ratio", sim_ratio, "exposure ratio being compensated");
    sim->add_option("--seed", seed, "rng seed");
    sim->add_option("--iso", sim_iso, "iso tag for the output sidecar");
    sim->add_option("--out", sim_out, "output raw file");

    // ---- preprocess
    auto* prep = app.add_subcommand("preprocess", "normalize, amplify and pack a raw frame");
    std::string prep_in, prep_out = "packed.slt";
    double prep_ratio = 100.0;
    prep->add_option("--input", prep_in, "raw file")->required();
    prep->add_option("--ratio", prep_ratio, "amplification ratio");
    prep->add_option("--out", prep_out, "output tensor file");

    // ---- cost
    auto* cost = app.add_subcommand("cost", "analytic MAC/parameter report");
    std::string cost_config, cost_input = "4256x2848";
    bool cost_one_stage = false;
    cost->add_option("--config", cost_config, "network config json");
    cost->add_option("--input", cost_input, "raw input size WxH");
    cost->add_flag("--one-stage", cost_one_stage, "report a single stage only");

    // ---- gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference verification suite");
    std::string ops = "all";
    grad->add_option("--ops", ops, "all|tensor|blocks|network|loss");

    // ---- train
    auto* train = app.add_subcommand("train", "train a stage on the synthetic corpus");
    TrainArgs targs;
    train->add_option("--phase", targs.phase, "stage1|stage2|joint|onestage");
    train->add_option("--config", targs.config_path, "network config json");
    train->add_option("--plan", targs.plan_path, "train plan json");
    train->add_option("--out-dir", targs.out_dir, "output directory");
    train->add_option("--stage1-ckpt", targs.stage1_ckpt, "checkpoint for the denoise stage (joint)");
    train->add_option("--stage2-ckpt", targs.stage2_ckpt, "checkpoint for the raw2rgb stage (joint)");
    train->add_option("--epochs", targs.epochs, "training epochs (passes over the corpus)");
    train->add_option("--seed", targs.seed, "rng seed");
    train->add_option("--noise", targs.noise, "real_calibrated|random|none");
    train->add_option("--ratio", targs.ratio, "amplification ratio");
    train->add_option("--lr", targs.lr, "learning rate");
    train->add_option("--patch", targs.patch, "training patch size");
    train->add_option("--k", targs.k, "sensor gain used for simulation");
    train->add_option("--sigma2", targs.sigma2, "read-noise variance used for simulation");
    train->add_option("--train-scenes", targs.train_scenes, "synthetic training scenes");
    train->add_option("--eval-scenes", targs.eval_scenes, "synthetic held-out scenes");
    train->add_option("--variant", targs.variant, "attention variant override");
    train->add_option("--skip-mode", targs.skip_mode, "skip fusion override");

    // ---- infer
    auto* infer = app.add_subcommand("infer", "run raw -> image through checkpointed stages");
    std::string infer_in, infer_out = "out.png", infer_cfg, infer_s1, infer_s2, infer_stage = "cascade";
    double infer_ratio = 100.0;
    std::size_t infer_tile = 0;
    unsigned infer_bits = 8;
    infer->add_option("--input", infer_in, "raw file")->required();
    infer->add_option("--ratio", infer_ratio, "amplification ratio");
    infer->add_option("--config", infer_cfg, "network config json");
    infer->add_option("--checkpoint", infer_s1, "denoise checkpoint");
    infer->add_option("--checkpoint2", infer_s2, "raw2rgb checkpoint");
    infer->add_option("--stage", infer_stage, "cascade|denoise");
    infer->add_option("--tile", infer_tile, "tile size (0 = untiled)");
    infer->add_option("--bits", infer_bits, "png bit depth, 8 or 16");
    infer->add_option("--seed", seed, "seed for identity-initialized stages");
    infer->add_option("--out", infer_out, "output png");

    // ---- ablate
    auto* ablate = app.add_subcommand("ablate", "toy-scale study grids");
    std::string table = "4";
    std::size_t ablate_seeds = 1;
    double epoch_scale = 1.0;
    std::string ablate_out;
    ablate->add_option("--table", table, "2 (variants), 3 (skips) or 4 (two-stage)");
    ablate->add_option("--seed", seed, "base seed");
    ablate->add_option("--seeds", ablate_seeds, "number of seeds (table 4)");
    ablate->add_option("--epoch-scale", epoch_scale, "scale all phase epochs (quick runs)");
    ablate->add_option("--out-dir", ablate_out, "write csv here");

    // CLI11 wants argc/argv
    std::vector<const char*> argv;
    argv.push_back("llre");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            print_resolved("synth-chart", {{"levels", levels},
                                           {"frames", frames},
                                           {"size", chart_size},
                                           {"range", {range_lo, range_hi}},
                                           {"k", k},
                                           {"sigma2", sigma2},
                                           {"seed", seed},
                                           {"out_dir", out_dir}});
            return cmd_synth_chart(levels, frames, chart_size, range_lo, range_hi, k, sigma2, seed, out_dir);
        }
        if (calib->parsed()) {
            print_resolved("calibrate", {{"input", chart_dir}, {"per_pixel", per_pixel}});
            return cmd_calibrate(chart_dir, per_pixel, calib_out);
        }
        if (sim->parsed()) {
            print_resolved("simulate",
                           {{"input", sim_in}, {"k", k}, {"sigma2", sigma2}, {"ratio", sim_ratio}, {"seed", seed}});
            return cmd_simulate(sim_in, k, sigma2, sim_ratio, seed, sim_iso, sim_out);
        }
        if (prep->parsed()) {
            print_resolved("preprocess", {{"input", prep_in}, {"ratio", prep_ratio}, {"out", prep_out}});
            return cmd_preprocess(prep_in, prep_ratio, prep_out);
        }
        if (cost->parsed()) {
            print_resolved("cost", {{"config", cost_config}, {"input", cost_input}, {"one_stage", cost_one_stage}});
            return cmd_cost(cost_config, cost_input, cost_one_stage);
        }
        if (grad->parsed()) {
            print_resolved("gradcheck", {{"ops", ops}});
            return cmd_gradcheck(ops);
        }
        if (train->parsed()) {
            print_resolved("train", {{"phase", targs.phase},
                                     {"seed", targs.seed},
                                     {"noise", targs.noise},
                                     {"epochs", targs.epochs},
                                     {"ratio", targs.ratio},
                                     {"out_dir", targs.out_dir}});
            return cmd_train(targs);
        }
        if (infer->parsed()) {
            print_resolved("infer", {{"input", infer_in},
                                     {"ratio", infer_ratio},
                                     {"stage", infer_stage},
                                     {"tile", infer_tile},
                                     {"bits", infer_bits},
                                     {"seed", seed},
                                     {"out", infer_out}});
            return cmd_infer(infer_in, infer_ratio, infer_cfg, infer_s1, infer_s2, infer_stage, infer_tile, infer_bits,
                             seed, infer_out);
        }
        if (ablate->parsed()) {
            print_resolved("ablate", {{"table", table},
                                      {"seed", seed},
                                      {"seeds", ablate_seeds},
                                      {"epoch_scale", epoch_scale}});
            return cmd_ablate(table, seed, ablate_seeds, epoch_scale, ablate_out);
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    std::cerr << "error: no command\n";
    return 1;
}

} // namespace llre::cli
