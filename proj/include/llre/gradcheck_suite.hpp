#pragma once

#include <string>
#include <vector>

#include "llre/blocks.hpp"
#include "llre/gradcheck.hpp"
#include "llre/network.hpp"
#include "llre/training.hpp"

// The enumerated finite-difference suite: every differentiable operator and
// the block/network composites, checked at f64 against central differences.

namespace llre::gradcheck {

namespace suite_detail {

inline Tensor<double> probe(const Tensor<double>& t, std::uint64_t seed) {
    SeqRng rng(seed);
    Tensor<double> c(t.shape());
    for (std::size_t i = 0; i < c.numel(); ++i) c.data()[i] = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, c));
}

} // namespace suite_detail

// filter: all | tensor | blocks | network | loss
inline std::vector<CheckResult> run_suite(const std::string& filter = "all") {
    using suite_detail::probe;
    const bool want_tensor = filter == "all" || filter == "tensor";
    const bool want_blocks = filter == "all" || filter == "blocks";
    const bool want_network = filter == "all" || filter == "network";
    const bool want_loss = filter == "all" || filter == "loss";
    if (!want_tensor && !want_blocks && !want_network && !want_loss)
        throw ConfigError("unknown gradcheck filter '" + filter + "' (use all|tensor|blocks|network|loss)");

    std::vector<Check> checks;
    SeqRng rng(0xC0DEC);

    if (want_tensor) {
        {
            auto x = random_tensor<double>(rng, {4, 4, 3});
            auto w = random_tensor<double>(rng, {3, 5});
            auto b = random_tensor<double>(rng, {5});
            checks.push_back({"conv1x1", [=]() { return probe(conv1x1(x, w, b), 1); }, {x, w, b}});
        }
        {
            auto x = random_tensor<double>(rng, {5, 5, 2});
            auto k = random_tensor<double>(rng, {3, 3, 2});
            auto b = random_tensor<double>(rng, {2});
            checks.push_back({"dwconv3x3", [=]() { return probe(dwconv3x3(x, k, b), 2); }, {x, k, b}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 4, 8});
            auto g = random_tensor<double>(rng, {8});
            auto o = random_tensor<double>(rng, {8});
            checks.push_back({"layer_norm", [=]() { return probe(layer_norm(x, g, o), 3); }, {x, g, o}});
        }
        {
            auto z = random_tensor<double>(rng, {9, 3});
            checks.push_back({"softmax_over_positions", [=]() { return probe(softmax_over_positions(z), 4); }, {z}});
        }
        {
            auto x = Tensor<double>::from_data({4}, {-2.0, -0.5, 0.5, 2.0});
            checks.push_back({"gelu", [=]() { return probe(gelu(x), 5); }, {x}});
        }
        {
            auto x = random_tensor<double>(rng, {6});
            checks.push_back({"sigmoid", [=]() { return probe(sigmoid(x), 6); }, {x}});
        }
        {
            auto x = random_tensor<double>(rng, {3, 4});
            auto w = random_tensor<double>(rng, {4, 5});
            auto b = random_tensor<double>(rng, {5});
            checks.push_back({"linear", [=]() { return probe(linear(x, w, b), 7); }, {x, w, b}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 4, 8});
            checks.push_back(
                {"pixel_shuffle_roundtrip", [=]() { return probe(pixel_shuffle(pixel_unshuffle(x, 2), 2), 8); }, {x}});
        }
        {
            auto a = random_tensor<double>(rng, {3, 3});
            auto b = random_tensor<double>(rng, {3, 3});
            for (std::size_t i = 0; i < b.numel(); ++i) b.data()[i] = 1.5 + b.data()[i] * b.data()[i];
            checks.push_back({"elementwise_arithmetic", [=]() {
                                  auto t = div(mul(a, b), add_scalar(mul(b, b), 1.0));
                                  return probe(add(sub(t, a), mul_scalar(b, 0.7)), 9);
                              },
                              {a, b}});
        }
        {
            auto x = random_tensor<double>(rng, {7});
            for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] += x.data()[i] > 0 ? 0.5 : -0.5;
            checks.push_back({"abs_relu", [=]() { return probe(add(absval(x), relu(x)), 10); }, {x}});
        }
        {
            auto x = random_tensor<double>(rng, {5});
            for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = 0.4 + std::abs(x.data()[i]);
            checks.push_back({"pow_const", [=]() { return probe(pow_const(x, 0.2863), 11); }, {x}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 6, 4});
            checks.push_back({"slice_concat", [=]() {
                                  auto lo = slice_last(x, 0, 2);
                                  auto hi = slice_last(x, 2, 4);
                                  return probe(concat_last(hi, lo), 12);
                              },
                              {x}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 4, 3});
            checks.push_back({"spatial_mean", [=]() {
                                  auto m = spatial_mean(x);
                                  return sum_all(mul(m, m));
                              },
                              {x}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 4, 3});
            auto a = random_tensor<double>(rng, {3});
            checks.push_back({"scale_channels", [=]() { return probe(scale_channels(x, a), 13); }, {x, a}});
        }
        {
            auto x = random_tensor<double>(rng, {6, 4, 2});
            checks.push_back({"avg_pool2", [=]() { return probe(avg_pool2(x), 14); }, {x}});
        }
        {
            auto x = random_tensor<double>(rng, {6, 6, 2});
            std::vector<double> k = {0.05, 0.25, 0.4, 0.25, 0.05};
            checks.push_back({"filter2_valid", [=]() {
                                  return probe(filter2_valid(filter2_valid(x, k, 5, 1), k, 1, 5), 15);
                              },
                              {x}});
        }
        {
            auto v = random_tensor<double>(rng, {8});
            auto w = random_tensor<double>(rng, {3});
            checks.push_back({"conv1d_channels", [=]() { return probe(conv1d_channels(v, w), 16); }, {v, w}});
        }
        {
            auto q = random_tensor<double>(rng, {6, 2, 3});
            auto w = random_tensor<double>(rng, {2, 3});
            checks.push_back({"head_project", [=]() { return probe(head_project(q, w, 0.57735), 17); }, {q, w}});
        }
        {
            auto q = random_tensor<double>(rng, {6, 2, 3});
            auto a = random_tensor<double>(rng, {6, 2});
            checks.push_back({"weighted_context", [=]() { return probe(weighted_context(a, q), 18); }, {a, q}});
        }
        {
            auto g = random_tensor<double>(rng, {2, 3});
            auto p = random_tensor<double>(rng, {6, 2, 3});
            checks.push_back({"broadcast_mul_heads", [=]() { return probe(broadcast_mul_heads(g, p), 19); }, {g, p}});
        }
        {
            auto x = random_tensor<double>(rng, {4, 3});
            checks.push_back(
                {"reductions", [=]() { return add(mean_all(mul(x, x)), mul_scalar(sum_all(x), 0.1)); }, {x}});
        }
    }

    if (want_blocks) {
        SeqRng brng(0xB10C);
        {
            auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, brng);
            auto x = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back({"siamese_split", [=]() {
                                  auto s = siamese_split(x, u, 2);
                                  return add(probe(s.q, 20), probe(s.p, 21));
                              },
                              {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value}});
        }
        {
            auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, brng);
            auto x = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back({"ssa1", [=]() { return probe(ssa1(x, u, 2), 22); },
                              {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value, u.gate.w.value,
                               u.l1.value, u.l2.value}});
        }
        {
            auto u = init_ssa_unit<double>("u", SsaKind::gelu_gate, 4, 2, brng);
            auto x = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back({"ssa2", [=]() { return probe(ssa2(x, u, 2), 23); },
                              {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value}});
        }
        {
            auto w = init_ssab<double>("b", 4, 2, SsaKind::gated_context, SsaKind::gelu_gate, brng);
            auto x = random_tensor<double>(brng, {3, 2, 4});
            std::vector<Param<double>*> params;
            w.collect(params);
            std::vector<Tensor<double>> wrt{x};
            for (auto* p : params) wrt.push_back(p->value);
            checks.push_back({"ssab_block", [=]() { return probe(ssab_block(x, w), 24); }, wrt});
        }
        {
            auto w = init_sca<double>("s", 4, 4, brng);
            auto shallow = random_tensor<double>(brng, {3, 3, 4});
            auto deep = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back({"sca_forward", [=]() { return probe(sca_forward(shallow, deep, w), 25); },
                              {shallow, deep, w.mlp1_w.value, w.mlp1_b.value, w.mlp2_w.value, w.mlp2_b.value}});
        }
        {
            auto w = init_se<double>("se", 4, 4, brng);
            auto shallow = random_tensor<double>(brng, {3, 3, 4});
            auto deep = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back({"se_forward", [=]() { return probe(se_forward(shallow, deep, w), 26); },
                              {shallow, deep, w.mlp1_w.value, w.mlp1_b.value, w.mlp2_w.value, w.mlp2_b.value}});
        }
        {
            auto w = init_eca<double>("eca", brng);
            auto shallow = random_tensor<double>(brng, {3, 3, 4});
            auto deep = random_tensor<double>(brng, {3, 3, 4});
            checks.push_back(
                {"eca_forward", [=]() { return probe(eca_forward(shallow, deep, w), 27); }, {shallow, deep, w.conv_w.value}});
        }
    }

    if (want_network) {
        NetworkConfig cfg;
        cfg.scales = 2;
        cfg.widths = {4, 8};
        cfg.blocks_per_scale = 1;
        cfg.bottleneck_blocks = 1;
        cfg.heads = 2;
        SeqRng nrng(0x3E7);
        for (Stage stage : {Stage::denoise, Stage::raw2rgb}) {
            cfg.stage = stage;
            auto net = std::make_shared<Network<double>>(build<double>(cfg, 0xF00D + static_cast<int>(stage)));
            // randomize the zero denoise head so the sweep sees nonzero flow
            for (auto& v : net->head_w.value.vec()) v = nrng.uniform(-0.4, 0.4);
            auto x = random_tensor<double>(nrng, {4, 4, 4}, 0.4);
            std::vector<Tensor<double>> wrt{x};
            for (auto* p : net->params()) wrt.push_back(p->value);
            const std::string name = std::string("unet_") + to_string(stage);
            const int pseed = 28 + static_cast<int>(stage);
            checks.push_back({name, [=]() { return probe(net->forward(x), pseed); }, wrt});
        }
        {
            // cascaded stages differentiate end to end
            auto c1 = cfg;
            c1.stage = Stage::denoise;
            auto c2 = cfg;
            c2.stage = Stage::raw2rgb;
            auto cas = std::make_shared<Cascade<double>>(Cascade<double>{build<double>(c1, 0xAB), build<double>(c2, 0xCD)});
            for (auto& v : cas->stage1.head_w.value.vec()) v = nrng.uniform(-0.4, 0.4);
            auto x = random_tensor<double>(nrng, {4, 4, 4}, 0.4);
            std::vector<Tensor<double>> wrt{x};
            // a sampled subset keeps the composite affordable; the stages
            // were already swept exhaustively above
            auto params = cas->params();
            for (std::size_t i = 0; i < params.size(); i += 7) wrt.push_back(params[i]->value);
            checks.push_back({"cascade", [=]() { return probe(cas->forward(x), 30); }, wrt});
        }
    }

    if (want_loss) {
        SeqRng lrng(0x1055);
        {
            auto pred = random_tensor<double>(lrng, {4, 4, 2}, 0.3);
            auto target = random_tensor<double>(lrng, {4, 4, 2}, 0.3);
            checks.push_back({"l1_loss", [=]() { return l1_loss(pred, target); }, {pred}});
        }
        {
            LossConfig cfg;
            cfg.msssim_levels = 2;
            Tensor<double> pred({32, 32, 1}), target({32, 32, 1});
            for (std::size_t i = 0; i < pred.numel(); ++i) {
                target.data()[i] = 0.5 + 0.3 * std::sin(static_cast<double>(i % 41) * 0.17);
                pred.data()[i] = target.data()[i] + lrng.uniform(-0.06, 0.06);
            }
            checks.push_back({"msssim_loss", [=]() { return msssim_loss(pred, target, cfg); }, {pred}, 1e-3});
        }
        {
            LossConfig cfg;
            cfg.msssim_levels = 2;
            // keep |pred - target| clear of the L1 kink so central
            // differences stay on one side of it
            Tensor<double> pred({44, 44, 3}), target({44, 44, 3});
            for (std::size_t i = 0; i < pred.numel(); ++i) {
                target.data()[i] = 0.5 + 0.25 * std::cos(static_cast<double>(i % 29) * 0.23);
                const double mag = lrng.uniform(0.01, 0.05);
                pred.data()[i] = target.data()[i] + (lrng.coin() ? mag : -mag);
            }
            checks.push_back({"combined_loss", [=]() { return combined_loss(pred, target, cfg); }, {pred}, 1e-3});
        }
    }

    std::vector<CheckResult> results;
    results.reserve(checks.size());
    for (const auto& c : checks) results.push_back(run_check(c));
    return results;
}

} // namespace llre::gradcheck
