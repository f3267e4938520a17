#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "llre/blocks.hpp"
#include "llre/gradcheck.hpp"

using namespace llre;
using gradcheck::random_tensor;

namespace {

Tensor<double> probe(const Tensor<double>& t, std::uint64_t seed = 7) {
    SeqRng rng(seed);
    Tensor<double> c(t.shape());
    for (std::size_t i = 0; i < c.numel(); ++i) c.data()[i] = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, c));
}

void zero_fill(Param<double>& p) { std::fill(p.value.vec().begin(), p.value.vec().end(), 0.0); }

void set_identity(Param<double>& p) {
    const std::size_t n = p.value.extent(0);
    zero_fill(p);
    for (std::size_t i = 0; i < n; ++i) p.value.data()[i * n + i] = 1.0;
}

void set_delta_dw(Param<double>& k) {
    zero_fill(k);
    const std::size_t c = k.value.extent(2);
    for (std::size_t j = 0; j < c; ++j) k.value.data()[(1 * 3 + 1) * c + j] = 1.0;
}

// expansion that duplicates the input into both halves
void set_duplicating_expand(Param<double>& w) {
    const std::size_t c = w.value.extent(0);
    zero_fill(w);
    for (std::size_t i = 0; i < c; ++i) {
        w.value.data()[i * 2 * c + i] = 1.0;
        w.value.data()[i * 2 * c + c + i] = 1.0;
    }
}

} // namespace

TEST_CASE("siamese_split shape contract") {
    SeqRng rng(1);
    auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, rng);
    auto x = random_tensor<double>(rng, {2, 2, 4});
    auto s = siamese_split(x, u, 2);
    CHECK(s.q.shape() == Shape{4, 2, 2});
    CHECK(s.p.shape() == Shape{4, 2, 2});
    CHECK(s.positions == 4);
    CHECK(s.head_dim == 2);
    CHECK_THROWS_AS(siamese_split(x, u, 3), ConfigError);
}

TEST_CASE("siamese_split with duplicating weights copies the input into both halves") {
    SeqRng rng(2);
    auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 3, 1, rng);
    set_duplicating_expand(u.expand_w);
    zero_fill(u.expand_b);
    set_delta_dw(u.dw_k);
    zero_fill(u.dw_b);
    auto x = random_tensor<double>(rng, {2, 3, 3});
    auto s = siamese_split(x, u, 1);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(s.q.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
        CHECK(s.p.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("siamese_split gradients match finite differences") {
    SeqRng rng(3);
    auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, rng);
    auto x = random_tensor<double>(rng, {3, 3, 4});
    auto res = gradcheck::run_check({"siamese_split",
                                     [=]() {
                                         auto s = siamese_split(x, u, 2);
                                         return add(probe(s.q, 3), probe(s.p, 4));
                                     },
                                     {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value}});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
}

TEST_CASE("attention_map zero logits give the uniform map") {
    SaliencyGate<double> gate;
    SeqRng rng(4);
    gate.w = Param<double>("w", random_tensor<double>(rng, {2, 3}));
    gate.dim_scale = 3.0;
    auto q = Tensor<double>({5, 2, 3});
    auto a = attention_map(q, gate);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("attention_map hand softmax") {
    SaliencyGate<double> gate;
    gate.w = Param<double>("w", Tensor<double>::from_data({1, 1}, {1.0}));
    gate.dim_scale = 1.0;
    auto q = Tensor<double>::from_data({2, 1, 1}, {std::log(1.0), std::log(3.0)});
    auto a = attention_map(q, gate);
    CHECK(a.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(a.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("attention_map conserves per-head mass") {
    SeqRng rng(5);
    SaliencyGate<double> gate;
    gate.w = Param<double>("w", random_tensor<double>(rng, {3, 4}));
    gate.dim_scale = 4.0;
    auto q = random_tensor<double>(rng, {97, 3, 4}, 2.0);
    auto a = attention_map(q, gate);
    for (std::size_t head = 0; head < 3; ++head) {
        double s = 0;
        for (std::size_t i = 0; i < 97; ++i) s += a.data()[i * 3 + head];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("global_context uniform weights give the per-head mean") {
    SeqRng rng(6);
    auto q = random_tensor<double>(rng, {8, 2, 3});
    auto a = Tensor<double>({8, 2}, 1.0 / 8.0);
    auto g = global_context(a, q);
    for (std::size_t head = 0; head < 2; ++head)
        for (std::size_t j = 0; j < 3; ++j) {
            double mean = 0;
            for (std::size_t i = 0; i < 8; ++i) mean += q.data()[(i * 2 + head) * 3 + j];
            mean /= 8.0;
            CHECK(g.data()[head * 3 + j] == doctest::Approx(mean).epsilon(1e-12));
        }
}

TEST_CASE("global_context one-hot selection") {
    SeqRng rng(7);
    auto q = random_tensor<double>(rng, {6, 2, 2});
    auto a = Tensor<double>({6, 2});
    a.data()[3 * 2 + 0] = 1.0; // head 0 selects position 3
    a.data()[1 * 2 + 1] = 1.0; // head 1 selects position 1
    auto g = global_context(a, q);
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(g.data()[0 * 2 + j] == q.data()[(3 * 2 + 0) * 2 + j]);
        CHECK(g.data()[1 * 2 + j] == q.data()[(1 * 2 + 1) * 2 + j]);
    }
}

TEST_CASE("global_context matches the naive double loop") {
    SeqRng rng(8);
    auto q = random_tensor<double>(rng, {19, 3, 5});
    auto raw = random_tensor<double>(rng, {19, 3});
    auto a = softmax_over_positions(raw);
    auto g = global_context(a, q);
    for (std::size_t head = 0; head < 3; ++head)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = 0;
            for (std::size_t i = 0; i < 19; ++i) acc += a.data()[i * 3 + head] * q.data()[(i * 3 + head) * 5 + j];
            CHECK(g.data()[head * 5 + j] == doctest::Approx(acc).epsilon(1e-13));
        }
}

TEST_CASE("global_context is invariant under position permutation") {
    SeqRng rng(9);
    auto q = random_tensor<double>(rng, {12, 2, 3});
    SaliencyGate<double> gate;
    gate.w = Param<double>("w", random_tensor<double>(rng, {2, 3}));
    gate.dim_scale = 3.0;
    auto g = global_context(attention_map(q, gate), q);

    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 11; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Tensor<double> qp({12, 2, 3});
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t k = 0; k < 6; ++k) qp.data()[i * 6 + k] = q.data()[perm[i] * 6 + k];
    auto gp = global_context(attention_map(qp, gate), qp);
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(gp.data()[i] == doctest::Approx(g.data()[i]).epsilon(1e-12));
}

TEST_CASE("ssa1 with zero weights and identity l2 returns the input") {
    SeqRng rng(10);
    auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, rng);
    zero_fill(u.expand_w);
    zero_fill(u.expand_b);
    zero_fill(u.dw_k);
    zero_fill(u.dw_b);
    zero_fill(u.l1);
    set_identity(u.l2);
    auto x = random_tensor<double>(rng, {3, 2, 4});
    auto y = ssa1(x, u, 2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("ssa1 preserves shapes") {
    SeqRng rng(11);
    for (int it = 0; it < 10; ++it) {
        const std::size_t heads = 1 + rng.below(3);
        const std::size_t c = heads * (1 + rng.below(4));
        const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
        auto u = init_ssa_unit<double>("u", SsaKind::gated_context, c, heads, rng);
        auto x = random_tensor<double>(rng, {h, w, c});
        CHECK(ssa1(x, u, heads).shape() == x.shape());
    }
}

TEST_CASE("ssa1 gradients match finite differences") {
    SeqRng rng(12);
    auto u = init_ssa_unit<double>("u", SsaKind::gated_context, 4, 2, rng);
    auto x = random_tensor<double>(rng, {3, 3, 4});
    auto res = gradcheck::run_check({"ssa1", [=]() { return probe(ssa1(x, u, 2)); },
                                     {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value,
                                      u.gate.w.value, u.l1.value, u.l2.value}});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
}

TEST_CASE("ssa2 annihilates when either half is zero") {
    SeqRng rng(13);
    const std::size_t c = 4;
    auto x = random_tensor<double>(rng, {2, 3, c});

    auto u = init_ssa_unit<double>("u", SsaKind::gelu_gate, c, 2, rng);
    set_delta_dw(u.dw_k);
    zero_fill(u.dw_b);
    zero_fill(u.expand_b);
    // zero out the Q columns, keep P random
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) u.expand_w.value.data()[i * 2 * c + j] = 0.0;
    auto y = ssa2(x, u, 2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));

    // now zero the P columns instead
    auto u2 = init_ssa_unit<double>("u", SsaKind::gelu_gate, c, 2, rng);
    set_delta_dw(u2.dw_k);
    zero_fill(u2.dw_b);
    zero_fill(u2.expand_b);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = c; j < 2 * c; ++j) u2.expand_w.value.data()[i * 2 * c + j] = 0.0;
    auto y2 = ssa2(x, u2, 2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y2.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("ssa2 gradients match finite differences") {
    SeqRng rng(14);
    auto u = init_ssa_unit<double>("u", SsaKind::gelu_gate, 4, 2, rng);
    auto x = random_tensor<double>(rng, {3, 3, 4});
    auto res = gradcheck::run_check({"ssa2", [=]() { return probe(ssa2(x, u, 2)); },
                                     {x, u.expand_w.value, u.expand_b.value, u.dw_k.value, u.dw_b.value}});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
}

TEST_CASE("ssab with degenerate weights doubles the input") {
    SeqRng rng(15);
    auto w = init_ssab<double>("b", 4, 2, SsaKind::gated_context, SsaKind::gelu_gate, rng);
    zero_fill(w.first.expand_w);
    zero_fill(w.first.expand_b);
    zero_fill(w.first.dw_k);
    zero_fill(w.first.dw_b);
    zero_fill(w.first.l1);
    set_identity(w.first.l2);
    zero_fill(w.second->expand_w);
    zero_fill(w.second->expand_b);
    zero_fill(w.second->dw_k);
    zero_fill(w.second->dw_b);
    auto x = random_tensor<double>(rng, {2, 2, 4});
    auto y = ssab(x, w);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
}

TEST_CASE("ssab analytic MAC count is linear in the position count") {
    const std::uint64_t n = 1024, c = 32;
    const auto at_n = ssab_macs(n, c, SsaKind::gated_context, SsaKind::gelu_gate);
    const auto at_4n = ssab_macs(4 * n, c, SsaKind::gated_context, SsaKind::gelu_gate);
    CHECK(at_4n == 4 * at_n);
}

TEST_CASE("ssab gradients match finite differences") {
    SeqRng rng(16);
    auto w = init_ssab<double>("b", 4, 2, SsaKind::gated_context, SsaKind::gelu_gate, rng);
    auto x = random_tensor<double>(rng, {3, 2, 4});
    std::vector<Param<double>*> params;
    w.collect(params);
    std::vector<Tensor<double>> wrt{x};
    for (auto* p : params) wrt.push_back(p->value);
    auto res = gradcheck::run_check({"ssab_block", [=]() { return probe(ssab_block(x, w)); }, wrt});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
}

TEST_CASE("ssab is permutation equivariant when depth-wise kernels are deltas") {
    SeqRng rng(17);
    auto w = init_ssab<double>("b", 6, 2, SsaKind::gated_context, SsaKind::gelu_gate, rng);
    set_delta_dw(w.first.dw_k);
    set_delta_dw(w.second->dw_k);
    auto x = random_tensor<double>(rng, {4, 3, 6});
    auto y = ssab(x, w);

    const std::size_t n = 12, c = 6;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Tensor<double> xp({4, 3, 6});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) xp.data()[i * c + j] = x.data()[perm[i] * c + j];
    auto yp = ssab(xp, w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            CHECK(yp.data()[i * c + j] == doctest::Approx(y.data()[perm[i] * c + j]).epsilon(1e-10));
}

TEST_CASE("sca saturated gate reduces to the plain skip sum") {
    SeqRng rng(18);
    auto w = init_sca<double>("s", 8, 4, rng);
    zero_fill(w.mlp1_w);
    zero_fill(w.mlp1_b);
    std::fill(w.mlp2_b.value.vec().begin(), w.mlp2_b.value.vec().end(), 20.0);
    auto shallow = random_tensor<double>(rng, {3, 3, 8});
    auto deep = random_tensor<double>(rng, {3, 3, 8});
    auto y = sca_forward(shallow, deep, w);
    for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(std::abs(y.data()[i] - (shallow.data()[i] + deep.data()[i])) < 1e-8);
}

TEST_CASE("sca closed gate returns the deep features") {
    SeqRng rng(19);
    auto w = init_sca<double>("s", 8, 4, rng);
    zero_fill(w.mlp1_w);
    zero_fill(w.mlp1_b);
    std::fill(w.mlp2_b.value.vec().begin(), w.mlp2_b.value.vec().end(), -20.0);
    auto shallow = random_tensor<double>(rng, {3, 3, 8});
    auto deep = random_tensor<double>(rng, {3, 3, 8});
    auto y = sca_forward(shallow, deep, w);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - deep.data()[i]) < 1e-8);
    CHECK_THROWS_AS(sca_forward(shallow, random_tensor<double>(rng, {3, 2, 8}), w), ShapeError);
}

TEST_CASE("sca gradients match finite differences") {
    SeqRng rng(20);
    auto w = init_sca<double>("s", 4, 4, rng);
    auto shallow = random_tensor<double>(rng, {3, 3, 4});
    auto deep = random_tensor<double>(rng, {3, 3, 4});
    auto res = gradcheck::run_check({"sca_forward", [=]() { return probe(sca_forward(shallow, deep, w)); },
                                     {shallow, deep, w.mlp1_w.value, w.mlp1_b.value, w.mlp2_w.value, w.mlp2_b.value}});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
}

TEST_CASE("se and eca skips preserve shape and differentiate") {
    SeqRng rng(21);
    auto se = init_se<double>("se", 4, 4, rng);
    auto eca = init_eca<double>("eca", rng);
    auto shallow = random_tensor<double>(rng, {2, 3, 4});
    auto deep = random_tensor<double>(rng, {2, 3, 4});
    CHECK(se_forward(shallow, deep, se).shape() == shallow.shape());
    CHECK(eca_forward(shallow, deep, eca).shape() == shallow.shape());
    auto res = gradcheck::run_check({"se_forward", [=]() { return probe(se_forward(shallow, deep, se)); },
                                     {shallow, deep, se.mlp1_w.value, se.mlp2_w.value}});
    CHECK_MESSAGE(res.pass, res.name, " max_rel=", res.max_rel);
    auto res2 = gradcheck::run_check({"eca_forward", [=]() { return probe(eca_forward(shallow, deep, eca)); },
                                      {shallow, deep, eca.conv_w.value}});
    CHECK_MESSAGE(res2.pass, res2.name, " max_rel=", res2.max_rel);
}

TEST_CASE("shape preservation across blocks for random configurations") {
    SeqRng rng(22);
    for (int it = 0; it < 20; ++it) {
        const std::size_t heads = 1 + rng.below(3);
        const std::size_t c = heads * 4 * (1 + rng.below(2));
        const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        auto bw = init_ssab<double>("b", c, heads, SsaKind::gated_context, SsaKind::gelu_gate, rng);
        auto sw = init_sca<double>("s", c, 4, rng);
        auto x = random_tensor<double>(rng, {h, w, c});
        auto deep = random_tensor<double>(rng, {h, w, c});
        CHECK(ssab_block(x, bw).shape() == x.shape());
        CHECK(sca_forward(x, deep, sw).shape() == x.shape());
    }
}
