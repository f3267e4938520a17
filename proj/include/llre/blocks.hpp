#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llre/ops.hpp"
#include "llre/rng.hpp"
#include "llre/tensor.hpp"

// Siamese self-attention block and skip fusion gates. These operate on an
// already layer-normalized [H,W,C] map; the enclosing network applies the
// entry normalization using the weights carried here.

namespace llre {

// paired feature halves after the expansion convs, reshaped to heads
template <typename T>
struct SiameseSplit {
    Tensor<T> q; // [N, h, C/h]
    Tensor<T> p; // [N, h, C/h]
    std::size_t positions = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
};

template <typename T>
struct SaliencyGate {
    Param<T> w;      // [h, C/h]
    T dim_scale{1};  // D; logits are scaled by 1/sqrt(D)
};

enum class SsaKind {
    gated_context, // saliency gate + global context + linear fusion
    gelu_gate,     // gelu(Q) * P
};

// one attention unit: expansion convs plus the kind-specific fusion weights
template <typename T>
struct SsaUnit {
    SsaKind kind = SsaKind::gated_context;
    Param<T> expand_w, expand_b; // conv1x1 C -> 2C
    Param<T> dw_k, dw_b;         // dwconv3x3 over 2C
    SaliencyGate<T> gate;        // gated_context only
    Param<T> l1, l2;             // gated_context only, [C,C]

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&expand_w);
        out.push_back(&expand_b);
        out.push_back(&dw_k);
        out.push_back(&dw_b);
        if (kind == SsaKind::gated_context) {
            out.push_back(&gate.w);
            out.push_back(&l1);
            out.push_back(&l2);
        }
    }
};

template <typename T>
struct SsabWeights {
    std::size_t channels = 0;
    std::size_t heads = 0;
    Param<T> norm_gain, norm_offset;
    SsaUnit<T> first;
    std::optional<SsaUnit<T>> second;

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&norm_gain);
        out.push_back(&norm_offset);
        first.collect(out);
        if (second) second->collect(out);
    }
};

// decoder-guided channel gate on the skip branch
template <typename T>
struct ScaWeights {
    std::size_t reduction = 4;
    Param<T> mlp1_w, mlp1_b; // [2C, C/r]
    Param<T> mlp2_w, mlp2_b; // [C/r, C]

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&mlp1_w);
        out.push_back(&mlp1_b);
        out.push_back(&mlp2_w);
        out.push_back(&mlp2_b);
    }
};

// encoder-only pooled gates, kept minimal as ablation baselines
template <typename T>
struct SeWeights {
    std::size_t reduction = 4;
    Param<T> mlp1_w, mlp1_b; // [C, C/r]
    Param<T> mlp2_w, mlp2_b; // [C/r, C]

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&mlp1_w);
        out.push_back(&mlp1_b);
        out.push_back(&mlp2_w);
        out.push_back(&mlp2_b);
    }
};

template <typename T>
struct EcaWeights {
    Param<T> conv_w; // [k] across channels

    void collect(std::vector<Param<T>*>& out) { out.push_back(&conv_w); }
};

// ------------------------------------------------------------------ init

// fan-in uniform at the torch default slope (limit 1/sqrt(fan_in)); keeps
// the gelu-gated products and pooled-gate MLPs inside their active range
template <typename T>
Tensor<T> kaiming_uniform(SeqRng& rng, Shape shape, std::size_t fan_in) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <typename T>
SsaUnit<T> init_ssa_unit(const std::string& prefix, SsaKind kind, std::size_t c, std::size_t heads, SeqRng& rng) {
    if (heads == 0 || c % heads != 0)
        throw ConfigError("head count " + std::to_string(heads) + " does not divide " + std::to_string(c) + " channels");
    const std::size_t d = c / heads;
    SsaUnit<T> u;
    u.kind = kind;
    u.expand_w = Param<T>(prefix + ".expand.w", kaiming_uniform<T>(rng, {c, 2 * c}, c));
    u.expand_b = Param<T>(prefix + ".expand.b", Tensor<T>({2 * c}));
    u.dw_k = Param<T>(prefix + ".dw.k", kaiming_uniform<T>(rng, {3, 3, 2 * c}, 9));
    u.dw_b = Param<T>(prefix + ".dw.b", Tensor<T>({2 * c}));
    if (kind == SsaKind::gated_context) {
        u.gate.w = Param<T>(prefix + ".gate.W", kaiming_uniform<T>(rng, {heads, d}, d));
        u.gate.dim_scale = static_cast<T>(d);
        u.l1 = Param<T>(prefix + ".l1", kaiming_uniform<T>(rng, {c, c}, c));
        u.l2 = Param<T>(prefix + ".l2", kaiming_uniform<T>(rng, {c, c}, c));
    }
    return u;
}

template <typename T>
SsabWeights<T> init_ssab(const std::string& prefix, std::size_t c, std::size_t heads, SsaKind first,
                         std::optional<SsaKind> second, SeqRng& rng) {
    SsabWeights<T> w;
    w.channels = c;
    w.heads = heads;
    w.norm_gain = Param<T>(prefix + ".norm.gain", Tensor<T>({c}, T(1)));
    w.norm_offset = Param<T>(prefix + ".norm.offset", Tensor<T>({c}));
    w.first = init_ssa_unit<T>(prefix, first, c, heads, rng);
    if (second) w.second = init_ssa_unit<T>(prefix + ".p2", *second, c, heads, rng);
    return w;
}

template <typename T>
ScaWeights<T> init_sca(const std::string& prefix, std::size_t c, std::size_t reduction, SeqRng& rng) {
    if (reduction == 0 || c % reduction != 0)
        throw ConfigError("sca reduction " + std::to_string(reduction) + " does not divide " + std::to_string(c));
    const std::size_t mid = c / reduction;
    ScaWeights<T> w;
    w.reduction = reduction;
    w.mlp1_w = Param<T>(prefix + ".mlp1.w", kaiming_uniform<T>(rng, {2 * c, mid}, 2 * c));
    w.mlp1_b = Param<T>(prefix + ".mlp1.b", Tensor<T>({mid}));
    w.mlp2_w = Param<T>(prefix + ".mlp2.w", kaiming_uniform<T>(rng, {mid, c}, mid));
    w.mlp2_b = Param<T>(prefix + ".mlp2.b", Tensor<T>({c}));
    return w;
}

template <typename T>
SeWeights<T> init_se(const std::string& prefix, std::size_t c, std::size_t reduction, SeqRng& rng) {
    if (reduction == 0 || c % reduction != 0)
        throw ConfigError("se reduction " + std::to_string(reduction) + " does not divide " + std::to_string(c));
    const std::size_t mid = c / reduction;
    SeWeights<T> w;
    w.reduction = reduction;
    w.mlp1_w = Param<T>(prefix + ".mlp1.w", kaiming_uniform<T>(rng, {c, mid}, c));
    w.mlp1_b = Param<T>(prefix + ".mlp1.b", Tensor<T>({mid}));
    w.mlp2_w = Param<T>(prefix + ".mlp2.w", kaiming_uniform<T>(rng, {mid, c}, mid));
    w.mlp2_b = Param<T>(prefix + ".mlp2.b", Tensor<T>({c}));
    return w;
}

template <typename T>
EcaWeights<T> init_eca(const std::string& prefix, SeqRng& rng) {
    EcaWeights<T> w;
    w.conv_w = Param<T>(prefix + ".conv.w", kaiming_uniform<T>(rng, {3}, 3));
    return w;
}

// -------------------------------------------------------------- operations

// expansion convs then channel-wise halving into the (Q, P) pair
template <typename T>
SiameseSplit<T> siamese_split(const Tensor<T>& x, const SsaUnit<T>& unit, std::size_t heads) {
    detail::require_rank(x, 3, "siamese_split");
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (heads == 0 || c % heads != 0)
        throw ConfigError("head count " + std::to_string(heads) + " does not divide " + std::to_string(c) + " channels");
    Tensor<T> e = conv1x1(x, unit.expand_w.value, unit.expand_b.value);
    e = dwconv3x3(e, unit.dw_k.value, unit.dw_b.value);
    SiameseSplit<T> s;
    s.positions = h * w;
    s.heads = heads;
    s.head_dim = c / heads;
    s.q = slice_last(e, 0, c).reshaped({s.positions, heads, s.head_dim});
    s.p = slice_last(e, c, 2 * c).reshaped({s.positions, heads, s.head_dim});
    return s;
}

// softmax over positions of the saliency-gate logits: A[n,head]
template <typename T>
Tensor<T> attention_map(const Tensor<T>& q, const SaliencyGate<T>& gate) {
    const T scale = T(1) / std::sqrt(gate.dim_scale);
    return softmax_over_positions(head_project(q, gate.w.value, scale));
}

// attention-weighted accumulation of Q; one context vector per head
template <typename T>
Tensor<T> global_context(const Tensor<T>& a, const Tensor<T>& q) {
    return weighted_context(a, q);
}

// first unit: context broadcast into P, linear fusion, local residual
template <typename T>
Tensor<T> ssa1(const Tensor<T>& x, const SsaUnit<T>& unit, std::size_t heads) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    SiameseSplit<T> s = siamese_split(x, unit, heads);
    Tensor<T> a = attention_map(s.q, unit.gate);
    Tensor<T> g = global_context(a, s.q);
    Tensor<T> m = broadcast_mul_heads(g, s.p);
    const std::size_t n = s.positions;
    Tensor<T> fused = linear(add(linear(m.reshaped({n, c}), unit.l1.value), s.q.reshaped({n, c})), unit.l2.value);
    return add(x.reshaped({n, c}), fused).reshaped({h, w, c});
}

// second unit: gelu-gated product of the halves, local residual
template <typename T>
Tensor<T> ssa2(const Tensor<T>& x, const SsaUnit<T>& unit, std::size_t heads) {
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    SiameseSplit<T> s = siamese_split(x, unit, heads);
    const std::size_t n = s.positions;
    Tensor<T> gated = mul(gelu(s.q.reshaped({n, c})), s.p.reshaped({n, c}));
    return add(x.reshaped({n, c}), gated).reshaped({h, w, c});
}

template <typename T>
Tensor<T> apply_ssa_unit(const Tensor<T>& x, const SsaUnit<T>& unit, std::size_t heads) {
    return unit.kind == SsaKind::gated_context ? ssa1(x, unit, heads) : ssa2(x, unit, heads);
}

// block body on a normalized input: first(X) + second(first(X)), or just
// first(X) when the block carries a single unit
template <typename T>
Tensor<T> ssab(const Tensor<T>& x, const SsabWeights<T>& w) {
    Tensor<T> a = apply_ssa_unit(x, w.first, w.heads);
    if (!w.second) return a;
    return add(a, apply_ssa_unit(a, *w.second, w.heads));
}

// entry normalization followed by the block body
template <typename T>
Tensor<T> ssab_block(const Tensor<T>& x, const SsabWeights<T>& w) {
    return ssab(layer_norm(x, w.norm_gain.value, w.norm_offset.value), w);
}

// skip fusion: shallow scaled by a gate driven by pooled shallow+deep stats
template <typename T>
Tensor<T> sca_forward(const Tensor<T>& shallow, const Tensor<T>& deep, const ScaWeights<T>& w) {
    detail::require_same_shape(shallow, deep, "sca_forward");
    Tensor<T> merged = concat_last(spatial_mean(shallow), spatial_mean(deep));
    Tensor<T> mid = gelu(linear(merged, w.mlp1_w.value, w.mlp1_b.value));
    Tensor<T> a = sigmoid(linear(mid, w.mlp2_w.value, w.mlp2_b.value));
    return add(scale_channels(shallow, a), deep);
}

template <typename T>
Tensor<T> se_forward(const Tensor<T>& shallow, const Tensor<T>& deep, const SeWeights<T>& w) {
    detail::require_same_shape(shallow, deep, "se_forward");
    Tensor<T> mid = gelu(linear(spatial_mean(shallow), w.mlp1_w.value, w.mlp1_b.value));
    Tensor<T> a = sigmoid(linear(mid, w.mlp2_w.value, w.mlp2_b.value));
    return add(scale_channels(shallow, a), deep);
}

template <typename T>
Tensor<T> eca_forward(const Tensor<T>& shallow, const Tensor<T>& deep, const EcaWeights<T>& w) {
    detail::require_same_shape(shallow, deep, "eca_forward");
    Tensor<T> a = sigmoid(conv1d_channels(spatial_mean(shallow), w.conv_w.value));
    return add(scale_channels(shallow, a), deep);
}

// ------------------------------------------------------------ analytic cost
//
// Multiply-accumulate counts. Convention: multiplies of the dataflow count
// (conv/linear kernels, gates, per-element products, norm scaling);
// transcendentals, compares and pure additions do not. Every term below is
// proportional to the position count N.

inline std::uint64_t ssa_unit_macs(std::uint64_t n, std::uint64_t c, SsaKind kind) {
    std::uint64_t macs = 0;
    macs += n * c * 2 * c;  // expansion conv1x1 C -> 2C
    macs += n * 2 * c * 9;  // depth-wise 3x3 over 2C
    if (kind == SsaKind::gated_context) {
        macs += n * c;         // gate logits
        macs += n * c;         // weighted accumulation of Q
        macs += n * c;         // context broadcast into P
        macs += 2 * n * c * c; // the two linear fusions
    } else {
        macs += n * c;         // gelu-gated product
    }
    return macs;
}

inline std::uint64_t layer_norm_macs(std::uint64_t n, std::uint64_t c) {
    return 3 * n * c; // squared deviations, normalization, gain
}

inline std::uint64_t ssab_macs(std::uint64_t n, std::uint64_t c, SsaKind first, std::optional<SsaKind> second) {
    std::uint64_t macs = layer_norm_macs(n, c) + ssa_unit_macs(n, c, first);
    if (second) macs += ssa_unit_macs(n, c, *second);
    return macs;
}

// skip gates: the per-pixel part scales with N, the pooled MLP does not
struct SkipCost {
    std::uint64_t spatial = 0;
    std::uint64_t fixed = 0;
};

inline SkipCost sca_macs(std::uint64_t n, std::uint64_t c, std::uint64_t reduction) {
    SkipCost cost;
    cost.spatial = n * c;                                          // channel gate application
    cost.fixed = 2 * c * (c / reduction) + (c / reduction) * c;    // pooled-vector MLP
    return cost;
}

inline SkipCost se_macs(std::uint64_t n, std::uint64_t c, std::uint64_t reduction) {
    SkipCost cost;
    cost.spatial = n * c;
    cost.fixed = c * (c / reduction) + (c / reduction) * c;
    return cost;
}

inline SkipCost eca_macs(std::uint64_t n, std::uint64_t c) {
    SkipCost cost;
    cost.spatial = n * c;
    cost.fixed = 3 * c;
    return cost;
}

} // namespace llre
