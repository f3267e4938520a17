#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "llre/blocks.hpp"
#include "llre/ops.hpp"
#include "llre/serialize.hpp"

// U-shaped stage networks over packed raw input. The encoder downsamples by
// pixel-unshuffle, the decoder mirrors with pixel-shuffle, skip branches are
// fused by the configured gate, and every resolution level runs siamese
// attention blocks.

namespace llre {

enum class SkipMode { sca, add, se, eca };
enum class Variant { ssa1_only, ssa2_only, ssa1_ssa1, ssa2_ssa2, full };
enum class Stage { denoise, raw2rgb };

inline std::string to_string(SkipMode m) {
    switch (m) {
        case SkipMode::sca: return "sca";
        case SkipMode::add: return "add";
        case SkipMode::se: return "se";
        default: return "eca";
    }
}
inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::ssa1_only: return "ssa1_only";
        case Variant::ssa2_only: return "ssa2_only";
        case Variant::ssa1_ssa1: return "ssa1_ssa1";
        case Variant::ssa2_ssa2: return "ssa2_ssa2";
        default: return "full";
    }
}
inline std::string to_string(Stage s) { return s == Stage::denoise ? "denoise" : "raw2rgb"; }

inline SkipMode skip_mode_from(const std::string& s) {
    if (s == "sca") return SkipMode::sca;
    if (s == "add") return SkipMode::add;
    if (s == "se") return SkipMode::se;
    if (s == "eca") return SkipMode::eca;
    throw ConfigError("unknown skip mode '" + s + "'");
}
inline Variant variant_from(const std::string& s) {
    if (s == "ssa1_only") return Variant::ssa1_only;
    if (s == "ssa2_only") return Variant::ssa2_only;
    if (s == "ssa1_ssa1") return Variant::ssa1_ssa1;
    if (s == "ssa2_ssa2") return Variant::ssa2_ssa2;
    if (s == "full") return Variant::full;
    throw ConfigError("unknown variant '" + s + "'");
}
inline Stage stage_from(const std::string& s) {
    if (s == "denoise") return Stage::denoise;
    if (s == "raw2rgb") return Stage::raw2rgb;
    throw ConfigError("unknown stage '" + s + "'");
}

struct NetworkConfig {
    Stage stage = Stage::denoise;
    std::size_t scales = 4;                  // resolution levels, last one is the bottleneck
    std::size_t base_width = 16;
    std::vector<std::size_t> widths;         // per level; defaults to base_width * 2^i
    std::size_t blocks_per_scale = 1;
    std::size_t bottleneck_blocks = 2;
    std::size_t heads = 2;
    SkipMode skip_mode = SkipMode::sca;
    Variant variant = Variant::full;
    std::size_t sca_reduction = 4;

    std::vector<std::size_t> resolved_widths() const {
        if (!widths.empty()) return widths;
        std::vector<std::size_t> w(scales);
        for (std::size_t i = 0; i < scales; ++i) w[i] = base_width << i;
        return w;
    }

    void validate() const {
        if (scales < 1) throw ConfigError("scales must be >= 1");
        const auto w = resolved_widths();
        if (w.size() != scales)
            throw ConfigError("widths list has " + std::to_string(w.size()) + " entries for " +
                              std::to_string(scales) + " scales");
        for (std::size_t i = 0; i < scales; ++i) {
            if (w[i] == 0 || w[i] % heads != 0)
                throw ConfigError("width " + std::to_string(w[i]) + " not divisible by " + std::to_string(heads) +
                                  " heads");
            if (i > 0 && w[i] % 4 != 0)
                throw ConfigError("width " + std::to_string(w[i]) + " must be divisible by 4 for the decoder shuffle");
            if (skip_mode == SkipMode::sca || skip_mode == SkipMode::se)
                if (w[i] % sca_reduction != 0)
                    throw ConfigError("width " + std::to_string(w[i]) + " not divisible by gate reduction " +
                                      std::to_string(sca_reduction));
        }
        if (blocks_per_scale < 1 || bottleneck_blocks < 1) throw ConfigError("block counts must be >= 1");
    }

    std::pair<SsaKind, std::optional<SsaKind>> unit_kinds() const {
        switch (variant) {
            case Variant::ssa1_only: return {SsaKind::gated_context, std::nullopt};
            case Variant::ssa2_only: return {SsaKind::gelu_gate, std::nullopt};
            case Variant::ssa1_ssa1: return {SsaKind::gated_context, SsaKind::gated_context};
            case Variant::ssa2_ssa2: return {SsaKind::gelu_gate, SsaKind::gelu_gate};
            default: return {SsaKind::gated_context, SsaKind::gelu_gate};
        }
    }

    std::size_t in_channels() const { return 4; }
    std::size_t head_channels() const { return stage == Stage::denoise ? 4 : 12; }
    std::size_t spatial_divisor() const { return std::size_t{1} << (scales - 1); }
    std::string stage_prefix() const { return stage == Stage::denoise ? "stage1" : "stage2"; }
};

inline NetworkConfig config_from_json(const nlohmann::json& j) {
    NetworkConfig cfg;
    try {
        if (j.contains("stage")) cfg.stage = stage_from(j.at("stage").get<std::string>());
        if (j.contains("scales")) cfg.scales = j.at("scales").get<std::size_t>();
        if (j.contains("base_width")) cfg.base_width = j.at("base_width").get<std::size_t>();
        if (j.contains("widths")) cfg.widths = j.at("widths").get<std::vector<std::size_t>>();
        if (j.contains("blocks_per_scale")) cfg.blocks_per_scale = j.at("blocks_per_scale").get<std::size_t>();
        if (j.contains("bottleneck_blocks")) cfg.bottleneck_blocks = j.at("bottleneck_blocks").get<std::size_t>();
        if (j.contains("heads")) cfg.heads = j.at("heads").get<std::size_t>();
        if (j.contains("skip_mode")) cfg.skip_mode = skip_mode_from(j.at("skip_mode").get<std::string>());
        if (j.contains("variant")) cfg.variant = variant_from(j.at("variant").get<std::string>());
        if (j.contains("sca_reduction")) cfg.sca_reduction = j.at("sca_reduction").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad network config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json config_to_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["stage"] = to_string(cfg.stage);
    j["scales"] = cfg.scales;
    j["base_width"] = cfg.base_width;
    j["widths"] = cfg.resolved_widths();
    j["blocks_per_scale"] = cfg.blocks_per_scale;
    j["bottleneck_blocks"] = cfg.bottleneck_blocks;
    j["heads"] = cfg.heads;
    j["skip_mode"] = to_string(cfg.skip_mode);
    j["variant"] = to_string(cfg.variant);
    j["sca_reduction"] = cfg.sca_reduction;
    return j;
}

template <typename T>
struct SkipFusion {
    SkipMode mode = SkipMode::add;
    std::optional<ScaWeights<T>> sca;
    std::optional<SeWeights<T>> se;
    std::optional<EcaWeights<T>> eca;

    Tensor<T> apply(const Tensor<T>& shallow, const Tensor<T>& deep) const {
        switch (mode) {
            case SkipMode::sca: return sca_forward(shallow, deep, *sca);
            case SkipMode::se: return se_forward(shallow, deep, *se);
            case SkipMode::eca: return eca_forward(shallow, deep, *eca);
            default: return add(shallow, deep);
        }
    }

    void collect(std::vector<Param<T>*>& out) {
        if (sca) sca->collect(out);
        if (se) se->collect(out);
        if (eca) eca->collect(out);
    }
};

template <typename T>
class Network {
  public:
    NetworkConfig cfg;

    struct EncLevel {
        std::vector<SsabWeights<T>> blocks;
        Param<T> down_w, down_b;
    };
    struct DecLevel {
        Param<T> up_w, up_b;
        SkipFusion<T> skip;
        std::vector<SsabWeights<T>> blocks;
    };

    Param<T> stem_w, stem_b;
    std::vector<EncLevel> enc;
    std::vector<SsabWeights<T>> mid;
    std::vector<DecLevel> dec; // index i fuses the skip of encoder level i
    Param<T> head_w, head_b;

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        out.push_back(&stem_w);
        out.push_back(&stem_b);
        for (auto& level : enc) {
            for (auto& b : level.blocks) b.collect(out);
            out.push_back(&level.down_w);
            out.push_back(&level.down_b);
        }
        for (auto& b : mid) b.collect(out);
        for (auto& level : dec) {
            out.push_back(&level.up_w);
            out.push_back(&level.up_b);
            level.skip.collect(out);
            for (auto& b : level.blocks) b.collect(out);
        }
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->value.numel();
        return n;
    }

    void set_frozen(bool frozen) {
        for (auto* p : params()) p->value.set_requires_grad(!frozen);
    }

    void zero_grads() {
        for (auto* p : params()) p->value.drop_grad();
    }

    Tensor<T> forward(const Tensor<T>& input) const {
        detail::require_rank(input, 3, "network input");
        if (input.extent(2) != cfg.in_channels())
            throw ShapeError("network expects " + std::to_string(cfg.in_channels()) + " input channels, got " +
                             shape_str(input.shape()));
        const std::size_t div = cfg.spatial_divisor();
        if (input.extent(0) % div != 0 || input.extent(1) % div != 0)
            throw ShapeError("input " + shape_str(input.shape()) + " not divisible by the scale factor " +
                             std::to_string(div));

        Tensor<T> x = conv1x1(input, stem_w.value, stem_b.value);
        std::vector<Tensor<T>> skips;
        skips.reserve(enc.size());
        for (const auto& level : enc) {
            for (const auto& b : level.blocks) x = ssab_block(x, b);
            skips.push_back(x);
            x = conv1x1(pixel_unshuffle(x, 2), level.down_w.value, level.down_b.value);
        }
        for (const auto& b : mid) x = ssab_block(x, b);
        for (std::size_t i = dec.size(); i-- > 0;) {
            const auto& level = dec[i];
            x = conv1x1(pixel_shuffle(x, 2), level.up_w.value, level.up_b.value);
            x = level.skip.apply(skips[i], x);
            for (const auto& b : level.blocks) x = ssab_block(x, b);
        }
        Tensor<T> head = conv1x1(x, head_w.value, head_b.value);
        if (cfg.stage == Stage::denoise) return add(input, head); // residual correction
        return pixel_shuffle(head, 2);                            // 12 -> RGB at 2x
    }
};

template <typename T>
Network<T> build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto widths = cfg.resolved_widths();
    const std::string prefix = cfg.stage_prefix();
    const auto [first_kind, second_kind] = cfg.unit_kinds();
    SeqRng rng(mix64(seed ^ 0x11C0F1C0DEULL));

    Network<T> net;
    net.cfg = cfg;
    net.stem_w = Param<T>(prefix + ".stem.w", kaiming_uniform<T>(rng, {cfg.in_channels(), widths[0]}, cfg.in_channels()));
    net.stem_b = Param<T>(prefix + ".stem.b", Tensor<T>({widths[0]}));

    auto make_blocks = [&](const std::string& where, std::size_t count, std::size_t width) {
        std::vector<SsabWeights<T>> blocks;
        blocks.reserve(count);
        for (std::size_t b = 0; b < count; ++b)
            blocks.push_back(init_ssab<T>(prefix + "." + where + ".ssab" + std::to_string(b), width, cfg.heads,
                                          first_kind, second_kind, rng));
        return blocks;
    };

    for (std::size_t i = 0; i + 1 < cfg.scales; ++i) {
        typename Network<T>::EncLevel level;
        level.blocks = make_blocks("enc" + std::to_string(i), cfg.blocks_per_scale, widths[i]);
        level.down_w = Param<T>(prefix + ".down" + std::to_string(i) + ".w",
                                kaiming_uniform<T>(rng, {4 * widths[i], widths[i + 1]}, 4 * widths[i]));
        level.down_b = Param<T>(prefix + ".down" + std::to_string(i) + ".b", Tensor<T>({widths[i + 1]}));
        net.enc.push_back(std::move(level));
    }

    net.mid = make_blocks("mid", cfg.bottleneck_blocks, widths[cfg.scales - 1]);

    for (std::size_t i = 0; i + 1 < cfg.scales; ++i) {
        typename Network<T>::DecLevel level;
        level.up_w = Param<T>(prefix + ".up" + std::to_string(i) + ".w",
                              kaiming_uniform<T>(rng, {widths[i + 1] / 4, widths[i]}, widths[i + 1] / 4));
        level.up_b = Param<T>(prefix + ".up" + std::to_string(i) + ".b", Tensor<T>({widths[i]}));
        level.skip.mode = cfg.skip_mode;
        const std::string skip_prefix = prefix + ".skip" + std::to_string(i);
        if (cfg.skip_mode == SkipMode::sca) level.skip.sca = init_sca<T>(skip_prefix, widths[i], cfg.sca_reduction, rng);
        if (cfg.skip_mode == SkipMode::se) level.skip.se = init_se<T>(skip_prefix, widths[i], cfg.sca_reduction, rng);
        if (cfg.skip_mode == SkipMode::eca) level.skip.eca = init_eca<T>(skip_prefix, rng);
        level.blocks = make_blocks("dec" + std::to_string(i), cfg.blocks_per_scale, widths[i]);
        net.dec.push_back(std::move(level));
    }

    const std::size_t head_c = cfg.head_channels();
    if (cfg.stage == Stage::denoise) {
        // zero head: the residual stage starts as the identity
        net.head_w = Param<T>(prefix + ".head.w", Tensor<T>({widths[0], head_c}));
    } else {
        net.head_w = Param<T>(prefix + ".head.w", kaiming_uniform<T>(rng, {widths[0], head_c}, widths[0]));
    }
    net.head_b = Param<T>(prefix + ".head.b", Tensor<T>({head_c}));
    return net;
}

// ------------------------------------------------------------------- cost

struct CostReport {
    std::uint64_t macs = 0;       // spatially scaling multiply-accumulates
    std::uint64_t fixed_macs = 0; // per-image pooled-gate terms
    std::uint64_t params = 0;

    CostReport& operator+=(const CostReport& o) {
        macs += o.macs;
        fixed_macs += o.fixed_macs;
        params += o.params;
        return *this;
    }
};

inline std::uint64_t ssab_param_count(std::uint64_t c, std::size_t heads, SsaKind kind) {
    std::uint64_t p = 0;
    p += c * 2 * c + 2 * c;     // expansion conv + bias
    p += 9 * 2 * c + 2 * c;     // depth-wise kernel + bias
    if (kind == SsaKind::gated_context) p += (c / heads) * heads + 2 * c * c; // gate + the two fusions
    return p;
}

// analytic totals for one stage on a packed [H,W] input
inline CostReport count_cost(const NetworkConfig& cfg, std::size_t packed_h, std::size_t packed_w) {
    cfg.validate();
    const std::size_t div = cfg.spatial_divisor();
    if (packed_h % div != 0 || packed_w % div != 0)
        throw ConfigError("input " + std::to_string(packed_h) + "x" + std::to_string(packed_w) +
                          " not divisible by the scale factor " + std::to_string(div));
    const auto widths = cfg.resolved_widths();
    const auto [first_kind, second_kind] = cfg.unit_kinds();

    auto block_macs = [&, fk = first_kind, sk = second_kind](std::uint64_t n, std::uint64_t c) {
        return ssab_macs(n, c, fk, sk);
    };
    auto block_params = [&, fk = first_kind, sk = second_kind](std::uint64_t c) {
        std::uint64_t p = 2 * c + ssab_param_count(c, cfg.heads, fk); // norm + first unit
        if (sk) p += ssab_param_count(c, cfg.heads, *sk);
        return p;
    };

    CostReport total;
    const std::uint64_t n0 = static_cast<std::uint64_t>(packed_h) * packed_w;

    total.macs += n0 * cfg.in_channels() * widths[0]; // stem
    total.params += cfg.in_channels() * widths[0] + widths[0];

    for (std::size_t i = 0; i + 1 < cfg.scales; ++i) {
        const std::uint64_t n = n0 >> (2 * i);
        total.macs += cfg.blocks_per_scale * block_macs(n, widths[i]);
        total.params += cfg.blocks_per_scale * block_params(widths[i]);
        total.macs += (n / 4) * (4 * widths[i]) * widths[i + 1]; // down conv after unshuffle
        total.params += 4 * widths[i] * widths[i + 1] + widths[i + 1];
    }

    const std::uint64_t n_mid = n0 >> (2 * (cfg.scales - 1));
    total.macs += cfg.bottleneck_blocks * block_macs(n_mid, widths[cfg.scales - 1]);
    total.params += cfg.bottleneck_blocks * block_params(widths[cfg.scales - 1]);

    for (std::size_t i = 0; i + 1 < cfg.scales; ++i) {
        const std::uint64_t n = n0 >> (2 * i);
        total.macs += n * (widths[i + 1] / 4) * widths[i]; // up conv after shuffle
        total.params += (widths[i + 1] / 4) * widths[i] + widths[i];
        switch (cfg.skip_mode) {
            case SkipMode::sca: {
                const SkipCost c = sca_macs(n, widths[i], cfg.sca_reduction);
                total.macs += c.spatial;
                total.fixed_macs += c.fixed;
                total.params += 2 * widths[i] * (widths[i] / cfg.sca_reduction) +
                                (widths[i] / cfg.sca_reduction) * widths[i] + widths[i] / cfg.sca_reduction + widths[i];
                break;
            }
            case SkipMode::se: {
                const SkipCost c = se_macs(n, widths[i], cfg.sca_reduction);
                total.macs += c.spatial;
                total.fixed_macs += c.fixed;
                total.params += widths[i] * (widths[i] / cfg.sca_reduction) +
                                (widths[i] / cfg.sca_reduction) * widths[i] + widths[i] / cfg.sca_reduction + widths[i];
                break;
            }
            case SkipMode::eca: {
                const SkipCost c = eca_macs(n, widths[i]);
                total.macs += c.spatial;
                total.fixed_macs += c.fixed;
                total.params += 3;
                break;
            }
            case SkipMode::add: break;
        }
        total.macs += cfg.blocks_per_scale * block_macs(n, widths[i]);
        total.params += cfg.blocks_per_scale * block_params(widths[i]);
    }

    total.macs += n0 * widths[0] * cfg.head_channels(); // head conv
    total.params += widths[0] * cfg.head_channels() + cfg.head_channels();
    return total;
}

// --------------------------------------------------------------- two stages

template <typename T>
struct Cascade {
    Network<T> stage1; // denoise
    Network<T> stage2; // raw2rgb

    void validate() const {
        if (stage1.cfg.stage != Stage::denoise || stage2.cfg.stage != Stage::raw2rgb)
            throw ConfigError("cascade expects a denoise stage followed by a raw2rgb stage");
    }

    Tensor<T> forward(const Tensor<T>& x) const { return stage2.forward(stage1.forward(x)); }

    std::vector<Param<T>*> params() {
        auto out = stage1.params();
        for (auto* p : stage2.params()) out.push_back(p);
        return out;
    }
};

inline CostReport cascade_cost(const NetworkConfig& s1, const NetworkConfig& s2, std::size_t h, std::size_t w) {
    CostReport total = count_cost(s1, h, w);
    total += count_cost(s2, h, w);
    return total;
}

// ------------------------------------------------------------ tiled forward

template <typename T>
Tensor<T> crop_tile(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
    const std::size_t w = x.extent(1), c = x.extent(2);
    Tensor<T> out({height, width, c});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xw = 0; xw < width; ++xw)
            for (std::size_t j = 0; j < c; ++j)
                out.data()[(y * width + xw) * c + j] = x.data()[((y0 + y) * w + (x0 + xw)) * c + j];
    return out;
}

// Processes overlapping tiles and keeps each tile's center crop. The overlap
// and tile edge must respect the network's scale divisor; output channels and
// the spatial factor are taken from a probe of the stage head.
template <typename T, typename Fwd>
Tensor<T> tiled_apply(const Tensor<T>& input, std::size_t tile, std::size_t overlap, std::size_t out_factor,
                      std::size_t out_channels, Fwd&& fwd) {
    detail::require_rank(input, 3, "tiled_apply");
    const std::size_t h = input.extent(0), w = input.extent(1);
    if (tile == 0 || tile > h || tile > w) throw ConfigError("tile size " + std::to_string(tile) + " out of range");
    Tensor<T> out({h * out_factor, w * out_factor, out_channels});
    for (std::size_t y0 = 0; y0 < h; y0 += tile) {
        const std::size_t y1 = std::min(y0 + tile, h);
        for (std::size_t x0 = 0; x0 < w; x0 += tile) {
            const std::size_t x1 = std::min(x0 + tile, w);
            const std::size_t cy0 = y0 >= overlap ? y0 - overlap : 0;
            const std::size_t cx0 = x0 >= overlap ? x0 - overlap : 0;
            const std::size_t cy1 = std::min(y1 + overlap, h);
            const std::size_t cx1 = std::min(x1 + overlap, w);
            Tensor<T> window = crop_tile(input, cy0, cx0, cy1 - cy0, cx1 - cx0);
            Tensor<T> res = fwd(window);
            // copy the center region into place
            const std::size_t oy = (y0 - cy0) * out_factor, ox = (x0 - cx0) * out_factor;
            const std::size_t rows = (y1 - y0) * out_factor, cols = (x1 - x0) * out_factor;
            const std::size_t rw = res.extent(1);
            for (std::size_t y = 0; y < rows; ++y)
                for (std::size_t x = 0; x < cols; ++x)
                    for (std::size_t c = 0; c < out_channels; ++c)
                        out.data()[(((y0 * out_factor) + y) * w * out_factor + (x0 * out_factor) + x) * out_channels + c] =
                            res.data()[((oy + y) * rw + (ox + x)) * out_channels + c];
        }
    }
    return out;
}

template <typename T>
Tensor<T> tiled_forward(const Network<T>& net, const Tensor<T>& input, std::size_t tile, std::size_t overlap = 16) {
    const std::size_t div = net.cfg.spatial_divisor();
    if (tile % div != 0 || overlap % div != 0)
        throw ConfigError("tile and overlap must be multiples of the scale factor " + std::to_string(div));
    if (input.extent(0) % div != 0 || input.extent(1) % div != 0)
        throw ShapeError("input " + shape_str(input.shape()) + " not divisible by the scale factor");
    const std::size_t factor = net.cfg.stage == Stage::denoise ? 1 : 2;
    const std::size_t out_c = net.cfg.stage == Stage::denoise ? 4 : 3;
    return tiled_apply(input, tile, overlap, factor, out_c, [&](const Tensor<T>& w) { return net.forward(w); });
}

template <typename T>
Tensor<T> tiled_forward(const Cascade<T>& cascade, const Tensor<T>& input, std::size_t tile, std::size_t overlap = 16) {
    const std::size_t div = std::max(cascade.stage1.cfg.spatial_divisor(), cascade.stage2.cfg.spatial_divisor());
    if (tile % div != 0 || overlap % div != 0)
        throw ConfigError("tile and overlap must be multiples of the scale factor " + std::to_string(div));
    return tiled_apply(input, tile, overlap, 2, 3, [&](const Tensor<T>& w) { return cascade.forward(w); });
}

} // namespace llre
