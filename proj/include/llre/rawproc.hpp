#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "llre/error.hpp"
#include "llre/noise.hpp"
#include "llre/ops.hpp"
#include "llre/rng.hpp"
#include "llre/tensor.hpp"

// Bayer raw preprocessing: black-level subtraction, ratio amplification,
// 2x2 packing into (R, G1, G2, B), training crops/flips, and the raw
// container (16-bit little-endian values plus a JSON sidecar).

namespace llre {

template <typename T>
struct RawFrame {
    Tensor<T> bayer; // [H,W], DN values stored as reals
    double black_level = 512.0;
    double white_level = 16383.0;
    std::string cfa = "RGGB";
    int iso = 100;
    double exposure_s = 0.1;

    void validate() const {
        if (bayer.rank() != 2) throw ShapeError("raw frame must be [H,W], got " + shape_str(bayer.shape()));
        if (bayer.extent(0) % 2 != 0 || bayer.extent(1) % 2 != 0)
            throw ShapeError("raw frame extents must be even, got " + shape_str(bayer.shape()));
        if (!(black_level < white_level)) throw InputError("black level must be below white level");
        if (cfa != "RGGB") throw InputError("unsupported CFA pattern '" + cfa + "', only RGGB is handled");
        for (std::size_t i = 0; i < bayer.numel(); ++i) {
            const double v = static_cast<double>(bayer.data()[i]);
            if (v < 0.0 || v > white_level)
                throw InputError("raw pixel " + std::to_string(i) + " outside [0, white_level]");
        }
    }
};

template <typename T>
struct PackedRaw {
    Tensor<T> data; // [H/2, W/2, 4] in (R, G1, G2, B) order
    bool normalized = false;
};

// 2x2 packing is pixel_unshuffle of the single-channel mosaic; for RGGB the
// row-major subpixel order lands exactly on (R, G1, G2, B)
template <typename T>
Tensor<T> pack_bayer(const Tensor<T>& bayer) {
    if (bayer.rank() != 2) throw ShapeError("pack_bayer: expected [H,W], got " + shape_str(bayer.shape()));
    const std::size_t h = bayer.extent(0), w = bayer.extent(1);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("pack_bayer: extents must be even");
    return pixel_unshuffle(bayer.reshaped({h, w, 1}), 2);
}

template <typename T>
Tensor<T> unpack_bayer(const Tensor<T>& packed) {
    if (packed.rank() != 3 || packed.extent(2) != 4)
        throw ShapeError("unpack_bayer: expected [H,W,4], got " + shape_str(packed.shape()));
    Tensor<T> full = pixel_shuffle(packed, 2);
    return full.reshaped({full.extent(0), full.extent(1)});
}

// normalize against black/white levels, amplify, clamp to [0,1], pack
template <typename T>
PackedRaw<T> preprocess(const RawFrame<T>& frame, const ExposureSetting& exposure) {
    frame.validate();
    exposure.validate();
    const double scale = frame.white_level - frame.black_level;
    Tensor<T> norm(frame.bayer.shape());
    for (std::size_t i = 0; i < norm.numel(); ++i) {
        double v = (static_cast<double>(frame.bayer.data()[i]) - frame.black_level) / scale;
        v = std::max(v, 0.0) * exposure.ratio;
        norm.data()[i] = static_cast<T>(std::min(v, 1.0));
    }
    PackedRaw<T> out;
    out.data = pack_bayer(norm);
    out.normalized = true;
    return out;
}

template <typename T>
Tensor<T> flip_tensor(const Tensor<T>& x, bool horizontal, bool vertical) {
    detail::require_rank(x, 3, "flip_tensor");
    if (!horizontal && !vertical) return x.clone();
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensor<T> out(x.shape());
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = vertical ? h - 1 - y : y;
        for (std::size_t xw = 0; xw < w; ++xw) {
            const std::size_t sx = horizontal ? w - 1 - xw : xw;
            const T* src = x.data() + (sy * w + sx) * c;
            T* dst = out.data() + (y * w + xw) * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
        }
    }
    return out;
}

template <typename T>
Tensor<T> crop_tensor(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
    detail::require_rank(x, 3, "crop_tensor");
    if (y0 + height > x.extent(0) || x0 + width > x.extent(1))
        throw ConfigError("crop window exceeds " + shape_str(x.shape()));
    const std::size_t w = x.extent(1), c = x.extent(2);
    Tensor<T> out({height, width, c});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xw = 0; xw < width; ++xw) {
            const T* src = x.data() + ((y0 + y) * w + (x0 + xw)) * c;
            T* dst = out.data() + (y * width + xw) * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
        }
    return out;
}

template <typename T>
struct PatchPair {
    Tensor<T> input;  // [size, size, Cin]
    Tensor<T> target; // [size*factor, size*factor, Ct]
    std::size_t y0 = 0, x0 = 0;
    bool flip_h = false, flip_v = false;
};

// Aligned crop plus identical flips. The target may live at an integer
// multiple of the input resolution (2x for packed-raw -> RGB pairs); the crop
// window scales by that factor.
template <typename T>
PatchPair<T> random_patch(const Tensor<T>& input, const Tensor<T>& target, std::size_t size, std::uint64_t seed) {
    detail::require_rank(input, 3, "random_patch input");
    detail::require_rank(target, 3, "random_patch target");
    const std::size_t h = input.extent(0), w = input.extent(1);
    if (size % 2 != 0) throw ConfigError("patch size must be even, got " + std::to_string(size));
    if (size > h || size > w)
        throw ConfigError("patch " + std::to_string(size) + " exceeds input " + shape_str(input.shape()));
    if (target.extent(0) % h != 0 || target.extent(1) % w != 0 ||
        target.extent(0) / h != target.extent(1) / w)
        throw ShapeError("target " + shape_str(target.shape()) + " is not an integer-factor match of input " +
                         shape_str(input.shape()));
    const std::size_t factor = target.extent(0) / h;

    SeqRng rng(seed);
    PatchPair<T> out;
    out.y0 = rng.below(h - size + 1);
    out.x0 = rng.below(w - size + 1);
    out.flip_h = rng.coin();
    out.flip_v = rng.coin();
    out.input = flip_tensor(crop_tensor(input, out.y0, out.x0, size, size), out.flip_h, out.flip_v);
    out.target = flip_tensor(crop_tensor(target, out.y0 * factor, out.x0 * factor, size * factor, size * factor),
                             out.flip_h, out.flip_v);
    return out;
}

// ------------------------------------------------------------- raw container

inline std::string sidecar_path(const std::string& raw_path) {
    const std::size_t slash = raw_path.find_last_of('/');
    const std::size_t dot = raw_path.find_last_of('.');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return raw_path + ".json";
    return raw_path.substr(0, dot) + ".json";
}

template <typename T>
void write_raw(const std::string& path, const RawFrame<T>& frame) {
    frame.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < frame.bayer.numel(); ++i) {
        const double v = static_cast<double>(frame.bayer.data()[i]);
        const std::uint16_t dn = static_cast<std::uint16_t>(std::clamp(v + 0.5, 0.0, 65535.0));
        const std::uint8_t lo = static_cast<std::uint8_t>(dn & 0xFF), hi = static_cast<std::uint8_t>(dn >> 8);
        os.put(static_cast<char>(lo));
        os.put(static_cast<char>(hi));
    }
    if (!os) throw IoError("short write to " + path);

    nlohmann::json meta;
    meta["height"] = frame.bayer.extent(0);
    meta["width"] = frame.bayer.extent(1);
    meta["black_level"] = frame.black_level;
    meta["white_level"] = frame.white_level;
    meta["cfa"] = frame.cfa;
    meta["iso"] = frame.iso;
    meta["exposure_s"] = frame.exposure_s;
    std::ofstream js(sidecar_path(path));
    if (!js) throw IoError("cannot open sidecar for " + path);
    js << meta.dump(2) << "\n";
}

template <typename T>
RawFrame<T> read_raw(const std::string& path) {
    std::ifstream js(sidecar_path(path));
    if (!js) throw IoError("missing sidecar " + sidecar_path(path));
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed sidecar " + sidecar_path(path) + ": " + e.what());
    }

    RawFrame<T> frame;
    try {
        const std::size_t h = meta.at("height").get<std::size_t>();
        const std::size_t w = meta.at("width").get<std::size_t>();
        frame.bayer = Tensor<T>({h, w});
        frame.black_level = meta.at("black_level").get<double>();
        frame.white_level = meta.at("white_level").get<double>();
        frame.cfa = meta.at("cfa").get<std::string>();
        frame.iso = meta.at("iso").get<int>();
        frame.exposure_s = meta.at("exposure_s").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("sidecar " + sidecar_path(path) + " is missing fields: " + e.what());
    }

    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::vector<char> bytes(frame.bayer.numel() * 2);
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("raw file " + path + " shorter than sidecar dimensions");
    for (std::size_t i = 0; i < frame.bayer.numel(); ++i) {
        const std::uint16_t lo = static_cast<std::uint8_t>(bytes[2 * i]);
        const std::uint16_t hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
        frame.bayer.data()[i] = static_cast<T>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
    frame.validate();
    return frame;
}

} // namespace llre
