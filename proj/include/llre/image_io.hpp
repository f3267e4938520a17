#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "llre/error.hpp"
#include "llre/tensor.hpp"

// PNG input/output, 8- and 16-bit, grayscale and RGB. Values cross the API
// as [0,1] reals; integer codes round-trip exactly at matching bit depth.

namespace llre {

struct ImageBuffer {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;             // 1 or 3
    unsigned bit_depth = 16;              // 8 or 16
    std::vector<std::uint16_t> pixels;    // interleaved, native values
};

void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);

// [H,W] or [H,W,{1,3}] tensor of [0,1] values -> PNG; returns the number of
// pixels that had to be clamped into [0,1]
template <typename T>
std::size_t write_image(const std::string& path, const Tensor<T>& image, unsigned bit_depth = 16) {
    if (bit_depth != 8 && bit_depth != 16) throw IoError("bit depth must be 8 or 16");
    if (image.rank() != 2 && image.rank() != 3)
        throw ShapeError("write_image: expected [H,W] or [H,W,C], got " + shape_str(image.shape()));
    ImageBuffer buf;
    buf.height = image.extent(0);
    buf.width = image.extent(1);
    buf.channels = image.rank() == 3 ? image.extent(2) : 1;
    if (buf.channels != 1 && buf.channels != 3)
        throw ShapeError("write_image: channel count must be 1 or 3, got " + std::to_string(buf.channels));
    buf.bit_depth = bit_depth;
    const double peak = bit_depth == 8 ? 255.0 : 65535.0;
    buf.pixels.resize(buf.height * buf.width * buf.channels);
    std::size_t clamped = 0;
    const T* p = image.data();
    for (std::size_t i = 0; i < buf.pixels.size(); ++i) {
        double v = static_cast<double>(p[i]);
        if (v < 0.0 || v > 1.0) {
            ++clamped;
            v = v < 0.0 ? 0.0 : 1.0;
        }
        buf.pixels[i] = static_cast<std::uint16_t>(v * peak + 0.5);
    }
    write_png(path, buf);
    return clamped;
}

template <typename T>
Tensor<T> read_image(const std::string& path) {
    const ImageBuffer buf = read_png(path);
    const double peak = buf.bit_depth == 8 ? 255.0 : 65535.0;
    Tensor<T> out = buf.channels == 1 ? Tensor<T>({buf.height, buf.width})
                                      : Tensor<T>({buf.height, buf.width, buf.channels});
    for (std::size_t i = 0; i < buf.pixels.size(); ++i)
        out.data()[i] = static_cast<T>(static_cast<double>(buf.pixels[i]) / peak);
    return out;
}

} // namespace llre
