#include "llre/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace llre {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// route libpng errors into the jmpbuf without writing to stderr
void quiet_error(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }
void quiet_warning(png_structp, png_const_charp) {}

} // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    if (img.height == 0 || img.width == 0) throw IoError("write_png: empty image");
    if (img.pixels.size() != img.height * img.width * img.channels)
        throw IoError("write_png: pixel buffer does not match dimensions");

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    // row pointers and the packed byte buffer live outside the setjmp region
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows(img.height);
    const std::size_t samples_per_row = img.width * img.channels;
    if (img.bit_depth == 8) {
        bytes.resize(img.height * samples_per_row);
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(img.pixels[i]);
        for (std::size_t y = 0; y < img.height; ++y) rows[y] = bytes.data() + y * samples_per_row;
    } else {
        bytes.resize(img.height * samples_per_row * 2);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) { // big-endian per the format
            bytes[2 * i] = static_cast<std::uint8_t>(img.pixels[i] >> 8);
            bytes[2 * i + 1] = static_cast<std::uint8_t>(img.pixels[i] & 0xFF);
        }
        for (std::size_t y = 0; y < img.height; ++y) rows[y] = bytes.data() + y * samples_per_row * 2;
    }

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 static_cast<int>(img.bit_depth), img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    ImageBuffer img;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed png: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3)
        longjmp(png_jmpbuf(png), 1);

    img.height = h;
    img.width = w;
    img.channels = static_cast<std::size_t>(channels);
    img.bit_depth = static_cast<unsigned>(depth);

    const std::size_t rowbytes = png_get_rowbytes(png, info);
    bytes.resize(rowbytes * h);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = img.height * img.width * img.channels;
    img.pixels.resize(n);
    if (depth == 8) {
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = bytes[i];
    } else {
        for (std::size_t i = 0; i < n; ++i)
            img.pixels[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    }
    return img;
}

} // namespace llre
