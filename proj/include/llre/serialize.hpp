#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "llre/error.hpp"
#include "llre/tensor.hpp"

// SLT1 tensor container: magic "SLT1", u32 rank, rank x u64 extents,
// u8 dtype (0 = f32, 1 = f64), then raw little-endian payload. Checkpoints
// are flat archives of named SLT1 blobs ("SLTA", u32 count, entries of
// u32 name length + name + blob).

namespace llre {

namespace detail_io {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    put_bytes(os, b, sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
    unsigned char b[sizeof(U)];
    is.read(reinterpret_cast<char*>(b), sizeof(U));
    if (!is) throw IoError("unexpected end of stream");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

} // namespace detail_io

template <typename T>
void write_slt(std::ostream& os, const Tensor<T>& t) {
    os.write("SLT1", 4);
    detail_io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail_io::put_le<std::uint64_t>(os, e);
    const std::uint8_t dtype = sizeof(T) == 4 ? 0 : 1;
    detail_io::put_bytes(os, &dtype, 1);
    if constexpr (sizeof(T) == 4) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &t.data()[i], 4);
            detail_io::put_le<std::uint32_t>(os, bits);
        }
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &t.data()[i], 8);
            detail_io::put_le<std::uint64_t>(os, bits);
        }
    }
    if (!os) throw IoError("tensor write failed");
}

template <typename T>
Tensor<T> read_slt(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SLT1") throw IoError("bad tensor magic");
    const std::uint32_t rank = detail_io::get_le<std::uint32_t>(is);
    if (rank > 8) throw IoError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<std::size_t>(detail_io::get_le<std::uint64_t>(is));
    std::uint8_t dtype;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    if (!is || dtype > 1) throw IoError("bad tensor dtype");
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (dtype == 0) {
            const std::uint32_t bits = detail_io::get_le<std::uint32_t>(is);
            float f;
            std::memcpy(&f, &bits, 4);
            t.data()[i] = static_cast<T>(f);
        } else {
            const std::uint64_t bits = detail_io::get_le<std::uint64_t>(is);
            double d;
            std::memcpy(&d, &bits, 8);
            t.data()[i] = static_cast<T>(d);
        }
    }
    return t;
}

template <typename T>
void write_slt_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_slt(os, t);
}

template <typename T>
Tensor<T> read_slt_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_slt<T>(is);
}

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<Param<T>*>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write("SLTA", 4);
    detail_io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const Param<T>* p : params) {
        detail_io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_slt(os, p->value);
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

// Loads into an existing registry; every archive entry must match the
// registry by name and shape. The first mismatched parameter path is named.
template <typename T>
void load_checkpoint(const std::string& path, const std::vector<Param<T>*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("cannot open checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SLTA") throw LoadError("bad checkpoint magic in " + path);
    const std::uint32_t count = detail_io::get_le<std::uint32_t>(is);

    std::vector<std::pair<std::string, Tensor<T>>> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = detail_io::get_le<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw LoadError("truncated checkpoint " + path);
        entries.emplace_back(std::move(name), read_slt<T>(is));
    }

    for (Param<T>* p : params) {
        const Tensor<T>* found = nullptr;
        for (const auto& [name, t] : entries)
            if (name == p->name) {
                found = &t;
                break;
            }
        if (!found) throw LoadError("checkpoint " + path + " is missing parameter " + p->name);
        if (found->shape() != p->value.shape())
            throw LoadError("parameter " + p->name + ": checkpoint shape " + shape_str(found->shape()) +
                            " vs network " + shape_str(p->value.shape()));
        std::copy(found->vec().begin(), found->vec().end(), p->value.vec().begin());
    }
    if (entries.size() != params.size()) {
        for (const auto& [name, t] : entries) {
            bool known = false;
            for (const Param<T>* p : params) known = known || p->name == name;
            if (!known) throw LoadError("checkpoint " + path + " has unexpected parameter " + name);
        }
    }
}

} // namespace llre
