#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "llre/gradcheck.hpp"
#include "llre/image_io.hpp"
#include "llre/rawproc.hpp"

using namespace llre;
using gradcheck::random_tensor;

namespace {

std::string tmp_dir() {
    static std::string dir = [] {
        auto p = std::filesystem::temp_directory_path() / "llre_rawproc_tests";
        std::filesystem::create_directories(p);
        return p.string();
    }();
    return dir;
}

RawFrame<double> make_frame(std::size_t h, std::size_t w, double fill) {
    RawFrame<double> f;
    f.bayer = Tensor<double>({h, w}, fill);
    return f;
}

} // namespace

TEST_CASE("preprocess maps black frame to zeros and white frame to ones") {
    auto black = make_frame(4, 4, 512.0);
    auto packed = preprocess(black, {100.0});
    CHECK(packed.normalized);
    REQUIRE(packed.data.shape() == Shape{2, 2, 4});
    for (std::size_t i = 0; i < packed.data.numel(); ++i) CHECK(packed.data.data()[i] == 0.0);

    auto white = make_frame(4, 4, 16383.0);
    auto packed2 = preprocess(white, {1.0});
    for (std::size_t i = 0; i < packed2.data.numel(); ++i) CHECK(packed2.data.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("preprocess rejects odd dimensions and bad levels") {
    RawFrame<double> f;
    f.bayer = Tensor<double>({3, 4}, 600.0);
    CHECK_THROWS_AS(preprocess(f, {1.0}), ShapeError);
    auto g = make_frame(4, 4, 600.0);
    g.black_level = 700.0;
    g.white_level = 600.0;
    CHECK_THROWS_AS(preprocess(g, {1.0}), InputError);
    auto h = make_frame(4, 4, 600.0);
    h.cfa = "GRBG";
    CHECK_THROWS_AS(preprocess(h, {1.0}), InputError);
}

TEST_CASE("preprocess packed channels verified by index enumeration") {
    RawFrame<double> f;
    f.bayer = Tensor<double>({4, 4});
    // distinct values per site
    for (std::size_t i = 0; i < 16; ++i) f.bayer.data()[i] = 512.0 + 13.0 * static_cast<double>(i + 1);
    const double ratio = 100.0;
    auto packed = preprocess(f, {ratio});
    const double scale = 16383.0 - 512.0;
    for (std::size_t by = 0; by < 2; ++by)
        for (std::size_t bx = 0; bx < 2; ++bx)
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    const double dn = f.bayer.data()[(2 * by + dy) * 4 + 2 * bx + dx];
                    const double expect = std::min(std::max((dn - 512.0) / scale, 0.0) * ratio, 1.0);
                    const double got = packed.data.data()[(by * 2 + bx) * 4 + dy * 2 + dx];
                    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
                }
}

TEST_CASE("preprocess is monotone in input DN before clamping") {
    SeqRng rng(1);
    auto f = make_frame(6, 6, 0.0);
    auto g = make_frame(6, 6, 0.0);
    for (std::size_t i = 0; i < 36; ++i) {
        f.bayer.data()[i] = 512.0 + rng.uniform(0.0, 80.0);
        g.bayer.data()[i] = f.bayer.data()[i] + rng.uniform(0.0, 40.0); // g >= f pixelwise
    }
    auto pf = preprocess(f, {50.0});
    auto pg = preprocess(g, {50.0});
    for (std::size_t i = 0; i < pf.data.numel(); ++i) CHECK(pg.data.data()[i] >= pf.data.data()[i]);
}

TEST_CASE("bayer packing is a bijection") {
    SeqRng rng(2);
    auto bayer = random_tensor<double>(rng, {8, 10});
    auto packed = pack_bayer(bayer);
    REQUIRE(packed.shape() == Shape{4, 5, 4});
    auto back = unpack_bayer(packed);
    for (std::size_t i = 0; i < bayer.numel(); ++i) REQUIRE(back.data()[i] == bayer.data()[i]);

    // RGGB site mapping: channel order (R, G1, G2, B)
    Tensor<double> quad({2, 2});
    quad.data()[0] = 1.0; // R at (0,0)
    quad.data()[1] = 2.0; // G1 at (0,1)
    quad.data()[2] = 3.0; // G2 at (1,0)
    quad.data()[3] = 4.0; // B at (1,1)
    auto p = pack_bayer(quad);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 2.0);
    CHECK(p.data()[2] == 3.0);
    CHECK(p.data()[3] == 4.0);
}

TEST_CASE("full-frame crop with no flips is the identity") {
    SeqRng rng(3);
    auto input = random_tensor<double>(rng, {6, 6, 4});
    auto target = random_tensor<double>(rng, {12, 12, 3});
    // find a seed whose flip coins land false/false; the crop is forced to (0,0)
    std::uint64_t seed = 0;
    for (;; ++seed) {
        SeqRng probe_rng(seed);
        probe_rng.below(1);
        probe_rng.below(1);
        const bool fh = probe_rng.coin(), fv = probe_rng.coin();
        if (!fh && !fv) break;
    }
    auto pair = random_patch(input, target, 6, seed);
    CHECK_FALSE(pair.flip_h);
    CHECK_FALSE(pair.flip_v);
    for (std::size_t i = 0; i < input.numel(); ++i) REQUIRE(pair.input.data()[i] == input.data()[i]);
    for (std::size_t i = 0; i < target.numel(); ++i) REQUIRE(pair.target.data()[i] == target.data()[i]);
}

TEST_CASE("double flip restores the original") {
    SeqRng rng(4);
    auto x = random_tensor<double>(rng, {5, 7, 3});
    for (bool h : {false, true})
        for (bool v : {false, true}) {
            auto y = flip_tensor(flip_tensor(x, h, v), h, v);
            for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.data()[i] == x.data()[i]);
        }
}

TEST_CASE("crop alignment: markers survive together at cell granularity") {
    SeqRng rng(5);
    const std::size_t h = 12, w = 12, size = 6;
    Tensor<double> input({h, w, 4});
    Tensor<double> target({2 * h, 2 * w, 3});
    const std::size_t my = 5, mx = 7;
    input.data()[(my * w + mx) * 4 + 1] = 777.0;
    std::vector<double> block_values = {101.0, 102.0, 103.0, 104.0};
    for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
            target.data()[((2 * my + dy) * 2 * w + (2 * mx + dx)) * 3 + 0] = block_values[dy * 2 + dx];

    std::size_t survived = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto pair = random_patch(input, target, size, seed);
        // locate the marker in the cropped input
        std::ptrdiff_t found = -1;
        for (std::size_t i = 0; i < pair.input.numel(); ++i)
            if (pair.input.data()[i] == 777.0) found = static_cast<std::ptrdiff_t>(i);
        if (found < 0) continue;
        ++survived;
        const std::size_t flat = static_cast<std::size_t>(found) / 4;
        const std::size_t py = flat / size, px = flat % size;
        // the matching RGB cell must hold exactly the marked block values
        std::vector<double> got;
        for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
                got.push_back(pair.target.data()[((2 * py + dy) * 2 * size + (2 * px + dx)) * 3 + 0]);
        std::sort(got.begin(), got.end());
        REQUIRE(got == block_values);
    }
    CHECK(survived > 10);
}

TEST_CASE("random_patch validates sizes") {
    SeqRng rng(6);
    auto input = random_tensor<double>(rng, {6, 6, 4});
    auto target = random_tensor<double>(rng, {12, 12, 3});
    CHECK_THROWS_AS(random_patch(input, target, 8, 1), ConfigError);
    CHECK_THROWS_AS(random_patch(input, target, 3, 1), ConfigError);
    auto bad_target = random_tensor<double>(rng, {13, 12, 3});
    CHECK_THROWS_AS(random_patch(input, bad_target, 4, 1), ShapeError);
}

TEST_CASE("png 16-bit round trip is bit exact") {
    SeqRng rng(7);
    Tensor<double> img({9, 7, 3});
    for (std::size_t i = 0; i < img.numel(); ++i)
        img.data()[i] = static_cast<double>(rng.below(65536)) / 65535.0;
    const std::string path = tmp_dir() + "/rt16.png";
    CHECK(write_image(path, img, 16) == 0);
    auto back = read_image<double>(path);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) REQUIRE(back.data()[i] == img.data()[i]);
}

TEST_CASE("png 8-bit grayscale round trip") {
    SeqRng rng(8);
    Tensor<double> img({5, 6});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<double>(rng.below(256)) / 255.0;
    const std::string path = tmp_dir() + "/rt8.png";
    CHECK(write_image(path, img, 8) == 0);
    auto back = read_image<double>(path);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) REQUIRE(back.data()[i] == img.data()[i]);
}

TEST_CASE("png handles 1x1 images") {
    Tensor<double> img({1, 1}, 0.5);
    const std::string path = tmp_dir() + "/one.png";
    write_image(path, img, 16);
    auto back = read_image<double>(path);
    CHECK(back.extent(0) == 1);
    CHECK(back.extent(1) == 1);
    CHECK(back.data()[0] == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("png write clamps out-of-range values and counts them") {
    Tensor<double> img = Tensor<double>::from_data({2, 2}, {-0.5, 0.25, 1.75, 1.0});
    const std::string path = tmp_dir() + "/clamp.png";
    CHECK(write_image(path, img, 8) == 2);
    auto back = read_image<double>(path);
    CHECK(back.data()[0] == 0.0);
    CHECK(back.data()[2] == 1.0);
}

TEST_CASE("malformed png raises an io error") {
    const std::string path = tmp_dir() + "/garbage.png";
    std::ofstream os(path, std::ios::binary);
    os << "definitely not a png";
    os.close();
    CHECK_THROWS_AS(read_png(path), IoError);
    CHECK_THROWS_AS(read_png(tmp_dir() + "/does_not_exist.png"), IoError);
}

TEST_CASE("raw container round trip with sidecar") {
    SeqRng rng(9);
    RawFrame<double> f;
    f.bayer = Tensor<double>({6, 8});
    for (std::size_t i = 0; i < f.bayer.numel(); ++i)
        f.bayer.data()[i] = static_cast<double>(rng.below(16384));
    f.iso = 1600;
    f.exposure_s = 0.04;
    const std::string path = tmp_dir() + "/frame.raw";
    write_raw(path, f);
    auto g = read_raw<double>(path);
    REQUIRE(g.bayer.shape() == f.bayer.shape());
    for (std::size_t i = 0; i < f.bayer.numel(); ++i) REQUIRE(g.bayer.data()[i] == f.bayer.data()[i]);
    CHECK(g.iso == 1600);
    CHECK(g.black_level == f.black_level);

    // truncated payload
    std::ofstream trunc(tmp_dir() + "/short.raw", std::ios::binary);
    trunc << "abc";
    trunc.close();
    std::ofstream js(tmp_dir() + "/short.json");
    js << R"({"height":6,"width":8,"black_level":512,"white_level":16383,"cfa":"RGGB","iso":100,"exposure_s":0.1})";
    js.close();
    CHECK_THROWS_AS(read_raw<double>(tmp_dir() + "/short.raw"), IoError);
    CHECK_THROWS_AS(read_raw<double>(tmp_dir() + "/no_sidecar.raw"), IoError);
}

TEST_CASE("sidecar path replaces the extension") {
    CHECK(sidecar_path("scene.raw") == "scene.json");
    CHECK(sidecar_path("dir.v2/scene.raw") == "dir.v2/scene.json");
    CHECK(sidecar_path("dir.v2/scene") == "dir.v2/scene.json");
}
