#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "llre/cli.hpp"
#include "llre/image_io.hpp"
#include "llre/rawproc.hpp"
#include "llre/serialize.hpp"

using namespace llre;

namespace {

std::string tmp_dir() {
    static std::string dir = [] {
        auto p = std::filesystem::temp_directory_path() / "llre_cli_tests";
        std::filesystem::create_directories(p);
        return p.string();
    }();
    return dir;
}

struct CaptureCout {
    std::stringstream ss;
    std::streambuf* old;
    CaptureCout() : old(std::cout.rdbuf(ss.rdbuf())) {}
    ~CaptureCout() { std::cout.rdbuf(old); }
    std::string text() const { return ss.str(); }
};

double parse_kv(const std::string& text, const std::string& key) {
    const auto pos = text.find(key + "=");
    REQUIRE(pos != std::string::npos);
    return std::stod(text.substr(pos + key.size() + 1));
}

void write_black_raw(const std::string& path, std::size_t h, std::size_t w) {
    RawFrame<double> frame;
    frame.bayer = Tensor<double>({h, w}, 512.0); // at black level
    write_raw(path, frame);
}

} // namespace

TEST_CASE("synth-chart then calibrate recovers the generating parameters") {
    const std::string dir = tmp_dir() + "/chart";
    CaptureCout cap;
    int rc = cli::run({"synth-chart", "--levels", "16", "--frames", "50", "--size", "128x128", "--range-lo", "3.125",
                       "--range-hi", "25", "--k", "2", "--sigma2", "25", "--seed", "11", "--out-dir", dir});
    REQUIRE(rc == 0);
    rc = cli::run({"calibrate", "--input", dir});
    REQUIRE(rc == 0);
    const std::string text = cap.text();
    CHECK(text.find("resolved:") != std::string::npos);
    const double k = parse_kv(text, "k");
    const double s2 = parse_kv(text, "sigma2");
    CHECK(std::abs(k - 2.0) / 2.0 < 0.05);
    CHECK(std::abs(s2 - 25.0) / 25.0 < 0.10);
    CHECK(parse_kv(text, "r2") > 0.99);
}

TEST_CASE("simulate writes a bounded noisy short exposure") {
    const std::string clean_path = tmp_dir() + "/clean.raw";
    RawFrame<double> frame;
    frame.bayer = Tensor<double>({8, 8}, 2512.0);
    write_raw(clean_path, frame);
    CaptureCout cap;
    const int rc = cli::run({"simulate", "--input", clean_path, "--k", "2", "--sigma2", "25", "--ratio", "100",
                             "--seed", "3", "--out", tmp_dir() + "/short.raw"});
    REQUIRE(rc == 0);
    auto noisy = read_raw<double>(tmp_dir() + "/short.raw");
    double mean = 0;
    for (std::size_t i = 0; i < noisy.bayer.numel(); ++i) mean += noisy.bayer.data()[i];
    mean /= static_cast<double>(noisy.bayer.numel());
    // black level plus (2512-512)/100 = 20 DN of signal
    CHECK(mean > 512.0 - 10.0);
    CHECK(mean < 512.0 + 50.0);
}

TEST_CASE("preprocess emits a packed tensor") {
    const std::string raw_path = tmp_dir() + "/pp.raw";
    write_black_raw(raw_path, 8, 8);
    CaptureCout cap;
    const int rc =
        cli::run({"preprocess", "--input", raw_path, "--ratio", "100", "--out", tmp_dir() + "/packed.slt"});
    REQUIRE(rc == 0);
    auto packed = read_slt_file<float>(tmp_dir() + "/packed.slt");
    CHECK(packed.shape() == Shape{4, 4, 4});
}

TEST_CASE("cost reports the table-style preset and is additive") {
    CaptureCout cap;
    REQUIRE(cli::run({"cost", "--input", "4256x2848"}) == 0);
    const std::string text = cap.text();
    const auto s1 = text.find("stage1 GMACs=");
    const auto s2 = text.find("stage2 GMACs=");
    const auto tot = text.find("total GMACs=");
    REQUIRE(s1 != std::string::npos);
    REQUIRE(s2 != std::string::npos);
    REQUIRE(tot != std::string::npos);
    const double g1 = std::stod(text.substr(s1 + 13));
    const double g2 = std::stod(text.substr(s2 + 13));
    const double gt = std::stod(text.substr(tot + 12));
    CHECK(gt == doctest::Approx(g1 + g2).epsilon(1e-9));
}

TEST_CASE("gradcheck subcommand gates on its checks") {
    CaptureCout cap;
    CHECK(cli::run({"gradcheck", "--ops", "tensor"}) == 0);
    CHECK(cap.text().find("all passed") != std::string::npos);
    CHECK(cli::run({"gradcheck", "--ops", "bogus"}) == 1);
}

TEST_CASE("gradcheck over every op family exits zero") {
    CaptureCout cap;
    CHECK(cli::run({"gradcheck", "--ops", "all"}) == 0);
}

TEST_CASE("train smoke run produces checkpoint and curve") {
    const std::string out = tmp_dir() + "/train_out";
    CaptureCout cap;
    const int rc = cli::run({"train", "--phase", "stage1", "--epochs", "2", "--train-scenes", "2", "--eval-scenes",
                             "1", "--patch", "32", "--seed", "5", "--out-dir", out});
    REQUIRE(rc == 0);
    CHECK(std::filesystem::exists(out + "/stage1.ckpt"));
    CHECK(std::filesystem::exists(out + "/stage1_curve.csv"));
    std::ifstream csv(out + "/stage1_curve.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,l1,msssim,total,psnr_val");
}

TEST_CASE("infer on an all-black raw through the identity cascade is near black") {
    const std::string raw_path = tmp_dir() + "/black.raw";
    write_black_raw(raw_path, 16, 16);
    const std::string png_path = tmp_dir() + "/black.png";
    CaptureCout cap;
    const int rc = cli::run({"infer", "--input", raw_path, "--ratio", "100", "--seed", "9", "--out", png_path});
    REQUIRE(rc == 0);
    auto img = read_image<double>(png_path);
    REQUIRE(img.shape() == Shape{16, 16, 3});
    double mean = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) mean += img.data()[i];
    mean /= static_cast<double>(img.numel());
    CHECK(mean < 2.0 / 255.0);
}

TEST_CASE("infer supports tiled denoise output") {
    const std::string raw_path = tmp_dir() + "/tiled.raw";
    write_black_raw(raw_path, 64, 64);
    CaptureCout cap;
    const int rc = cli::run({"infer", "--input", raw_path, "--stage", "denoise", "--tile", "16", "--bits", "16",
                             "--out", tmp_dir() + "/tiled.png"});
    REQUIRE(rc == 0);
    auto img = read_image<double>(tmp_dir() + "/tiled.png");
    CHECK(img.shape() == Shape{64, 64});
}

TEST_CASE("failures exit with code one and a single-line error") {
    CaptureCout cap;
    std::stringstream err;
    auto* old = std::cerr.rdbuf(err.rdbuf());
    const int rc = cli::run({"calibrate", "--input", tmp_dir() + "/missing_dir"});
    std::cerr.rdbuf(old);
    CHECK(rc == 1);
    const std::string msg = err.str();
    CHECK(msg.rfind("error: ", 0) == 0);
    CHECK(std::count(msg.begin(), msg.end(), '\n') == 1);
}

TEST_CASE("unknown flags and subcommands are rejected") {
    CaptureCout cap;
    std::stringstream err;
    auto* old = std::cerr.rdbuf(err.rdbuf());
    CHECK(cli::run({"cost", "--frobnicate"}) != 0);
    CHECK(cli::run({"transmogrify"}) != 0);
    CHECK(cli::run({}) != 0);
    std::cerr.rdbuf(old);
}
