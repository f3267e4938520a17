#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace llre {

// splitmix64 finalizer. Used both as a mixing step for the counter-based
// generator and to derive substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based generator: every value is a pure function of
// (seed, stream, slot). Streams are independent per pixel, so frames can be
// generated in any order (or in parallel) without changing a single draw.
struct CounterRng {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    std::uint64_t bits(std::uint64_t slot) const {
        std::uint64_t z = mix64(seed ^ 0xA0761D6478BD642FULL);
        z = mix64(z ^ stream);
        z = mix64(z ^ (slot * 0xE7037ED1A0B428DBULL));
        return z;
    }

    // uniform in (0, 1]
    double uniform(std::uint64_t slot) const {
        return (static_cast<double>(bits(slot) >> 11) + 1.0) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; consumes slots `slot` and `slot+1`
    double normal(std::uint64_t slot) const {
        const double u1 = uniform(slot);
        const double u2 = uniform(slot + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }
};

// Sequential-state generator for parameter init, crops and shuffles.
// mt19937_64 is bit-stable across platforms; the distributions below are
// hand-rolled because the standard library ones are not.
class SeqRng {
  public:
    explicit SeqRng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        // rejection sampling keeps the draw exactly uniform
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = eng_();
        while (v >= limit) v = eng_();
        return v % n;
    }

    bool coin() { return (eng_() & 1ULL) != 0; }

    double normal() {
        const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // derive an independent child generator; tag keeps call sites readable
    SeqRng child(std::uint64_t tag) { return SeqRng(mix64(eng_() ^ mix64(tag))); }

  private:
    std::mt19937_64 eng_;
};

} // namespace llre
