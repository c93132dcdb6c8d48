#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lsr {

/// Seeded RNG with distributions implemented in-house so that streams are
/// reproducible bit-for-bit across standard libraries. std::mt19937_64 output
/// is pinned by the standard; the distribution helpers in <random> are not.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : eng_(seed) {}

    /// Decorrelated sub-stream for a pipeline stage. Mixing is splitmix64 on
    /// seed + golden-ratio * (stream + 1).
    static SeededRng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return SeededRng(x);
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (cosine branch only; stateless).
    double normal() {
        double u1 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    /// Uniform integer in [0, n), unbiased via rejection. n must be > 0.
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_below(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
};

/// Stage stream ids used when deriving sub-streams from the experiment seed.
namespace streams {
constexpr std::uint64_t synth_bases = 1;
constexpr std::uint64_t synth_codes = 2;
constexpr std::uint64_t synth_noise = 3;
constexpr std::uint64_t synth_survival = 4;
constexpr std::uint64_t pairing = 5;
constexpr std::uint64_t classifier = 6;
constexpr std::uint64_t clustering = 7;
constexpr std::uint64_t stability = 8;
constexpr std::uint64_t classify_split = 9;
}  // namespace streams

}  // namespace lsr
