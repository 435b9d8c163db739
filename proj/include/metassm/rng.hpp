#pragma once

#include <cstdint>
#include <random>

namespace metassm {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a root seed, a stream tag, and
// counters. Counter-based so interrupted runs can be resumed bit-exactly.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(root ^ 0x6a09e667f3bcc909ULL);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

// Stream tags; values are arbitrary but frozen for reproducibility.
namespace stream {
constexpr std::uint64_t dataset = 0xd5a7a5e7ULL;
constexpr std::uint64_t init = 0x1217a11eULL;
constexpr std::uint64_t batch = 0xba7c4ULL;
constexpr std::uint64_t split = 0x59117ULL;
constexpr std::uint64_t windows = 0x817d085ULL;
constexpr std::uint64_t grid = 0x9e1dULL;
}  // namespace stream

// mt19937_64 with explicit uniform mappings, so draws are identical on every
// platform (std::uniform_real_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t bits() { return engine_(); }

    // [0, 1) with 53-bit resolution
    double canonical() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + canonical() * (hi - lo); }

    // [0, n), unbiased via rejection
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = bits();
        } while (v >= limit);
        return v % n;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace metassm
