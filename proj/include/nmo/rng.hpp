#pragma once

#include <cstdint>
#include <random>

namespace nmo {

// splitmix64 finaliser. Used to derive independent seeds and as a counter-based
// generator where random access by index is needed.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform integer in [0, bound). Rejection sampling on the raw engine output so the
// stream is identical on every standard library (std distributions are not).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do x = rng(); while (x >= limit);
    return x % bound;
}

// Uniform double in [0, 1) with 53 random bits.
inline double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

} // namespace nmo
