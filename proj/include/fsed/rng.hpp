#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace fsed {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a sequence of keys into an independent stream seed.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t state = 0x9e3779b97f4a7c15ull;
    for (std::uint64_t k : keys) {
        state ^= k + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2);
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        state = z ^ (z >> 31);
    }
    return state;
}

/// Uniform double in [lo, hi); avoids implementation-defined distribution objects.
inline double uniform(Rng& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

/// Uniform integer in [lo, hi].
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<std::int64_t>(rng());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r = rng();
    while (r >= limit) r = rng();
    return lo + static_cast<std::int64_t>(r % span);
}

inline double normal(Rng& rng) {
    // Box-Muller; one draw per call keeps streams simple to reason about.
    double u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
        const auto j = uniform_int(rng, 0, static_cast<std::int64_t>(i));
        std::swap(first[i], first[j]);
    }
}

}  // namespace fsed
