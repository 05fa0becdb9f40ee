#pragma once

// seeded randomness helpers. distribution code is hand-rolled on top of
// std::mt19937_64 so sequences are identical across standard libraries.

#include <cstdint>
#include <random>
#include <vector>

namespace cmae::rng {

// canonical double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// unbiased integer in [0, n) by rejection.
inline std::uint64_t bounded(std::mt19937_64& gen, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = gen();
    } while (v >= limit);
    return v % n;
}

// fisher-yates, high index down.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& gen) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(bounded(gen, i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace cmae::rng
