#pragma once

#include <cstdint>
#include <random>

namespace lenctl {

// splitmix64, used to derive well-separated sub-seeds from one run seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Stable stream ids so every module draws from its own generator.
enum class Stream : uint64_t {
    data = 1,
    init = 2,
    shuffle = 3,
    shift = 4,
    heldout = 5,
    decode = 6,
};

inline std::mt19937_64 make_rng(uint64_t seed, Stream stream, uint64_t salt = 0) {
    return std::mt19937_64(mix_seed(seed ^ mix_seed(static_cast<uint64_t>(stream) + salt)));
}

} // namespace lenctl
