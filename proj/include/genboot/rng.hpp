#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace genboot::rng {

// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Child seed for substream `index` of `parent`. Depends only on the pair, so
// work items can be scheduled in any order and still see the same stream.
constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(parent) + 0x9E3779B97F4A7C15ULL * (index + 1));
}

// FNV-1a, used to turn stable labels (method names, scenario keys) into stream tags.
constexpr std::uint64_t tag(std::string_view label) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

// Uniform on [0, 1) using the top 53 bits.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

}  // namespace genboot::rng
