#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cbe {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Random stream addressed by a root seed and a path of tags. Streams with
/// different paths are statistically independent; the same path always
/// yields the same sequence.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {})
{
    std::uint64_t state = mix64(seed);
    for (std::uint64_t tag : path) {
        state = mix64(state ^ mix64(tag + 0x632be59bd9b4e019ULL));
    }
    return Rng(state);
}

// Stream tags. Stable numeric values: changing them changes every seeded run.
namespace stream {
inline constexpr std::uint64_t backbone = 1;
inline constexpr std::uint64_t expansion_shared = 2;
inline constexpr std::uint64_t expansion_private = 3;
inline constexpr std::uint64_t head = 4;
inline constexpr std::uint64_t sampler = 10;
inline constexpr std::uint64_t weak_aug = 11;
inline constexpr std::uint64_t strong_aug = 12;
inline constexpr std::uint64_t data = 20;
inline constexpr std::uint64_t label_split = 21;
inline constexpr std::uint64_t test_split = 22;
inline constexpr std::uint64_t simulation = 30;
inline constexpr std::uint64_t measurement = 31;
}  // namespace stream

}  // namespace cbe
