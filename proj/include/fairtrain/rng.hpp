#pragma once

#include <cstdint>
#include <random>

namespace fairtrain {

using Rng = std::mt19937_64;

// Independent stream seed for (seed, stream) via the splitmix64 finalizer.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream identifiers; fixed so that artifacts stay reproducible across versions.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t downsample = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t synthetic = 5;
}  // namespace streams

}  // namespace fairtrain
