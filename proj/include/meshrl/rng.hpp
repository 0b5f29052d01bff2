#pragma once

#include <cmath>
#include <cstdint>
#include <random>

// Thin deterministic layer over std::mt19937_64. The standard distribution
// objects are implementation-defined, so every transform we rely on for
// reproducible output is spelled out here instead.

namespace meshrl::rng {

using Engine = std::mt19937_64;

// splitmix64 finalizer; used to derive independent seeds from one master.
inline std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix(seed ^ mix(stream));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix(derive_seed(seed, a) ^ mix(b + 0x6a09e667f3bcc909ULL));
}

// Uniform double in [0, 1), 53-bit resolution.
inline double uniform(Engine& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform double in (0, 1]; safe as a log() argument.
inline double uniform_pos(Engine& g) {
    return static_cast<double>((g() >> 11) + 1) * 0x1.0p-53;
}

// Uniform integer in the closed range [lo, hi]. Spans here are tiny
// (rule ranges, action grids), so modulo bias is far below observability.
inline long uniform_int(Engine& g, long lo, long hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(g() % span);
}

// Standard normal via Box-Muller (cosine branch). Two draws per call keeps
// the stream layout fixed and platform-independent.
inline double normal(Engine& g) {
    const double u1 = uniform_pos(g);
    const double u2 = uniform(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace meshrl::rng
