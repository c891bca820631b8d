#pragma once

#include "gem/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace gem {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stateless hash of (seed, a, b) to a double in [-1, 1).
inline double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

/// Gaussian init N(0, stddev^2) drawn in row-major order.
inline void fill_normal(Matrix& m, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : m.data()) v = dist(rng);
}

}  // namespace gem
