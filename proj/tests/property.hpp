#pragma once

#include "gem/rng.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <string>

// Expects `stmt` to throw a std::exception whose message contains `text`.
#define EXPECT_THROW_WITH(stmt, text)                                                      \
    do {                                                                                   \
        try {                                                                              \
            stmt;                                                                          \
            ADD_FAILURE() << "expected an exception containing \"" << (text) << '"';     \
        } catch (const std::exception& e_) {                                               \
            EXPECT_NE(std::string(e_.what()).find(text), std::string::npos) << e_.what(); \
        }                                                                                  \
    } while (0)

namespace gem::testing {

// Every property runs this many randomized cases.
constexpr int kPropertyCases = 1000;

// Fixed base seeds; each property picks one, so failures replay exactly.
constexpr std::uint64_t kSeedQuant = 0x51a7e001;
constexpr std::uint64_t kSeedRouter = 0x51a7e002;
constexpr std::uint64_t kSeedScar = 0x51a7e003;
constexpr std::uint64_t kSeedMetrics = 0x51a7e004;
constexpr std::uint64_t kSeedModel = 0x51a7e005;

/// Runs `fn(rng, case_index)` for kPropertyCases cases. Case i uses its own
/// generator seeded from (base, i), so one case can be rerun in isolation.
template <typename Fn>
void for_each_case(std::uint64_t base, Fn&& fn) {
    for (int i = 0; i < kPropertyCases; ++i) {
        std::mt19937_64 rng(splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(i))));
        fn(rng, i);
    }
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace gem::testing
