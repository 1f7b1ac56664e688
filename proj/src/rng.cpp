// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/rng.hpp"

#include "kvlab/error.hpp"

namespace kvlab {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : m_key(mix64(seed ^ mix64(stream + kGolden))) {}

std::uint64_t CounterRng::next_u64() {
    ++m_counter;
    return mix64(m_key + m_counter * kGolden);
}

double CounterRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
    double sum = 0.0;
    for (int i = 0; i < 12; ++i) {
        sum += uniform();
    }
    return sum - 6.0;
}

std::uint64_t CounterRng::below(std::uint64_t bound) {
    require(bound > 0, "CounterRng::below: bound must be positive");
    // Multiply-shift keeps the mapping exact in integer arithmetic.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * bound;
    return static_cast<std::uint64_t>(wide >> 64);
}

}  // namespace kvlab
