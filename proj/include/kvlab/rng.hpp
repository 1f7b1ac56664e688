// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace kvlab {

/**
 * @brief Counter-based generator built on the SplitMix64 finalizer.
 *
 * Draw i of stream s under seed k is
 *     mix64(mix64(k ^ mix64(s + G)) + (i + 1) * G),   G = 0x9E3779B97F4A7C15
 * where mix64 is the SplitMix64 output function. The sequence depends only on
 * (seed, stream, i), so any language with 64-bit unsigned arithmetic can
 * reproduce it bit for bit.
 */
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    /// Approximately standard normal: sum of 12 uniforms minus 6 (Irwin-Hall).
    /// Uses only addition, so results are identical across platforms.
    double normal();
    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    std::uint64_t counter() const { return m_counter; }

private:
    std::uint64_t m_key;
    std::uint64_t m_counter = 0;
};

std::uint64_t mix64(std::uint64_t z);

/// Well-known stream ids so that each consumer of randomness draws from its own sequence.
namespace streams {
inline constexpr std::uint64_t kWeights = 1;
inline constexpr std::uint64_t kRegimeDirections = 2;
inline constexpr std::uint64_t kPromptRegimes = 3;
inline constexpr std::uint64_t kPromptHidden = 4;
inline constexpr std::uint64_t kDecodeRegimes = 5;
inline constexpr std::uint64_t kDecodeDrift = 6;
inline constexpr std::uint64_t kSpikeFamily = 7;
}  // namespace streams

}  // namespace kvlab
