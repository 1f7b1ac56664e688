// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kvlab/attention.hpp"
#include "kvlab/importance_dump.hpp"
#include "kvlab/synthetic.hpp"

namespace kvlab {

/*
 * DKVT trace file, all integers unsigned 32-bit little-endian, payload
 * 32-bit IEEE floats little-endian, row-major:
 *
 *   offset 0   magic "DKVT"
 *   offset 4   version (1)
 *   offset 8   kind (1 = raw, 2 = importance)
 *   offset 12  header
 *     kind 1: n_layers n_q_heads n_kv_heads d_h d_model n_prompt n_steps
 *             then per layer: for each kv-head K then V [tokens x d_h],
 *             Q per q-head [tokens x d_h], W_O [n_q_heads*d_h x d_model],
 *             tokens = n_prompt + n_steps
 *     kind 2: n_layers n_q_heads n_steps n_entries
 *             then I [n_layers x n_q_heads x n_steps x n_entries]
 */

enum class TraceKind : std::uint32_t { raw = 1, importance = 2 };

inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr char kTraceMagic[4] = {'D', 'K', 'V', 'T'};

/// Parse failure naming the offending field and the byte offset where it was found.
class TraceFormatError : public std::runtime_error {
public:
    TraceFormatError(std::string field, std::uint64_t offset, const std::string& detail);

    const std::string& field() const { return m_field; }
    std::uint64_t offset() const { return m_offset; }

private:
    std::string m_field;
    std::uint64_t m_offset;
};

using AnyTrace = std::variant<RawTrace, ImportanceDump>;

std::vector<std::uint8_t> encode_trace(const RawTrace& trace);
std::vector<std::uint8_t> encode_trace(const ImportanceDump& dump);
AnyTrace decode_trace(std::span<const std::uint8_t> bytes);

/// Written atomically (temporary file, then rename).
void write_trace(const std::filesystem::path& path, const RawTrace& trace);
void write_trace(const std::filesystem::path& path, const ImportanceDump& dump);
AnyTrace read_trace(const std::filesystem::path& path);

/// Rounds every value to the nearest float, i.e. what a write/read cycle yields.
RawTrace round_to_f32(const RawTrace& trace);
ImportanceDump round_to_f32(const ImportanceDump& dump);

/// Regime-shift trace from the toy model (prefill, then full-cache decoding).
RawTrace gen_synthetic(const ModelConfig& config, std::size_t prompt_len, std::size_t steps,
                       const SyntheticRegime& regime);

/**
 * Importance-level family with a known fragility: a steady block of entries
 * that every observation rates moderately, and a few spike entries that one
 * observation each rates highly. Future steps mostly attend the steady block;
 * spike steps move the mass onto the spike entries. Mean aggregation at a 50%
 * budget keeps the steady block and drops the spikes.
 */
struct PlantedSpikeConfig {
    std::uint64_t seed = 0;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t n_entries = 256;
    std::size_t window = 32;
    std::size_t steps = 200;
    std::size_t n_spikes = 8;
    double spike_step_prob = 0.1;
};

ImportanceDump gen_planted_spike(const PlantedSpikeConfig& config);

/// Positions of the planted spike entries (identical for every head and layer).
std::vector<std::size_t> planted_spike_positions(const PlantedSpikeConfig& config);
/// Size of the steady block, which starts at entry 0.
std::size_t planted_steady_count(const PlantedSpikeConfig& config);

}  // namespace kvlab
