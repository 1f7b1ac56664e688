// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvlab/matrix.hpp"
#include "kvlab/synthetic.hpp"

namespace kvlab {

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t d_model = 128;
    std::size_t n_q_heads = 8;
    std::size_t n_kv_heads = 2;
    std::size_t d_h = 16;
    std::uint64_t seed = 0;

    /// Config with d_model derived as n_q_heads * d_h.
    static ModelConfig make(std::size_t n_layers, std::size_t n_q_heads, std::size_t n_kv_heads,
                            std::size_t d_h, std::uint64_t seed);

    std::size_t group_size() const { return n_q_heads / n_kv_heads; }
    std::size_t kv_head_of(std::size_t q_head) const { return q_head / group_size(); }
    void validate() const;
};

struct LayerWeights {
    std::vector<Matrix> w_q;  // per q-head, d_model x d_h
    std::vector<Matrix> w_k;  // per kv-head, d_model x d_h
    std::vector<Matrix> w_v;  // per kv-head, d_model x d_h
    Matrix w_o;               // (n_q_heads * d_h) x d_model
};

/// Rows of the output projection that consume the given q-head's channels.
Matrix w_o_slice(const Matrix& w_o, std::size_t q_head, std::size_t d_h);

struct Model {
    ModelConfig config;
    std::vector<LayerWeights> layers;
};

/**
 * Seeded weights. Key and value projections are i.i.d. draws; each query
 * projection is its KV group's key draw plus 0.5 times an independent draw, so
 * queries attend to keys that resemble their own hidden state. All entries are
 * divided by sqrt(d_model). Draws come from CounterRng(seed, streams::kWeights).
 */
Model init_model(const ModelConfig& config);

struct HeadKV {
    Matrix k;
    Matrix v;
};

struct KVCache {
    std::vector<std::vector<HeadKV>> layers;  // [layer][kv-head]

    std::size_t entries(std::size_t layer, std::size_t kv_head) const {
        return layers.at(layer).at(kv_head).k.rows();
    }
};

/// K = H W_K and V = H W_V for every layer and kv-head.
KVCache prefill(const Model& model, const Matrix& hidden);

struct DecodeResult {
    /// Sum over layers of the attention block outputs.
    std::vector<double> output;
    /// [layer][q-head] attention row over the cache entries present before this step.
    std::vector<std::vector<std::vector<double>>> attention;
};

/**
 * One decode step: every layer attends with the token's queries over the
 * current cache, then the token's own K and V are appended.
 */
DecodeResult decode_step(const Model& model, KVCache& cache, std::span<const double> hidden);

/// Dimensions of a raw trace; field order matches the on-disk header.
struct TraceDims {
    std::size_t n_layers = 0;
    std::size_t n_q_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t d_h = 0;
    std::size_t d_model = 0;
    std::size_t n_prompt = 0;
    std::size_t n_steps = 0;

    std::size_t tokens() const { return n_prompt + n_steps; }
    std::size_t group_size() const { return n_q_heads / n_kv_heads; }
    bool operator==(const TraceDims&) const = default;
};

struct LayerTrace {
    std::vector<Matrix> k;  // per kv-head, tokens x d_h
    std::vector<Matrix> v;  // per kv-head, tokens x d_h
    std::vector<Matrix> q;  // per q-head, tokens x d_h
    Matrix w_o;
    bool operator==(const LayerTrace&) const = default;
};

/// Everything needed to replay attention and importance: keys, values and
/// queries of every token (prompt then generated) plus the output projection.
struct RawTrace {
    TraceDims dims;
    std::vector<LayerTrace> layers;
    bool operator==(const RawTrace&) const = default;
};

struct TraceRun {
    RawTrace trace;
    KVCache cache;
    Matrix hidden;  // tokens x d_model
    std::vector<DecodeResult> decode_log;
    std::vector<std::size_t> prompt_regimes;
    std::vector<std::size_t> decode_regimes;
};

/// Prefill on regime-generated prompt states, then `steps` full-cache decode steps.
TraceRun run_trace(const ModelConfig& config, std::size_t prompt_len, std::size_t steps,
                   const SyntheticRegime& regime);

/**
 * Attention row of the query at token position `position` over the entries
 * [0, visible) of a trace's kv-head, scaled by 1/sqrt(d_h).
 */
std::vector<double> attention_row(const RawTrace& trace, std::size_t layer, std::size_t q_head,
                                  std::size_t position, std::size_t visible);

}  // namespace kvlab
