// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvlab/attention.hpp"
#include "kvlab/importance_dump.hpp"
#include "kvlab/matrix.hpp"

namespace kvlab {

/// Observation matrix of one (layer, q-head): rows are historical queries,
/// columns are scored cache entries. Entries are nonnegative.
struct ImportanceMatrix {
    Matrix values;
    std::size_t layer = 0;
    std::size_t head = 0;

    std::size_t m() const { return values.rows(); }
    std::size_t n() const { return values.cols(); }
};

/**
 * Causal attention of the last m keys' queries over the cache. `queries` holds
 * the m historical query rows, which sit at positions n-m .. n-1 of `keys`.
 * Query j is normalized over entries 0..(n-m+j) and only the scored prefix
 * columns 0..n-m-1 are returned.
 */
ImportanceMatrix attention_importance(const Matrix& queries, const Matrix& keys, std::size_t d_h);

ImportanceMatrix pool_importance(const ImportanceMatrix& importance, std::size_t kernel);

/// ||v_i W_O(slice)||_2 for every value row.
ScoreVector value_norm_weights(const Matrix& values, const Matrix& w_o_slice);

ScoreVector scale_scores(std::span<const double> scores, std::span<const double> weights);

/// Observations of one layer, as consumed by eviction policies.
struct LayerObservation {
    std::size_t layer = 0;
    std::size_t n_entries = 0;   // cache entries before eviction
    std::size_t window = 0;      // protected recent entries, min(window, n_entries)
    std::size_t n_kv_heads = 0;
    std::size_t group_size = 1;
    /// Per q-head attention over the scored prefix; empty when the prefix is empty.
    std::vector<ImportanceMatrix> attention;
    /// Per q-head projected-value norms over all n_entries.
    std::vector<ScoreVector> value_norms;

    std::size_t prefix() const { return n_entries - window; }
    std::size_t n_q_heads() const { return n_kv_heads * group_size; }
};

/// Observation window over the prompt of a raw trace (the last `window` prompt tokens).
LayerObservation observe_layer(const RawTrace& trace, std::size_t layer, std::size_t window);
std::vector<LayerObservation> observe(const RawTrace& trace, std::size_t window);

/// Observations from an importance dump: the first `window` rows, unit value norms.
std::vector<LayerObservation> observe(const ImportanceDump& dump, std::size_t window);

/// KV-level value weights over the scored prefix: mean over the group's q-heads.
ScoreVector group_value_norms(const LayerObservation& obs, std::size_t kv_head);

}  // namespace kvlab
