// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "kvlab/matrix.hpp"

namespace kvlab {

/**
 * @brief Precomputed per-entry importance for every query token of a run.
 *
 * rows[layer][head] is n_steps x n_entries: row t is the importance that query
 * token t assigns to each cache entry. Consumers treat the first `window` rows
 * as the observation window and the remaining rows as future generation steps.
 * Heads are treated as having their own KV head (group size 1).
 */
struct ImportanceDump {
    std::size_t n_layers = 0;
    std::size_t n_q_heads = 0;
    std::size_t n_steps = 0;
    std::size_t n_entries = 0;
    std::vector<std::vector<Matrix>> rows;

    bool operator==(const ImportanceDump&) const = default;
};

}  // namespace kvlab
