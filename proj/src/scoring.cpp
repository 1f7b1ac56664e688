// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvlab/error.hpp"

namespace kvlab {

ImportanceMatrix attention_importance(const Matrix& queries, const Matrix& keys, std::size_t d_h) {
    require(!queries.empty() && !keys.empty(), "attention_importance: empty queries or keys");
    require(queries.cols() == d_h && keys.cols() == d_h, "attention_importance: width must equal d_h");
    const std::size_t m = queries.rows();
    const std::size_t n = keys.rows();
    require(m < n, "attention_importance: window of " + std::to_string(m) +
                       " queries leaves no scored entries among " + std::to_string(n));
    const std::size_t prefix = n - m;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_h));

    Matrix logits(m, n);
    std::vector<std::size_t> visible(m);
    for (std::size_t j = 0; j < m; ++j) {
        visible[j] = prefix + j + 1;
        auto q = queries.row(j);
        for (std::size_t i = 0; i < visible[j]; ++i) {
            auto k = keys.row(i);
            double dot = 0.0;
            for (std::size_t c = 0; c < d_h; ++c) {
                dot += q[c] * k[c];
            }
            logits(j, i) = dot * inv_scale;
        }
    }
    const Matrix weights = softmax_rows(logits, std::span<const std::size_t>(visible));
    return {weights.slice_cols(0, prefix), 0, 0};
}

ImportanceMatrix pool_importance(const ImportanceMatrix& importance, std::size_t kernel) {
    return {avg_pool_rows(importance.values, kernel), importance.layer, importance.head};
}

ScoreVector value_norm_weights(const Matrix& values, const Matrix& w_o_slice) {
    require(values.cols() == w_o_slice.rows(), "value_norm_weights: value width " +
                                                   std::to_string(values.cols()) +
                                                   " does not match W_O slice rows " +
                                                   std::to_string(w_o_slice.rows()));
    return row_l2_norms(matmul(values, w_o_slice));
}

ScoreVector scale_scores(std::span<const double> scores, std::span<const double> weights) {
    require(scores.size() == weights.size(), "scale_scores: length mismatch");
    ScoreVector out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = scores[i] * weights[i];
    }
    return out;
}

LayerObservation observe_layer(const RawTrace& trace, std::size_t layer, std::size_t window) {
    const auto& dims = trace.dims;
    require(layer < dims.n_layers, "observe_layer: layer " + std::to_string(layer) + " out of range");
    require(window >= 1, "observe_layer: window must be >= 1");
    const auto& lt = trace.layers[layer];

    LayerObservation obs;
    obs.layer = layer;
    obs.n_entries = dims.n_prompt;
    obs.window = std::min(window, dims.n_prompt);
    obs.n_kv_heads = dims.n_kv_heads;
    obs.group_size = dims.group_size();
    for (std::size_t h = 0; h < dims.n_q_heads; ++h) {
        const std::size_t kv = h / obs.group_size;
        const Matrix values = lt.v[kv].slice_rows(0, dims.n_prompt);
        obs.value_norms.push_back(value_norm_weights(values, w_o_slice(lt.w_o, h, dims.d_h)));
        if (obs.prefix() > 0) {
            const Matrix keys = lt.k[kv].slice_rows(0, dims.n_prompt);
            const Matrix queries = lt.q[h].slice_rows(obs.prefix(), obs.window);
            auto importance = attention_importance(queries, keys, dims.d_h);
            importance.layer = layer;
            importance.head = h;
            obs.attention.push_back(std::move(importance));
        }
    }
    return obs;
}

std::vector<LayerObservation> observe(const RawTrace& trace, std::size_t window) {
    std::vector<LayerObservation> out;
    for (std::size_t l = 0; l < trace.dims.n_layers; ++l) {
        out.push_back(observe_layer(trace, l, window));
    }
    return out;
}

std::vector<LayerObservation> observe(const ImportanceDump& dump, std::size_t window) {
    require(window >= 1 && window <= dump.n_steps,
            "observe: window of " + std::to_string(window) + " rows exceeds the dump's " +
                std::to_string(dump.n_steps) + " query rows");
    std::vector<LayerObservation> out;
    for (std::size_t l = 0; l < dump.n_layers; ++l) {
        LayerObservation obs;
        obs.layer = l;
        obs.n_entries = dump.n_entries;
        obs.window = std::min(window, dump.n_entries);
        obs.n_kv_heads = dump.n_q_heads;
        obs.group_size = 1;
        for (std::size_t h = 0; h < dump.n_q_heads; ++h) {
            obs.value_norms.emplace_back(dump.n_entries, 1.0);
            if (obs.prefix() > 0) {
                obs.attention.push_back(
                    {dump.rows[l][h].slice_rows(0, window).slice_cols(0, obs.prefix()), l, h});
            }
        }
        out.push_back(std::move(obs));
    }
    return out;
}

ScoreVector group_value_norms(const LayerObservation& obs, std::size_t kv_head) {
    require(kv_head < obs.n_kv_heads, "group_value_norms: kv head out of range");
    ScoreVector out(obs.prefix(), 0.0);
    for (std::size_t h = kv_head * obs.group_size; h < (kv_head + 1) * obs.group_size; ++h) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += obs.value_norms[h][i];
        }
    }
    for (double& x : out) {
        x /= static_cast<double>(obs.group_size);
    }
    return out;
}

}  // namespace kvlab
