// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvlab/aggregation.hpp"
#include "kvlab/attention.hpp"
#include "kvlab/matrix.hpp"
#include "kvlab/scoring.hpp"

namespace kvlab {

enum class BudgetScope { per_head, per_layer_joint, global_joint };

std::string scope_name(BudgetScope scope);

struct BudgetSpec {
    /// Fraction of entries to keep in each scope unit, in (0, 1].
    std::optional<double> fraction = 0.2;
    /// Alternative to `fraction`: retained entries per layer.
    std::optional<std::size_t> absolute_per_layer;
    std::size_t window = 32;
    std::size_t sinks = 4;
    BudgetScope scope = BudgetScope::per_head;

    void validate() const;
};

/// ceil(fraction * n), tolerant of representation error in the product.
std::size_t budget_entries(double fraction, std::size_t n);

/**
 * Entries available to one scope unit: a kv-head (per_head), a layer
 * (per_layer_joint) or the whole model (global_joint).
 */
std::size_t unit_budget(const BudgetSpec& budget, std::size_t n_entries, std::size_t n_kv_heads,
                        std::size_t n_layers);

struct HeadPlan {
    std::size_t head = 0;
    IndexList retained;  // ascending
    bool operator==(const HeadPlan&) const = default;
};

struct LayerPlan {
    std::size_t layer = 0;
    std::vector<HeadPlan> heads;
    bool operator==(const LayerPlan&) const = default;
};

struct EvictionPlan {
    std::string policy;
    BudgetSpec budget;
    std::size_t unit_budget = 0;
    std::size_t n_entries = 0;
    std::uint64_t seed = 0;
    /// Set when a per-head budget was below the window and only recent entries were kept.
    bool clamped = false;
    std::vector<std::string> notes;
    std::vector<LayerPlan> layers;

    /// Layer plan with the given layer id (plans may cover a subset of layers).
    const LayerPlan& layer_plan(std::size_t layer) const;
    bool covers(std::size_t layer) const;
    const IndexList& retained(std::size_t layer, std::size_t kv_head) const;
    std::size_t retained_in_layer(std::size_t layer) const;
    std::size_t retained_total() const;
};

struct ScoringOptions {
    std::size_t kernel = 5;
    bool use_value_norm = true;
    /// Overrides the aggregation kind's default GQA reduction.
    std::optional<GroupReduce> group_reduce;
    /// Layer-wise normalization divides by the layer's summed value norms; when
    /// set, each kv-head is divided by its own sum instead.
    bool per_head_norm_divisor = false;
};

/// Keeps `sinks` leading entries and the most recent (B - sinks) entries of every head.
EvictionPlan streaming_llm_plan(std::size_t n_entries, std::size_t n_layers, std::size_t n_kv_heads,
                                const BudgetSpec& budget);

/// KV-level prefix scores of one head: pool, aggregate, optionally scale by value norms.
ScoreVector head_scores(const LayerObservation& obs, std::size_t kv_head, const ScoringOptions& options,
                        const AggregationSpec& agg);

/**
 * Retains each head's protected window and fills the rest of the budget with
 * the highest-scoring prefix entries, per head or jointly per layer.
 */
EvictionPlan scored_plan(std::span<const LayerObservation> layers, const BudgetSpec& budget,
                         const ScoringOptions& options, const AggregationSpec& agg);

/**
 * Defensive scores scaled by value norms and divided by the layer's total
 * value-norm mass, then one top-k across every (layer, head, entry) candidate.
 */
EvictionPlan layer_defensive_plan(std::span<const LayerObservation> layers, const BudgetSpec& budget,
                                  const ScoringOptions& options,
                                  const AggregationSpec& agg = AggregationSpec::defensive());

/**
 * One top-k over the prefix candidates of all heads in a layer, ordered by
 * (score desc, head asc, index asc). Each head also keeps its window
 * [n_entries - window, n_entries). Returns the retained set of every head.
 */
std::vector<IndexList> per_layer_joint_select(std::span<const ScoreVector> head_prefix_scores,
                                              std::size_t layer_budget, std::size_t window,
                                              std::size_t n_entries);

/// Joint selection across layers, ordered by (score desc, layer, head, index asc).
std::vector<std::vector<IndexList>> global_joint_select(
    const std::vector<std::vector<ScoreVector>>& prefix_scores, std::size_t total_budget,
    std::size_t window, std::size_t n_entries);

/// Compacted copy of the cache holding only retained rows, in original order.
KVCache apply_plan(const KVCache& cache, const EvictionPlan& plan);

enum class PolicyKind { streaming, snapkv, criticalkv, adakv, adakv_defensive, defensivekv, layer_defensivekv };

PolicyKind parse_policy(const std::string& name);
std::string policy_name(PolicyKind kind);
std::vector<PolicyKind> all_policies();

/// True for policies whose aggregation is defensive (and so accept an ablation override).
bool is_defensive_policy(PolicyKind kind);

struct PolicyOptions {
    double fraction = 0.2;
    std::size_t window = 32;
    std::size_t kernel = 5;
    std::size_t sinks = 4;
    /// Replaces defensive aggregation (worst-only or fixed threshold ablations).
    std::optional<AggregationSpec> ablation;
    bool per_head_norm_divisor = false;
};

/// Builds the named preset's plan. Scope, scoring and aggregation follow the preset.
EvictionPlan make_plan(PolicyKind kind, std::span<const LayerObservation> layers, const PolicyOptions& options);

}  // namespace kvlab
