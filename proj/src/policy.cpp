// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvlab/error.hpp"

namespace kvlab {

std::string scope_name(BudgetScope scope) {
    switch (scope) {
        case BudgetScope::per_head:
            return "per_head";
        case BudgetScope::per_layer_joint:
            return "per_layer_joint";
        case BudgetScope::global_joint:
            return "global_joint";
    }
    return "unknown";
}

void BudgetSpec::validate() const {
    require(fraction.has_value() != absolute_per_layer.has_value(),
            "BudgetSpec: exactly one of fraction or absolute_per_layer must be set");
    if (fraction) {
        require(*fraction > 0.0 && *fraction <= 1.0, "BudgetSpec: fraction must be in (0, 1]");
    }
    require(window >= 1, "BudgetSpec: window must be >= 1");
}

std::size_t budget_entries(double fraction, std::size_t n) {
    require(fraction > 0.0 && fraction <= 1.0, "budget_entries: fraction must be in (0, 1]");
    const double exact = fraction * static_cast<double>(n);
    return std::min(n, static_cast<std::size_t>(std::ceil(exact - 1e-9)));
}

std::size_t unit_budget(const BudgetSpec& budget, std::size_t n_entries, std::size_t n_kv_heads,
                        std::size_t n_layers) {
    budget.validate();
    std::size_t per_unit_entries = n_entries;
    if (budget.scope == BudgetScope::per_layer_joint) {
        per_unit_entries = n_entries * n_kv_heads;
    } else if (budget.scope == BudgetScope::global_joint) {
        per_unit_entries = n_entries * n_kv_heads * n_layers;
    }
    if (budget.fraction) {
        return budget_entries(*budget.fraction, per_unit_entries);
    }
    const std::size_t per_layer = *budget.absolute_per_layer;
    switch (budget.scope) {
        case BudgetScope::per_head:
            return per_layer / n_kv_heads;
        case BudgetScope::per_layer_joint:
            return per_layer;
        case BudgetScope::global_joint:
            return per_layer * n_layers;
    }
    return per_layer;
}

bool EvictionPlan::covers(std::size_t layer) const {
    return std::any_of(layers.begin(), layers.end(), [&](const LayerPlan& p) { return p.layer == layer; });
}

const LayerPlan& EvictionPlan::layer_plan(std::size_t layer) const {
    if (layer < layers.size() && layers[layer].layer == layer) {
        return layers[layer];
    }
    for (const auto& p : layers) {
        if (p.layer == layer) {
            return p;
        }
    }
    throw ContractError("plan does not cover layer " + std::to_string(layer));
}

const IndexList& EvictionPlan::retained(std::size_t layer, std::size_t kv_head) const {
    return layer_plan(layer).heads.at(kv_head).retained;
}

std::size_t EvictionPlan::retained_in_layer(std::size_t layer) const {
    std::size_t total = 0;
    for (const auto& head : layer_plan(layer).heads) {
        total += head.retained.size();
    }
    return total;
}

std::size_t EvictionPlan::retained_total() const {
    std::size_t total = 0;
    for (const auto& layer : layers) {
        for (const auto& head : layer.heads) {
            total += head.retained.size();
        }
    }
    return total;
}

namespace {

IndexList range(std::size_t first, std::size_t last) {
    IndexList out(last - first);
    std::iota(out.begin(), out.end(), first);
    return out;
}

IndexList merge_window(IndexList selected, std::size_t window, std::size_t n_entries) {
    for (std::size_t i = n_entries - window; i < n_entries; ++i) {
        selected.push_back(i);
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

struct Candidate {
    double score;
    std::uint32_t layer;
    std::uint32_t head;
    std::uint32_t index;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.head != b.head) return a.head < b.head;
    return a.index < b.index;
}

void keep_top(std::vector<Candidate>& candidates, std::size_t k) {
    if (k < candidates.size()) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                         candidates.end(), candidate_before);
        candidates.resize(k);
    }
}

// Per-head retained set for budget B. Window is min(window, n).
IndexList select_head(std::span<const double> prefix_scores, std::size_t budget, std::size_t window,
                      std::size_t n_entries, bool& clamped) {
    if (budget >= n_entries) {
        return range(0, n_entries);
    }
    if (budget < window) {
        clamped = true;
        return range(n_entries - budget, n_entries);
    }
    require(prefix_scores.size() == n_entries - window, "select_head: score length does not match prefix");
    return merge_window(top_k_indices(prefix_scores, budget - window), window, n_entries);
}

LayerPlan layer_plan_from(std::size_t layer, std::vector<IndexList> retained) {
    LayerPlan plan{layer, {}};
    for (std::size_t h = 0; h < retained.size(); ++h) {
        plan.heads.push_back({h, std::move(retained[h])});
    }
    return plan;
}

void check_layers(std::span<const LayerObservation> layers) {
    require(!layers.empty(), "policy: no layers observed");
    for (const auto& obs : layers) {
        require(obs.n_entries == layers.front().n_entries, "policy: layers differ in entry count");
        require(obs.n_kv_heads == layers.front().n_kv_heads, "policy: layers differ in kv-head count");
    }
}

}  // namespace

EvictionPlan streaming_llm_plan(std::size_t n_entries, std::size_t n_layers, std::size_t n_kv_heads,
                                const BudgetSpec& budget) {
    require(n_entries >= 1 && n_layers >= 1 && n_kv_heads >= 1, "streaming_llm_plan: empty cache shape");
    BudgetSpec spec = budget;
    spec.scope = BudgetScope::per_head;
    const std::size_t b = unit_budget(spec, n_entries, n_kv_heads, n_layers);
    require(b >= spec.sinks, "streaming_llm_plan: budget " + std::to_string(b) + " below " +
                                 std::to_string(spec.sinks) + " sink tokens");
    IndexList retained;
    if (b >= n_entries) {
        retained = range(0, n_entries);
    } else {
        retained = range(0, spec.sinks);
        for (std::size_t i = n_entries - (b - spec.sinks); i < n_entries; ++i) {
            retained.push_back(i);
        }
    }
    EvictionPlan plan;
    plan.policy = "streaming";
    plan.budget = spec;
    plan.unit_budget = b;
    plan.n_entries = n_entries;
    plan.notes.push_back("window ignored for streaming; recency side holds " +
                         std::to_string(std::min(b, n_entries) - std::min(b, spec.sinks)) + " entries");
    for (std::size_t l = 0; l < n_layers; ++l) {
        plan.layers.push_back(layer_plan_from(l, std::vector<IndexList>(n_kv_heads, retained)));
    }
    return plan;
}

ScoreVector head_scores(const LayerObservation& obs, std::size_t kv_head, const ScoringOptions& options,
                        const AggregationSpec& agg) {
    require(kv_head < obs.n_kv_heads, "head_scores: kv head out of range");
    if (obs.prefix() == 0) {
        return {};
    }
    std::vector<Matrix> pooled;
    for (std::size_t h = kv_head * obs.group_size; h < (kv_head + 1) * obs.group_size; ++h) {
        pooled.push_back(pool_importance(obs.attention.at(h), options.kernel).values);
    }
    ScoreVector scores = aggregate_group(pooled, agg, options.group_reduce);
    if (options.use_value_norm) {
        scores = scale_scores(scores, group_value_norms(obs, kv_head));
    }
    return scores;
}

std::vector<IndexList> per_layer_joint_select(std::span<const ScoreVector> head_prefix_scores,
                                              std::size_t layer_budget, std::size_t window,
                                              std::size_t n_entries) {
    const std::size_t heads = head_prefix_scores.size();
    require(heads >= 1, "per_layer_joint_select: no heads");
    window = std::min(window, n_entries);
    require(layer_budget >= heads * window,
            "per_layer_joint_select: layer budget " + std::to_string(layer_budget) + " below " +
                std::to_string(heads) + " heads x window " + std::to_string(window));
    if (layer_budget >= heads * n_entries) {
        return std::vector<IndexList>(heads, range(0, n_entries));
    }
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < heads; ++h) {
        require(head_prefix_scores[h].size() == n_entries - window,
                "per_layer_joint_select: score length does not match prefix");
        for (std::size_t i = 0; i < head_prefix_scores[h].size(); ++i) {
            candidates.push_back({head_prefix_scores[h][i], 0, static_cast<std::uint32_t>(h),
                                  static_cast<std::uint32_t>(i)});
        }
    }
    keep_top(candidates, layer_budget - heads * window);
    std::vector<IndexList> selected(heads);
    for (const auto& c : candidates) {
        selected[c.head].push_back(c.index);
    }
    for (auto& s : selected) {
        s = merge_window(std::move(s), window, n_entries);
    }
    return selected;
}

std::vector<std::vector<IndexList>> global_joint_select(
    const std::vector<std::vector<ScoreVector>>& prefix_scores, std::size_t total_budget,
    std::size_t window, std::size_t n_entries) {
    require(!prefix_scores.empty(), "global_joint_select: no layers");
    window = std::min(window, n_entries);
    std::size_t heads_total = 0;
    for (const auto& layer : prefix_scores) {
        heads_total += layer.size();
    }
    require(total_budget >= heads_total * window,
            "global_joint_select: budget " + std::to_string(total_budget) + " below the " +
                std::to_string(heads_total * window) + " protected window entries");
    std::vector<std::vector<IndexList>> out(prefix_scores.size());
    if (total_budget >= heads_total * n_entries) {
        for (std::size_t l = 0; l < prefix_scores.size(); ++l) {
            out[l].assign(prefix_scores[l].size(), range(0, n_entries));
        }
        return out;
    }
    std::vector<Candidate> candidates;
    for (std::size_t l = 0; l < prefix_scores.size(); ++l) {
        for (std::size_t h = 0; h < prefix_scores[l].size(); ++h) {
            const auto& scores = prefix_scores[l][h];
            require(scores.size() == n_entries - window, "global_joint_select: score length does not match prefix");
            for (std::size_t i = 0; i < scores.size(); ++i) {
                candidates.push_back({scores[i], static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(h),
                                      static_cast<std::uint32_t>(i)});
            }
        }
    }
    keep_top(candidates, total_budget - heads_total * window);
    for (std::size_t l = 0; l < prefix_scores.size(); ++l) {
        out[l].resize(prefix_scores[l].size());
    }
    for (const auto& c : candidates) {
        out[c.layer][c.head].push_back(c.index);
    }
    for (auto& layer : out) {
        for (auto& s : layer) {
            s = merge_window(std::move(s), window, n_entries);
        }
    }
    return out;
}

EvictionPlan scored_plan(std::span<const LayerObservation> layers, const BudgetSpec& budget,
                         const ScoringOptions& options, const AggregationSpec& agg) {
    check_layers(layers);
    require(budget.scope != BudgetScope::global_joint,
            "scored_plan: global joint selection is provided by layer_defensive_plan");
    const auto& first = layers.front();
    const std::size_t n = first.n_entries;
    if (first.prefix() > 0) {
        agg.validate(first.attention.front().m());
    }
    EvictionPlan plan;
    plan.budget = budget;
    plan.n_entries = n;
    plan.unit_budget = unit_budget(budget, n, first.n_kv_heads, layers.size());
    for (const auto& obs : layers) {
        std::vector<ScoreVector> scores;
        for (std::size_t g = 0; g < obs.n_kv_heads; ++g) {
            scores.push_back(head_scores(obs, g, options, agg));
        }
        std::vector<IndexList> retained;
        if (budget.scope == BudgetScope::per_head) {
            for (const auto& s : scores) {
                retained.push_back(select_head(s, plan.unit_budget, obs.window, n, plan.clamped));
            }
        } else {
            retained = per_layer_joint_select(scores, plan.unit_budget, obs.window, n);
        }
        plan.layers.push_back(layer_plan_from(obs.layer, std::move(retained)));
    }
    if (plan.clamped) {
        plan.notes.push_back("budget below window: kept only the most recent " +
                             std::to_string(plan.unit_budget) + " entries per head");
    }
    return plan;
}

EvictionPlan layer_defensive_plan(std::span<const LayerObservation> layers, const BudgetSpec& budget,
                                  const ScoringOptions& options, const AggregationSpec& agg) {
    check_layers(layers);
    const auto& first = layers.front();
    const std::size_t n = first.n_entries;
    BudgetSpec spec = budget;
    spec.scope = BudgetScope::global_joint;

    std::vector<std::vector<ScoreVector>> scores;
    for (const auto& obs : layers) {
        std::vector<ScoreVector> layer_scores;
        std::vector<double> head_mass;
        for (std::size_t g = 0; g < obs.n_kv_heads; ++g) {
            layer_scores.push_back(head_scores(obs, g, options, agg));
            double mass = 0.0;
            if (obs.prefix() > 0) {
                for (double w : group_value_norms(obs, g)) {
                    mass += w;
                }
            }
            head_mass.push_back(mass);
        }
        const double layer_mass = std::accumulate(head_mass.begin(), head_mass.end(), 0.0);
        for (std::size_t g = 0; g < layer_scores.size(); ++g) {
            const double divisor = options.per_head_norm_divisor ? head_mass[g] : layer_mass;
            if (divisor > 0.0) {
                for (double& x : layer_scores[g]) {
                    x /= divisor;
                }
            }
        }
        scores.push_back(std::move(layer_scores));
    }

    EvictionPlan plan;
    plan.policy = "layer-defensivekv";
    plan.budget = spec;
    plan.n_entries = n;
    plan.unit_budget = unit_budget(spec, n, first.n_kv_heads, layers.size());
    auto retained = global_joint_select(scores, plan.unit_budget, first.window, n);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        plan.layers.push_back(layer_plan_from(layers[l].layer, std::move(retained[l])));
    }
    return plan;
}

KVCache apply_plan(const KVCache& cache, const EvictionPlan& plan) {
    require(plan.layers.size() == cache.layers.size(), "apply_plan: plan and cache layer counts differ");
    KVCache out;
    out.layers.resize(cache.layers.size());
    for (std::size_t l = 0; l < cache.layers.size(); ++l) {
        const auto& layer_plan = plan.layer_plan(l);
        require(layer_plan.heads.size() == cache.layers[l].size(), "apply_plan: head count mismatch");
        for (std::size_t g = 0; g < cache.layers[l].size(); ++g) {
            const auto& kv = cache.layers[l][g];
            const auto& keep = layer_plan.heads[g].retained;
            out.layers[l].push_back({kv.k.gather_rows(keep), kv.v.gather_rows(keep)});
        }
    }
    return out;
}

PolicyKind parse_policy(const std::string& name) {
    for (PolicyKind kind : all_policies()) {
        if (policy_name(kind) == name) {
            return kind;
        }
    }
    throw ContractError("unknown policy '" + name + "'");
}

std::string policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::streaming:
            return "streaming";
        case PolicyKind::snapkv:
            return "snapkv";
        case PolicyKind::criticalkv:
            return "criticalkv";
        case PolicyKind::adakv:
            return "adakv";
        case PolicyKind::adakv_defensive:
            return "adakv-defensive";
        case PolicyKind::defensivekv:
            return "defensivekv";
        case PolicyKind::layer_defensivekv:
            return "layer-defensivekv";
    }
    return "unknown";
}

std::vector<PolicyKind> all_policies() {
    return {PolicyKind::streaming,       PolicyKind::snapkv,      PolicyKind::criticalkv,
            PolicyKind::adakv,           PolicyKind::adakv_defensive, PolicyKind::defensivekv,
            PolicyKind::layer_defensivekv};
}

bool is_defensive_policy(PolicyKind kind) {
    return kind == PolicyKind::adakv_defensive || kind == PolicyKind::defensivekv ||
           kind == PolicyKind::layer_defensivekv;
}

EvictionPlan make_plan(PolicyKind kind, std::span<const LayerObservation> layers, const PolicyOptions& options) {
    check_layers(layers);
    require(!options.ablation || is_defensive_policy(kind),
            "aggregation ablation applies only to defensive policies, not " + policy_name(kind));
    BudgetSpec budget;
    budget.fraction = options.fraction;
    budget.window = options.window;
    budget.sinks = options.sinks;

    const AggregationSpec defensive = options.ablation.value_or(AggregationSpec::defensive());
    ScoringOptions scoring;
    scoring.kernel = options.kernel;
    scoring.per_head_norm_divisor = options.per_head_norm_divisor;

    EvictionPlan plan;
    switch (kind) {
        case PolicyKind::streaming:
            plan = streaming_llm_plan(layers.front().n_entries, layers.size(), layers.front().n_kv_heads, budget);
            break;
        case PolicyKind::snapkv:
            scoring.use_value_norm = false;
            plan = scored_plan(layers, budget, scoring, AggregationSpec::mean());
            break;
        case PolicyKind::criticalkv:
            plan = scored_plan(layers, budget, scoring, AggregationSpec::mean());
            break;
        case PolicyKind::defensivekv:
            plan = scored_plan(layers, budget, scoring, defensive);
            break;
        case PolicyKind::adakv:
            scoring.use_value_norm = false;
            budget.scope = BudgetScope::per_layer_joint;
            plan = scored_plan(layers, budget, scoring, AggregationSpec::mean());
            break;
        case PolicyKind::adakv_defensive:
            scoring.use_value_norm = false;
            budget.scope = BudgetScope::per_layer_joint;
            plan = scored_plan(layers, budget, scoring, defensive);
            break;
        case PolicyKind::layer_defensivekv:
            plan = layer_defensive_plan(layers, budget, scoring, defensive);
            break;
    }
    plan.policy = policy_name(kind);
    if (options.ablation) {
        plan.notes.push_back("aggregation ablation: " + options.ablation->label());
    }
    return plan;
}

}  // namespace kvlab
