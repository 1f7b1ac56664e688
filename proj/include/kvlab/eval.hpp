// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kvlab/aggregation.hpp"
#include "kvlab/attention.hpp"
#include "kvlab/importance_dump.hpp"
#include "kvlab/policy.hpp"
#include "kvlab/scoring.hpp"

namespace kvlab {

/// Full-cache importance of every prompt entry for every generated token.
struct FutureImportance {
    std::size_t n_layers = 0;
    std::size_t n_q_heads = 0;
    std::size_t group_size = 1;
    std::size_t n_entries = 0;
    std::size_t n_steps = 0;
    std::vector<std::vector<Matrix>> values;  // [layer][q-head], n_steps x n_entries
};

/**
 * I_{t,i} = A_{t,i} * ||v_i W_O(q-head slice)|| from the full-cache attention
 * of each generated token over the prompt entries. With raw_attention the
 * norm factor is dropped.
 */
FutureImportance future_importance(const RawTrace& trace, bool raw_attention = false);

/// Rows after the first `window` rows of a dump.
FutureImportance future_importance(const ImportanceDump& dump, std::size_t window);

struct RatioSeries {
    std::vector<double> ratio;
    /// Steps whose total importance was zero; their ratio is defined as 1.
    std::vector<std::size_t> zero_mass_steps;
};

/// Retained share of each step's importance, summed over all q-heads of the layer.
RatioSeries retained_ratio_series(const FutureImportance& fi, const EvictionPlan& plan, std::size_t layer);

/// Same ratio for one q-head.
RatioSeries retained_ratio_series_head(const FutureImportance& fi, const EvictionPlan& plan, std::size_t layer,
                                       std::size_t q_head);

/// Observation window and future importance of one trace, the input to every experiment.
struct ImportanceSource {
    std::string name;
    std::vector<LayerObservation> observation;
    FutureImportance future;
};

ImportanceSource make_source(const RawTrace& trace, std::size_t window, bool raw_attention = false);
ImportanceSource make_source(const ImportanceDump& dump, std::size_t window);

struct FragilityOptions {
    double budget = 0.5;
    std::size_t kernel = 5;
    double threshold = 0.5;
    bool use_value_norm = true;
};

struct FragilityReport {
    AggregationSpec criterion;
    std::string label;
    std::size_t layer = 0;
    RatioSeries series;
    double worst = 1.0;
    double mean = 1.0;
    std::size_t outliers = 0;
    double threshold = 0.5;
};

/// Worst, mean and outlier count (steps strictly below threshold) of a series.
FragilityReport summarize(const AggregationSpec& criterion, std::size_t layer, RatioSeries series,
                          double threshold);

/**
 * Builds one per-head plan per criterion from the observation window at the
 * given budget and tracks the retained-importance ratio of one layer.
 */
std::vector<FragilityReport> fragility_analysis(const ImportanceSource& source, std::size_t layer,
                                                std::span<const AggregationSpec> criteria,
                                                const FragilityOptions& options = {});

/// Same analysis for every layer of the source.
std::vector<std::vector<FragilityReport>> fragility_all_layers(const ImportanceSource& source,
                                                               std::span<const AggregationSpec> criteria,
                                                               const FragilityOptions& options = {});

struct CompareOptions {
    std::size_t kernel = 5;
    std::size_t sinks = 4;
    double threshold = 0.5;
};

struct CompareRow {
    std::string policy;
    double budget = 0.0;
    double mean_ratio = 0.0;
    double worst_ratio = 1.0;
    std::size_t outliers = 0;
    std::size_t retained_entries = 0;
    std::size_t steps = 0;
};

/**
 * One row per (policy, budget) in the given order. Ratios cover every layer
 * and step of every source; retained_entries sums over sources.
 */
std::vector<CompareRow> compare_policies(std::span<const ImportanceSource> sources,
                                         std::span<const PolicyKind> policies, std::span<const double> budgets,
                                         const CompareOptions& options = {});

}  // namespace kvlab
