// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvlab/matrix.hpp"

namespace kvlab {

enum class AggregationKind { mean, worst_case_only, defensive, single_token, fixed_threshold };

enum class GroupReduce { max, mean };

/// How observations of one entry are folded into a single score.
struct AggregationSpec {
    AggregationKind kind = AggregationKind::defensive;
    std::size_t token = 0;   // single_token: 1-based historical token index
    double threshold = 0.0;  // fixed_threshold: constant floor replacing the adaptive prior

    static AggregationSpec mean() { return {AggregationKind::mean}; }
    static AggregationSpec worst_case_only() { return {AggregationKind::worst_case_only}; }
    static AggregationSpec defensive() { return {AggregationKind::defensive}; }
    static AggregationSpec single_token(std::size_t j) { return {AggregationKind::single_token, j}; }
    static AggregationSpec fixed_threshold(double tau) { return {AggregationKind::fixed_threshold, 0, tau}; }

    /// Parses "mean", "defensive", "worst-only", "single:J", "fixed:TAU".
    static AggregationSpec parse(const std::string& text);
    /// Short label used in report columns, e.g. "single16", "worst_only", "fixed1e-04".
    std::string label() const;

    /// Throws ContractError if the spec is malformed for a window of m observations.
    void validate(std::size_t m) const;
    /// Max for the worst-case family, mean for the averaging baselines.
    GroupReduce default_group_reduce() const;

    bool operator==(const AggregationSpec&) const = default;
};

/// S_i = (1/m) sum_j I_{j,i}
ScoreVector mean_aggregate(const Matrix& importance);

/// R~_i = max_j I_{j,i}
ScoreVector worst_case_estimate(const Matrix& importance);

/// R_i = max(R~_i, R-bar) with R-bar the mean of R~ over entries.
ScoreVector prior_risk_correct(std::span<const double> worst_case);

/// R_i = max(R~_i, tau)
ScoreVector fixed_threshold_correct(std::span<const double> worst_case, double tau);

/// Worst-case estimate followed by adaptive prior-risk correction.
ScoreVector defensive_aggregate(const Matrix& importance);

/// Row j (1-based) of the observation matrix.
ScoreVector single_token_scores(const Matrix& importance, std::size_t j);

/**
 * Folds consecutive groups of `group_size` q-head vectors into one vector per
 * kv-head with an elementwise max or mean.
 */
std::vector<ScoreVector> gqa_group_reduce(std::span<const ScoreVector> per_q_head, std::size_t group_size,
                                          GroupReduce mode);

/**
 * KV-level scores of one group from the observation matrices of its q-heads.
 * Per-q-head statistics are reduced across the group first; for the defensive
 * and fixed-threshold kinds the floor is applied after the reduction.
 */
ScoreVector aggregate_group(std::span<const Matrix> group, const AggregationSpec& spec,
                            std::optional<GroupReduce> reduce = std::nullopt);

}  // namespace kvlab
