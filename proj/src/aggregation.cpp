// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/aggregation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "kvlab/error.hpp"

namespace kvlab {

namespace {

double parse_double(const std::string& text, const std::string& what) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    require(ec == std::errc() && ptr == last && !text.empty(), "invalid " + what + ": '" + text + "'");
    return value;
}

std::size_t parse_index(const std::string& text, const std::string& what) {
    std::size_t value = 0;
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), last, value);
    require(ec == std::errc() && ptr == last && !text.empty(), "invalid " + what + ": '" + text + "'");
    return value;
}

}  // namespace

AggregationSpec AggregationSpec::parse(const std::string& text) {
    if (text == "mean") return mean();
    if (text == "defensive") return defensive();
    if (text == "worst-only" || text == "worst_case_only") return worst_case_only();
    if (text.rfind("single:", 0) == 0) {
        return single_token(parse_index(text.substr(7), "single-token index"));
    }
    if (text.rfind("fixed:", 0) == 0) {
        const double tau = parse_double(text.substr(6), "fixed threshold");
        require(tau > 0.0, "fixed threshold must be > 0");
        return fixed_threshold(tau);
    }
    throw ContractError("unknown aggregation '" + text + "'");
}

std::string AggregationSpec::label() const {
    switch (kind) {
        case AggregationKind::mean:
            return "mean";
        case AggregationKind::worst_case_only:
            return "worst_only";
        case AggregationKind::defensive:
            return "defensive";
        case AggregationKind::single_token:
            return "single" + std::to_string(token);
        case AggregationKind::fixed_threshold: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "fixed%.0e", threshold);
            return buf;
        }
    }
    return "unknown";
}

void AggregationSpec::validate(std::size_t m) const {
    if (kind == AggregationKind::single_token) {
        require(token >= 1 && token <= m, "single-token index " + std::to_string(token) +
                                              " outside observation window 1.." + std::to_string(m));
    }
    if (kind == AggregationKind::fixed_threshold) {
        require(threshold > 0.0, "fixed threshold must be > 0");
    }
}

GroupReduce AggregationSpec::default_group_reduce() const {
    switch (kind) {
        case AggregationKind::mean:
        case AggregationKind::single_token:
            return GroupReduce::mean;
        default:
            return GroupReduce::max;
    }
}

ScoreVector mean_aggregate(const Matrix& importance) {
    require(!importance.empty(), "mean_aggregate: empty importance matrix");
    ScoreVector out(importance.cols(), 0.0);
    for (std::size_t j = 0; j < importance.rows(); ++j) {
        auto row = importance.row(j);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += row[i];
        }
    }
    const double m = static_cast<double>(importance.rows());
    for (double& x : out) {
        x /= m;
    }
    return out;
}

ScoreVector worst_case_estimate(const Matrix& importance) {
    require(!importance.empty(), "worst_case_estimate: empty importance matrix");
    auto first = importance.row(0);
    ScoreVector out(first.begin(), first.end());
    for (std::size_t j = 1; j < importance.rows(); ++j) {
        auto row = importance.row(j);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = row[i] > out[i] ? row[i] : out[i];
        }
    }
    return out;
}

ScoreVector prior_risk_correct(std::span<const double> worst_case) {
    require(!worst_case.empty(), "prior_risk_correct: empty input");
    double sum = 0.0;
    for (double x : worst_case) {
        sum += x;
    }
    return fixed_threshold_correct(worst_case, sum / static_cast<double>(worst_case.size()));
}

ScoreVector fixed_threshold_correct(std::span<const double> worst_case, double tau) {
    ScoreVector out(worst_case.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = worst_case[i] > tau ? worst_case[i] : tau;
    }
    return out;
}

ScoreVector defensive_aggregate(const Matrix& importance) {
    return prior_risk_correct(worst_case_estimate(importance));
}

ScoreVector single_token_scores(const Matrix& importance, std::size_t j) {
    require(j >= 1 && j <= importance.rows(), "single_token_scores: index " + std::to_string(j) +
                                                  " outside 1.." + std::to_string(importance.rows()));
    auto row = importance.row(j - 1);
    return {row.begin(), row.end()};
}

std::vector<ScoreVector> gqa_group_reduce(std::span<const ScoreVector> per_q_head, std::size_t group_size,
                                          GroupReduce mode) {
    require(group_size >= 1, "gqa_group_reduce: group size must be >= 1");
    require(!per_q_head.empty() && per_q_head.size() % group_size == 0,
            "gqa_group_reduce: head count " + std::to_string(per_q_head.size()) +
                " not divisible by group size " + std::to_string(group_size));
    const std::size_t len = per_q_head.front().size();
    for (const auto& v : per_q_head) {
        require(v.size() == len, "gqa_group_reduce: inconsistent vector lengths");
    }
    std::vector<ScoreVector> out;
    for (std::size_t first = 0; first < per_q_head.size(); first += group_size) {
        ScoreVector acc = per_q_head[first];
        for (std::size_t h = first + 1; h < first + group_size; ++h) {
            for (std::size_t i = 0; i < len; ++i) {
                if (mode == GroupReduce::max) {
                    acc[i] = per_q_head[h][i] > acc[i] ? per_q_head[h][i] : acc[i];
                } else {
                    acc[i] += per_q_head[h][i];
                }
            }
        }
        if (mode == GroupReduce::mean) {
            for (double& x : acc) {
                x /= static_cast<double>(group_size);
            }
        }
        out.push_back(std::move(acc));
    }
    return out;
}

ScoreVector aggregate_group(std::span<const Matrix> group, const AggregationSpec& spec,
                            std::optional<GroupReduce> reduce) {
    require(!group.empty(), "aggregate_group: empty group");
    spec.validate(group.front().rows());
    const GroupReduce mode = reduce.value_or(spec.default_group_reduce());
    std::vector<ScoreVector> per_head;
    per_head.reserve(group.size());
    for (const Matrix& importance : group) {
        switch (spec.kind) {
            case AggregationKind::mean:
                per_head.push_back(mean_aggregate(importance));
                break;
            case AggregationKind::single_token:
                per_head.push_back(single_token_scores(importance, spec.token));
                break;
            default:
                per_head.push_back(worst_case_estimate(importance));
                break;
        }
    }
    ScoreVector reduced = gqa_group_reduce(per_head, group.size(), mode).front();
    switch (spec.kind) {
        case AggregationKind::defensive:
            return prior_risk_correct(reduced);
        case AggregationKind::fixed_threshold:
            return fixed_threshold_correct(reduced, spec.threshold);
        default:
            return reduced;
    }
}

}  // namespace kvlab
