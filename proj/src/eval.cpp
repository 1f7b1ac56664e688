// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/eval.hpp"

#include <algorithm>
#include <limits>

#include "kvlab/error.hpp"

namespace kvlab {

FutureImportance future_importance(const RawTrace& trace, bool raw_attention) {
    const auto& dims = trace.dims;
    require(dims.n_steps >= 1, "future_importance: trace has no decode steps");
    FutureImportance fi;
    fi.n_layers = dims.n_layers;
    fi.n_q_heads = dims.n_q_heads;
    fi.group_size = dims.group_size();
    fi.n_entries = dims.n_prompt;
    fi.n_steps = dims.n_steps;
    fi.values.resize(dims.n_layers);
    for (std::size_t l = 0; l < dims.n_layers; ++l) {
        const auto& lt = trace.layers[l];
        for (std::size_t h = 0; h < dims.n_q_heads; ++h) {
            ScoreVector norms(dims.n_prompt, 1.0);
            if (!raw_attention) {
                norms = value_norm_weights(lt.v[h / fi.group_size].slice_rows(0, dims.n_prompt),
                                           w_o_slice(lt.w_o, h, dims.d_h));
            }
            Matrix values(dims.n_steps, dims.n_prompt);
            for (std::size_t s = 0; s < dims.n_steps; ++s) {
                const std::size_t position = dims.n_prompt + s;
                const auto row = attention_row(trace, l, h, position, position);
                for (std::size_t i = 0; i < dims.n_prompt; ++i) {
                    values(s, i) = row[i] * norms[i];
                }
            }
            fi.values[l].push_back(std::move(values));
        }
    }
    return fi;
}

FutureImportance future_importance(const ImportanceDump& dump, std::size_t window) {
    require(dump.n_steps > window, "future_importance: dump has " + std::to_string(dump.n_steps) +
                                       " rows, none left after a window of " + std::to_string(window));
    FutureImportance fi;
    fi.n_layers = dump.n_layers;
    fi.n_q_heads = dump.n_q_heads;
    fi.group_size = 1;
    fi.n_entries = dump.n_entries;
    fi.n_steps = dump.n_steps - window;
    fi.values.resize(dump.n_layers);
    for (std::size_t l = 0; l < dump.n_layers; ++l) {
        for (std::size_t h = 0; h < dump.n_q_heads; ++h) {
            fi.values[l].push_back(dump.rows[l][h].slice_rows(window, fi.n_steps));
        }
    }
    return fi;
}

namespace {

void accumulate_head(const Matrix& values, const IndexList& retained, std::vector<double>& kept,
                     std::vector<double>& total) {
    for (std::size_t s = 0; s < values.rows(); ++s) {
        auto row = values.row(s);
        for (double x : row) {
            total[s] += x;
        }
        for (std::size_t i : retained) {
            kept[s] += row[i];
        }
    }
}

RatioSeries to_ratio(const std::vector<double>& kept, const std::vector<double>& total) {
    RatioSeries series;
    series.ratio.resize(kept.size());
    for (std::size_t s = 0; s < kept.size(); ++s) {
        if (total[s] > 0.0) {
            series.ratio[s] = std::clamp(kept[s] / total[s], 0.0, 1.0);
        } else {
            series.ratio[s] = 1.0;
            series.zero_mass_steps.push_back(s);
        }
    }
    return series;
}

void check_plan(const FutureImportance& fi, const EvictionPlan& plan, std::size_t layer) {
    require(layer < fi.n_layers, "retained_ratio_series: layer " + std::to_string(layer) + " out of range");
    require(plan.covers(layer), "retained_ratio_series: plan does not cover layer " + std::to_string(layer));
    const auto& layer_plan = plan.layer_plan(layer);
    require(layer_plan.heads.size() * fi.group_size == fi.n_q_heads,
            "retained_ratio_series: plan head count does not match the trace");
    for (const auto& head : layer_plan.heads) {
        for (std::size_t i : head.retained) {
            require(i < fi.n_entries, "retained_ratio_series: retained index out of range");
        }
    }
}

}  // namespace

RatioSeries retained_ratio_series(const FutureImportance& fi, const EvictionPlan& plan, std::size_t layer) {
    check_plan(fi, plan, layer);
    std::vector<double> kept(fi.n_steps, 0.0);
    std::vector<double> total(fi.n_steps, 0.0);
    for (std::size_t h = 0; h < fi.n_q_heads; ++h) {
        accumulate_head(fi.values[layer][h], plan.retained(layer, h / fi.group_size), kept, total);
    }
    return to_ratio(kept, total);
}

RatioSeries retained_ratio_series_head(const FutureImportance& fi, const EvictionPlan& plan, std::size_t layer,
                                       std::size_t q_head) {
    check_plan(fi, plan, layer);
    require(q_head < fi.n_q_heads, "retained_ratio_series_head: head out of range");
    std::vector<double> kept(fi.n_steps, 0.0);
    std::vector<double> total(fi.n_steps, 0.0);
    accumulate_head(fi.values[layer][q_head], plan.retained(layer, q_head / fi.group_size), kept, total);
    return to_ratio(kept, total);
}

ImportanceSource make_source(const RawTrace& trace, std::size_t window, bool raw_attention) {
    return {"", observe(trace, window), future_importance(trace, raw_attention)};
}

ImportanceSource make_source(const ImportanceDump& dump, std::size_t window) {
    return {"", observe(dump, window), future_importance(dump, window)};
}

FragilityReport summarize(const AggregationSpec& criterion, std::size_t layer, RatioSeries series,
                          double threshold) {
    FragilityReport report;
    report.criterion = criterion;
    report.label = criterion.label();
    report.layer = layer;
    report.threshold = threshold;
    if (!series.ratio.empty()) {
        double sum = 0.0;
        report.worst = std::numeric_limits<double>::infinity();
        for (double r : series.ratio) {
            sum += r;
            report.worst = std::min(report.worst, r);
            report.outliers += r < threshold ? 1 : 0;
        }
        report.mean = sum / static_cast<double>(series.ratio.size());
    }
    report.series = std::move(series);
    return report;
}

std::vector<FragilityReport> fragility_analysis(const ImportanceSource& source, std::size_t layer,
                                                std::span<const AggregationSpec> criteria,
                                                const FragilityOptions& options) {
    require(layer < source.observation.size(), "fragility_analysis: layer " + std::to_string(layer) +
                                                   " out of range (" + std::to_string(source.observation.size()) +
                                                   " layers)");
    BudgetSpec budget;
    budget.fraction = options.budget;
    budget.window = source.observation.front().window;
    budget.scope = BudgetScope::per_head;
    ScoringOptions scoring;
    scoring.kernel = options.kernel;
    scoring.use_value_norm = options.use_value_norm;

    const std::span<const LayerObservation> only(&source.observation[layer], 1);
    std::vector<FragilityReport> reports;
    for (const auto& criterion : criteria) {
        const EvictionPlan plan = scored_plan(only, budget, scoring, criterion);
        reports.push_back(summarize(criterion, layer, retained_ratio_series(source.future, plan, layer),
                                    options.threshold));
    }
    return reports;
}

std::vector<std::vector<FragilityReport>> fragility_all_layers(const ImportanceSource& source,
                                                               std::span<const AggregationSpec> criteria,
                                                               const FragilityOptions& options) {
    std::vector<std::vector<FragilityReport>> out;
    for (std::size_t l = 0; l < source.observation.size(); ++l) {
        out.push_back(fragility_analysis(source, l, criteria, options));
    }
    return out;
}

std::vector<CompareRow> compare_policies(std::span<const ImportanceSource> sources,
                                         std::span<const PolicyKind> policies, std::span<const double> budgets,
                                         const CompareOptions& options) {
    require(!sources.empty() && !policies.empty() && !budgets.empty(), "compare_policies: empty input");
    std::vector<CompareRow> rows;
    for (PolicyKind kind : policies) {
        for (double fraction : budgets) {
            CompareRow row;
            row.policy = policy_name(kind);
            row.budget = fraction;
            double sum = 0.0;
            for (const auto& source : sources) {
                PolicyOptions po;
                po.fraction = fraction;
                po.window = source.observation.front().window;
                po.kernel = options.kernel;
                po.sinks = options.sinks;
                const EvictionPlan plan = make_plan(kind, source.observation, po);
                row.retained_entries += plan.retained_total();
                for (std::size_t l = 0; l < source.future.n_layers; ++l) {
                    for (double r : retained_ratio_series(source.future, plan, l).ratio) {
                        sum += r;
                        row.worst_ratio = std::min(row.worst_ratio, r);
                        row.outliers += r < options.threshold ? 1 : 0;
                        ++row.steps;
                    }
                }
            }
            row.mean_ratio = row.steps > 0 ? sum / static_cast<double>(row.steps) : 1.0;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace kvlab
