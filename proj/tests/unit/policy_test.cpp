// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvlab/error.hpp"
#include "kvlab/policy.hpp"
#include "test_util.hpp"

namespace kvlab {
namespace {

using testing::Rng;

IndexList iota_list(std::size_t first, std::size_t last) {
    IndexList out(last - first);
    std::iota(out.begin(), out.end(), first);
    return out;
}

// Observation of one layer with group size 1 and the given per-head matrices over the prefix.
LayerObservation make_obs(std::size_t layer, std::vector<Matrix> attention, std::size_t window,
                          std::vector<ScoreVector> norms = {}) {
    LayerObservation obs;
    obs.layer = layer;
    obs.window = window;
    obs.n_entries = attention.front().cols() + window;
    obs.n_kv_heads = attention.size();
    obs.group_size = 1;
    for (std::size_t h = 0; h < attention.size(); ++h) {
        obs.attention.push_back({std::move(attention[h]), layer, h});
        obs.value_norms.push_back(norms.empty() ? ScoreVector(obs.n_entries, 1.0) : norms[h]);
    }
    return obs;
}

BudgetSpec fraction_budget(double f, std::size_t window, BudgetScope scope = BudgetScope::per_head) {
    BudgetSpec b;
    b.fraction = f;
    b.window = window;
    b.scope = scope;
    return b;
}

ScoringOptions plain_scoring(std::size_t kernel = 1, bool norms = false) {
    ScoringOptions o;
    o.kernel = kernel;
    o.use_value_norm = norms;
    return o;
}

TEST(BudgetTest, CeilingWithRepresentationSlack) {
    EXPECT_EQ(budget_entries(0.2, 256), 52u);
    EXPECT_EQ(budget_entries(0.5, 256), 128u);
    EXPECT_EQ(budget_entries(0.1, 10), 1u);
    EXPECT_EQ(budget_entries(0.3, 10), 3u);
    EXPECT_EQ(budget_entries(0.06, 256), 16u);
    EXPECT_EQ(budget_entries(1.0, 7), 7u);
    EXPECT_THROW(budget_entries(0.0, 7), ContractError);
    EXPECT_THROW(budget_entries(1.5, 7), ContractError);
}

TEST(BudgetTest, UnitBudgetPerScope) {
    BudgetSpec b = fraction_budget(0.2, 32);
    EXPECT_EQ(unit_budget(b, 256, 2, 4), 52u);
    b.scope = BudgetScope::per_layer_joint;
    EXPECT_EQ(unit_budget(b, 256, 2, 4), 103u);
    b.scope = BudgetScope::global_joint;
    EXPECT_EQ(unit_budget(b, 256, 2, 4), 410u);
    BudgetSpec abs;
    abs.fraction.reset();
    abs.absolute_per_layer = 101;
    EXPECT_EQ(unit_budget(abs, 256, 2, 4), 50u);
    BudgetSpec both = abs;
    both.fraction = 0.5;
    EXPECT_THROW(both.validate(), ContractError);
}

TEST(StreamingTest, SinksPlusRecent) {
    BudgetSpec b = fraction_budget(0.6, 32);
    auto plan = streaming_llm_plan(10, 1, 1, b);
    EXPECT_EQ(plan.retained(0, 0), (IndexList{0, 1, 2, 3, 8, 9}));
    b.fraction = 0.2;
    plan = streaming_llm_plan(100, 2, 2, b);
    IndexList want = {0, 1, 2, 3};
    for (std::size_t i = 84; i < 100; ++i) {
        want.push_back(i);
    }
    EXPECT_EQ(plan.retained(1, 1), want);
    b.fraction = 1.0;
    EXPECT_EQ(streaming_llm_plan(10, 1, 1, b).retained(0, 0), iota_list(0, 10));
    b.fraction = 0.1;
    EXPECT_THROW(streaming_llm_plan(10, 1, 1, b), ContractError);
}

TEST(ScoredPlanTest, FullBudgetKeepsEverything) {
    Rng rng(1);
    const auto obs = make_obs(0, {testing::random_importance(rng, 8, 40)}, 8);
    const auto plan = scored_plan(std::span(&obs, 1), fraction_budget(1.0, 8), plain_scoring(5),
                                  AggregationSpec::defensive());
    EXPECT_EQ(plan.retained(0, 0), iota_list(0, 48));
}

TEST(ScoredPlanTest, BoundaryTieKeepsLowerIndex) {
    // Entries 1 and 3 tie for the last discretionary slot.
    const auto obs = make_obs(0, {Matrix::from_rows({{0.1, 0.5, 0.9, 0.5, 0.2}})}, 1);
    BudgetSpec b;
    b.fraction.reset();
    b.absolute_per_layer = 3;
    b.window = 1;
    const auto plan = scored_plan(std::span(&obs, 1), b, plain_scoring(), AggregationSpec::mean());
    EXPECT_EQ(plan.retained(0, 0), (IndexList{1, 2, 5}));
}

Matrix spike_matrix(std::size_t rows, std::size_t prefix, std::size_t spike, std::size_t spike_row,
                    double background) {
    Matrix m(rows, prefix, background);
    m(spike_row, spike) = 1.0;
    return m;
}

TEST(ScoredPlanTest, IsolatedSpikeSurvivesDefensiveAggregation) {
    // One entry peaks at 1.0 in one of 32 rows; every other cell is 0.01.
    const std::size_t prefix = 64;
    const auto obs = make_obs(0, {spike_matrix(32, prefix, 40, 7, 0.01)}, 32);
    BudgetSpec b;
    b.fraction.reset();
    b.absolute_per_layer = 32 + prefix / 2;
    b.window = 32;
    const auto def = scored_plan(std::span(&obs, 1), b, plain_scoring(), AggregationSpec::defensive());
    const auto& kept = def.retained(0, 0);
    EXPECT_TRUE(std::binary_search(kept.begin(), kept.end(), 40u));
    // With a flat background the spike's mean (1 + 31 * 0.01) / 32 also tops the ranking.
    const auto mean = scored_plan(std::span(&obs, 1), b, plain_scoring(), AggregationSpec::mean());
    EXPECT_TRUE(std::binary_search(mean.retained(0, 0).begin(), mean.retained(0, 0).end(), 40u));
}

TEST(ScoredPlanTest, SpikeBehindSteadyBlockIsEvictedByMean) {
    // Half the prefix is rated 0.05 by every row; the spike beats it only in its worst case.
    const std::size_t prefix = 64;
    Matrix m = spike_matrix(32, prefix, 50, 7, 0.01);
    for (std::size_t j = 0; j < 32; ++j) {
        for (std::size_t i = 0; i < prefix / 2; ++i) {
            m(j, i) = 0.05;
        }
    }
    const auto obs = make_obs(0, {m}, 32);
    BudgetSpec b;
    b.fraction.reset();
    b.absolute_per_layer = 32 + prefix / 2;
    b.window = 32;
    const auto def = scored_plan(std::span(&obs, 1), b, plain_scoring(), AggregationSpec::defensive());
    const auto mean = scored_plan(std::span(&obs, 1), b, plain_scoring(), AggregationSpec::mean());
    EXPECT_TRUE(std::binary_search(def.retained(0, 0).begin(), def.retained(0, 0).end(), 50u));
    EXPECT_FALSE(std::binary_search(mean.retained(0, 0).begin(), mean.retained(0, 0).end(), 50u));
}

TEST(ScoredPlanTest, BudgetBelowWindowClampsToRecent) {
    Rng rng(2);
    const auto obs = make_obs(0, {testing::random_importance(rng, 8, 92)}, 8);
    const auto plan = scored_plan(std::span(&obs, 1), fraction_budget(0.05, 8), plain_scoring(),
                                  AggregationSpec::mean());
    EXPECT_TRUE(plan.clamped);
    EXPECT_EQ(plan.retained(0, 0), iota_list(95, 100));
    EXPECT_FALSE(plan.notes.empty());
}

TEST(ScoredPlanTest, GlobalScopeIsRejected) {
    Rng rng(3);
    const auto obs = make_obs(0, {testing::random_importance(rng, 4, 12)}, 4);
    EXPECT_THROW(scored_plan(std::span(&obs, 1), fraction_budget(0.5, 4, BudgetScope::global_joint),
                             plain_scoring(), AggregationSpec::mean()),
                 ContractError);
}

TEST(ScoredPlanTest, CountsAndWindowOnRandomInstances) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t window = testing::uniform_int(rng, 1, 8);
        const std::size_t prefix = testing::uniform_int(rng, 20, 80);
        const std::size_t heads = testing::uniform_int(rng, 1, 3);
        std::vector<Matrix> att;
        for (std::size_t h = 0; h < heads; ++h) {
            att.push_back(testing::random_importance(rng, window, prefix));
        }
        const auto obs = make_obs(0, att, window);
        const std::size_t n = prefix + window;
        for (double f : {0.1, 0.2, 0.5, 1.0}) {
            const std::size_t b = budget_entries(f, n);
            if (b < window) {
                continue;
            }
            const auto plan = scored_plan(std::span(&obs, 1), fraction_budget(f, window), plain_scoring(5, true),
                                          AggregationSpec::defensive());
            for (std::size_t h = 0; h < heads; ++h) {
                const auto& kept = plan.retained(0, h);
                EXPECT_EQ(kept.size(), std::min(b, n));
                EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
                EXPECT_EQ(std::adjacent_find(kept.begin(), kept.end()), kept.end());
                for (std::size_t i = n - window; i < n; ++i) {
                    EXPECT_TRUE(std::binary_search(kept.begin(), kept.end(), i));
                }
            }
        }
    }
}

TEST(ScoredPlanTest, PerHeadScaleInvariance) {
    Rng rng(5);
    const Matrix a = testing::random_importance(rng, 8, 60);
    const Matrix b = testing::random_importance(rng, 8, 60);
    const auto base = make_obs(0, {a, b}, 8);
    for (double c : {0.5, 2.0, 3.0, 1e3}) {
        Matrix scaled = b;
        for (double& x : scaled.data()) {
            x *= c;
        }
        const auto obs = make_obs(0, {a, scaled}, 8);
        for (const auto& agg : {AggregationSpec::mean(), AggregationSpec::defensive()}) {
            const auto p0 = scored_plan(std::span(&base, 1), fraction_budget(0.3, 8), plain_scoring(5), agg);
            const auto p1 = scored_plan(std::span(&obs, 1), fraction_budget(0.3, 8), plain_scoring(5), agg);
            EXPECT_EQ(p0.layers, p1.layers);
        }
    }
}

TEST(ScoredPlanTest, LargerBudgetNeverDropsAnEntry) {
    Rng rng(6);
    const auto obs = make_obs(0, {testing::random_importance(rng, 8, 120)}, 8);
    IndexList prev;
    for (std::size_t abs = 8; abs <= 128; ++abs) {
        BudgetSpec b;
        b.fraction.reset();
        b.absolute_per_layer = abs;
        b.window = 8;
        const auto plan = scored_plan(std::span(&obs, 1), b, plain_scoring(5), AggregationSpec::defensive());
        const auto& cur = plan.retained(0, 0);
        EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        prev = cur;
    }
}

TEST(ScoredPlanTest, MeanPipelineMatchesCumulativeAttentionReference) {
    // Group size 1, kernel 1, no value norm, mean aggregation: keep the entries
    // with the largest accumulated attention from the window queries.
    const RawTrace trace = testing::small_trace(8, 2, 4, 4, 8, 64, 1);
    const std::size_t window = 16;
    const auto obs = observe(trace, window);
    BudgetSpec b = fraction_budget(0.4, window);
    const auto plan = scored_plan(obs, b, plain_scoring(), AggregationSpec::mean());
    const std::size_t n = 64;
    const std::size_t keep = budget_entries(0.4, n) - window;
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 4; ++h) {
            std::vector<double> accumulated(n - window, 0.0);
            const auto& lt = trace.layers[l];
            for (std::size_t t = n - window; t < n; ++t) {
                std::vector<double> logits;
                for (std::size_t i = 0; i <= t; ++i) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < 8; ++d) {
                        dot += lt.q[h](t, d) * lt.k[h](i, d);
                    }
                    logits.push_back(dot / std::sqrt(8.0));
                }
                const auto p = testing::oracle_softmax(logits);
                for (std::size_t i = 0; i < n - window; ++i) {
                    accumulated[i] += p[i];
                }
            }
            IndexList want = testing::oracle_top_k(accumulated, keep);
            for (std::size_t i = n - window; i < n; ++i) {
                want.push_back(i);
            }
            EXPECT_EQ(plan.retained(l, h), want);
        }
    }
}

TEST(JointSelectTest, DominantHeadTakesTheWholeDiscretionaryBudget) {
    const std::vector<ScoreVector> scores = {ScoreVector(10, 0.1), ScoreVector(10, 5.0)};
    const auto kept = per_layer_joint_select(scores, 2 * 2 + 6, 2, 12);
    EXPECT_EQ(kept[0], (IndexList{10, 11}));
    EXPECT_EQ(kept[1], (IndexList{0, 1, 2, 3, 4, 5, 10, 11}));
}

TEST(JointSelectTest, EqualScoresFillLowerHeadAndIndexFirst) {
    const std::vector<ScoreVector> scores = {ScoreVector(4, 1.0), ScoreVector(4, 1.0)};
    const auto kept = per_layer_joint_select(scores, 2 + 5, 1, 5);
    EXPECT_EQ(kept[0], (IndexList{0, 1, 2, 3, 4}));
    EXPECT_EQ(kept[1], (IndexList{0, 4}));
}

TEST(JointSelectTest, LayerJointMatchesSortOracle) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = testing::uniform_int(rng, 1, 4);
        const std::size_t window = testing::uniform_int(rng, 0, 4);
        const std::size_t n = window + testing::uniform_int(rng, 1, 40);
        std::vector<ScoreVector> scores;
        std::vector<testing::Candidate> all;
        for (std::size_t h = 0; h < heads; ++h) {
            const Matrix s = testing::random_importance(rng, 1, n - window);
            scores.emplace_back(s.data());
            for (std::size_t i = 0; i < n - window; ++i) {
                all.push_back({s(0, i), {0, h, i}});
            }
        }
        const std::size_t budget = heads * window + testing::uniform_int(rng, 0, heads * (n - window));
        const auto kept = per_layer_joint_select(scores, budget, window, n);
        std::vector<IndexList> want(heads);
        for (const auto& c : testing::oracle_best(all, budget - heads * window)) {
            want[c.key[1]].push_back(c.key[2]);
        }
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = n - window; i < n; ++i) {
                want[h].push_back(i);
            }
            std::sort(want[h].begin(), want[h].end());
            EXPECT_EQ(kept[h], want[h]);
        }
        if (window > 0) {
            EXPECT_THROW(per_layer_joint_select(scores, heads * window - 1, window, n), ContractError);
        }
    }
}

TEST(JointSelectTest, GlobalJointMatchesSortOracle) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t layers = testing::uniform_int(rng, 1, 3);
        const std::size_t heads = testing::uniform_int(rng, 1, 3);
        const std::size_t window = testing::uniform_int(rng, 1, 4);
        const std::size_t n = window + testing::uniform_int(rng, 1, 30);
        std::vector<std::vector<ScoreVector>> scores(layers);
        std::vector<testing::Candidate> all;
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                const Matrix s = testing::random_importance(rng, 1, n - window);
                scores[l].emplace_back(s.data());
                for (std::size_t i = 0; i < n - window; ++i) {
                    all.push_back({s(0, i), {l, h, i}});
                }
            }
        }
        const std::size_t windows = layers * heads * window;
        const std::size_t budget = windows + testing::uniform_int(rng, 0, layers * heads * (n - window));
        const auto kept = global_joint_select(scores, budget, window, n);
        std::vector<std::vector<IndexList>> want(layers, std::vector<IndexList>(heads));
        for (const auto& c : testing::oracle_best(all, budget - windows)) {
            want[c.key[0]][c.key[1]].push_back(c.key[2]);
        }
        std::size_t total = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = n - window; i < n; ++i) {
                    want[l][h].push_back(i);
                }
                std::sort(want[l][h].begin(), want[l][h].end());
                EXPECT_EQ(kept[l][h], want[l][h]);
                total += kept[l][h].size();
            }
        }
        EXPECT_EQ(total, budget);
        EXPECT_THROW(global_joint_select(scores, windows - 1, window, n), ContractError);
    }
}

TEST(LayerDefensiveTest, IdenticalLayersGetEqualShares) {
    Rng rng(9);
    const Matrix a = testing::random_importance(rng, 8, 40);
    const Matrix b = testing::random_importance(rng, 8, 40);
    const std::vector<LayerObservation> layers = {make_obs(0, {a, b}, 8), make_obs(1, {a, b}, 8)};
    BudgetSpec budget = fraction_budget(0.3, 8, BudgetScope::global_joint);
    const auto plan = layer_defensive_plan(layers, budget, plain_scoring(5, true));
    EXPECT_EQ(plan.retained_in_layer(0), plan.retained_in_layer(1));
    EXPECT_EQ(plan.retained_total(), budget_entries(0.3, 48 * 4));
    budget.fraction = 1.0;
    EXPECT_EQ(layer_defensive_plan(layers, budget, plain_scoring(5, true)).retained_total(), 48u * 4u);
}

TEST(LayerDefensiveTest, MatchesNormalizedGlobalSortOracle) {
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t window = 4;
        const std::size_t prefix = 30;
        const std::size_t n = prefix + window;
        std::vector<LayerObservation> layers;
        std::vector<testing::Candidate> all;
        for (std::size_t l = 0; l < 3; ++l) {
            std::vector<Matrix> att;
            std::vector<ScoreVector> norms;
            for (std::size_t h = 0; h < 2; ++h) {
                att.push_back(testing::random_matrix(rng, window, prefix, 0.0, 1.0));
                ScoreVector w(n);
                for (double& x : w) {
                    x = testing::uniform(rng, 0.5, 3.0) * static_cast<double>(l + 1);
                }
                norms.push_back(w);
            }
            double mass = 0.0;
            for (const auto& w : norms) {
                double head_mass = 0.0;
                for (std::size_t i = 0; i < prefix; ++i) {
                    head_mass += w[i];
                }
                mass += head_mass;
            }
            for (std::size_t h = 0; h < 2; ++h) {
                const auto r = testing::oracle_defensive(att[h]);
                for (std::size_t i = 0; i < prefix; ++i) {
                    all.push_back({r[i] * norms[h][i] / mass, {l, h, i}});
                }
            }
            layers.push_back(make_obs(l, att, window, norms));
        }
        const BudgetSpec budget = fraction_budget(0.4, window, BudgetScope::global_joint);
        const auto plan = layer_defensive_plan(layers, budget, plain_scoring(1, true));
        const std::size_t total = budget_entries(0.4, n * 6);
        EXPECT_EQ(plan.retained_total(), total);
        std::vector<std::vector<IndexList>> want(3, std::vector<IndexList>(2));
        for (const auto& c : testing::oracle_best(all, total - 6 * window)) {
            want[c.key[0]][c.key[1]].push_back(c.key[2]);
        }
        for (std::size_t l = 0; l < 3; ++l) {
            for (std::size_t h = 0; h < 2; ++h) {
                for (std::size_t i = prefix; i < n; ++i) {
                    want[l][h].push_back(i);
                }
                std::sort(want[l][h].begin(), want[l][h].end());
                EXPECT_EQ(plan.retained(l, h), want[l][h]) << "layer " << l << " head " << h;
            }
        }
    }
}

TEST(LayerDefensiveTest, BudgetBelowWindowsIsRejected) {
    Rng rng(11);
    const std::vector<LayerObservation> layers = {make_obs(0, {testing::random_importance(rng, 8, 10)}, 8)};
    EXPECT_THROW(layer_defensive_plan(layers, fraction_budget(0.2, 8, BudgetScope::global_joint), plain_scoring()),
                 ContractError);
}

TEST(ApplyPlanTest, GathersRetainedRowsWithoutTouchingInput) {
    Rng rng(12);
    KVCache cache;
    cache.layers.resize(2);
    for (auto& layer : cache.layers) {
        for (int g = 0; g < 2; ++g) {
            layer.push_back({testing::random_matrix(rng, 10, 3), testing::random_matrix(rng, 10, 3)});
        }
    }
    const KVCache original = cache;
    EvictionPlan plan;
    for (std::size_t l = 0; l < 2; ++l) {
        plan.layers.push_back({l, {{0, iota_list(0, 10)}, {1, {0}}}});
    }
    const KVCache out = apply_plan(cache, plan);
    EXPECT_EQ(out.layers[0][0].k, cache.layers[0][0].k);
    EXPECT_EQ(out.layers[1][1].k, cache.layers[1][1].k.slice_rows(0, 1));
    plan.layers[1].heads[0].retained = {1, 4, 9};
    const KVCache out2 = apply_plan(cache, plan);
    for (std::size_t r = 0; r < 3; ++r) {
        const std::size_t src = plan.layers[1].heads[0].retained[r];
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_EQ(out2.layers[1][0].k(r, c), cache.layers[1][0].k(src, c));
            EXPECT_EQ(out2.layers[1][0].v(r, c), cache.layers[1][0].v(src, c));
        }
    }
    EXPECT_EQ(cache.layers[1][0].k, original.layers[1][0].k);
    plan.layers[0].heads[0].retained = {10};
    EXPECT_THROW(apply_plan(cache, plan), ContractError);
}

TEST(PresetTest, NamesRoundTripAndAblationGuard) {
    for (PolicyKind kind : all_policies()) {
        EXPECT_EQ(parse_policy(policy_name(kind)), kind);
    }
    EXPECT_THROW(parse_policy("h2o"), ContractError);
    const RawTrace trace = testing::small_trace(2, 1, 4, 2, 8, 64, 1);
    const auto obs = observe(trace, 16);
    PolicyOptions options;
    options.window = 16;
    options.ablation = AggregationSpec::worst_case_only();
    EXPECT_THROW(make_plan(PolicyKind::snapkv, obs, options), ContractError);
    EXPECT_NO_THROW(make_plan(PolicyKind::defensivekv, obs, options));
}

TEST(PresetTest, EveryPolicyKeepsItsWindowAndExactCounts) {
    const RawTrace trace = testing::small_trace(3, 2, 4, 2, 8, 96, 1);
    const std::size_t window = 8;
    const auto obs = observe(trace, window);
    for (PolicyKind kind : all_policies()) {
        for (double f : {0.1, 0.2, 0.5, 1.0}) {
            PolicyOptions options;
            options.fraction = f;
            options.window = window;
            const auto plan = make_plan(kind, obs, options);
            const std::size_t n = 96;
            std::size_t expected = 0;
            switch (kind) {
                case PolicyKind::adakv:
                case PolicyKind::adakv_defensive:
                    expected = 2 * budget_entries(f, 2 * n);
                    break;
                case PolicyKind::layer_defensivekv:
                    expected = budget_entries(f, 4 * n);
                    break;
                default:
                    expected = 4 * budget_entries(f, n);
            }
            EXPECT_EQ(plan.retained_total(), expected) << policy_name(kind) << " " << f;
            for (const auto& lp : plan.layers) {
                for (const auto& hp : lp.heads) {
                    EXPECT_TRUE(std::binary_search(hp.retained.begin(), hp.retained.end(), n - 1));
                    if (kind != PolicyKind::streaming) {
                        EXPECT_TRUE(std::binary_search(hp.retained.begin(), hp.retained.end(), n - window));
                    }
                }
            }
        }
    }
}

}  // namespace
}  // namespace kvlab
