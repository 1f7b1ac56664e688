// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "kvlab/error.hpp"
#include "kvlab/scoring.hpp"
#include "test_util.hpp"

namespace kvlab {
namespace {

using testing::Rng;

// Causal attention of window queries over the keys visible to each of them.
Matrix causal_attention_oracle(const Matrix& queries, const Matrix& keys) {
    const std::size_t m = queries.rows();
    const std::size_t n = keys.rows();
    const std::size_t d = keys.cols();
    Matrix out(m, n - m);
    for (std::size_t j = 0; j < m; ++j) {
        std::vector<double> logits;
        for (std::size_t i = 0; i <= n - m + j; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += queries(j, c) * keys(i, c);
            }
            logits.push_back(dot / std::sqrt(static_cast<double>(d)));
        }
        const auto p = testing::oracle_softmax(logits);
        for (std::size_t i = 0; i < n - m; ++i) {
            out(j, i) = p[i];
        }
    }
    return out;
}

TEST(ScoringTest, AttentionImportanceMatchesCausalOracle) {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = testing::uniform_int(rng, 2, 40);
        const std::size_t m = testing::uniform_int(rng, 1, n - 1);
        const Matrix keys = testing::random_matrix(rng, n, 8, -2.0, 2.0);
        const Matrix queries = testing::random_matrix(rng, m, 8, -2.0, 2.0);
        const ImportanceMatrix got = attention_importance(queries, keys, 8);
        const Matrix want = causal_attention_oracle(queries, keys);
        ASSERT_EQ(got.m(), m);
        ASSERT_EQ(got.n(), n - m);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n - m; ++i) {
                EXPECT_NEAR(got.values(j, i), want(j, i), 1e-14);
            }
        }
    }
}

TEST(ScoringTest, AttentionImportanceNeedsAScoredPrefix) {
    const Matrix keys(4, 2, 0.0);
    const Matrix queries(4, 2, 0.0);
    EXPECT_THROW(attention_importance(queries, keys, 2), ContractError);
}

TEST(ScoringTest, ValueNormWeightsAreProjectedRowNorms) {
    Rng rng(2);
    const Matrix v = testing::random_matrix(rng, 7, 4);
    const Matrix w = testing::random_matrix(rng, 4, 6);
    const auto got = value_norm_weights(v, w);
    for (std::size_t i = 0; i < 7; ++i) {
        double ss = 0.0;
        for (std::size_t c = 0; c < 6; ++c) {
            double x = 0.0;
            for (std::size_t d = 0; d < 4; ++d) {
                x += v(i, d) * w(d, c);
            }
            ss += x * x;
        }
        EXPECT_NEAR(got[i], std::sqrt(ss), 1e-13);
    }
    EXPECT_THROW(value_norm_weights(v, testing::random_matrix(rng, 5, 6)), ContractError);
}

TEST(ScoringTest, ScaleScoresIsElementwise) {
    const std::vector<double> s = {1.0, 2.0, 3.0};
    const std::vector<double> w = {0.5, 0.0, 2.0};
    EXPECT_EQ(scale_scores(s, w), (ScoreVector{0.5, 0.0, 6.0}));
    const std::vector<double> short_w = {1.0};
    EXPECT_THROW(scale_scores(s, short_w), ContractError);
}

TEST(ScoringTest, ObserveRawTraceUsesLastPromptQueries) {
    const RawTrace trace = testing::small_trace(3, 2, 4, 2, 8, 40, 5);
    const auto obs = observe(trace, 12);
    ASSERT_EQ(obs.size(), 2u);
    for (const auto& o : obs) {
        EXPECT_EQ(o.n_entries, 40u);
        EXPECT_EQ(o.window, 12u);
        EXPECT_EQ(o.prefix(), 28u);
        EXPECT_EQ(o.group_size, 2u);
        ASSERT_EQ(o.attention.size(), 4u);
        const auto& lt = trace.layers[o.layer];
        for (std::size_t h = 0; h < 4; ++h) {
            const std::size_t kv = h / 2;
            const Matrix want =
                causal_attention_oracle(lt.q[h].slice_rows(28, 12), lt.k[kv].slice_rows(0, 40));
            for (std::size_t j = 0; j < 12; ++j) {
                for (std::size_t i = 0; i < 28; ++i) {
                    EXPECT_NEAR(o.attention[h].values(j, i), want(j, i), 1e-13);
                }
            }
            const auto norms = value_norm_weights(lt.v[kv].slice_rows(0, 40), w_o_slice(lt.w_o, h, 8));
            EXPECT_EQ(o.value_norms[h], norms);
        }
    }
}

TEST(ScoringTest, ObserveClampsWindowToPrompt) {
    const RawTrace trace = testing::small_trace(4, 1, 2, 1, 4, 10, 2);
    const auto obs = observe(trace, 32);
    EXPECT_EQ(obs[0].window, 10u);
    EXPECT_EQ(obs[0].prefix(), 0u);
    EXPECT_TRUE(obs[0].attention.empty());
}

TEST(ScoringTest, ObserveDumpTakesLeadingRowsWithUnitNorms) {
    Rng rng(5);
    const ImportanceDump dump = testing::random_dump(rng, 2, 3, 10, 20);
    const auto obs = observe(dump, 4);
    ASSERT_EQ(obs.size(), 2u);
    EXPECT_EQ(obs[1].n_kv_heads, 3u);
    EXPECT_EQ(obs[1].group_size, 1u);
    EXPECT_EQ(obs[1].attention[2].values, dump.rows[1][2].slice_rows(0, 4).slice_cols(0, 16));
    EXPECT_EQ(obs[1].value_norms[0], ScoreVector(20, 1.0));
    EXPECT_THROW(observe(dump, 11), ContractError);
}

TEST(ScoringTest, GroupValueNormsAverageTheGroupOverThePrefix) {
    LayerObservation obs;
    obs.n_entries = 4;
    obs.window = 1;
    obs.n_kv_heads = 1;
    obs.group_size = 2;
    obs.value_norms = {{1.0, 2.0, 3.0, 9.0}, {3.0, 2.0, 1.0, 9.0}};
    EXPECT_EQ(group_value_norms(obs, 0), (ScoreVector{2.0, 2.0, 2.0}));
}

}  // namespace
}  // namespace kvlab
