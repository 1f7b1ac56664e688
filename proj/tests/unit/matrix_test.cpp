// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "kvlab/error.hpp"
#include "kvlab/matrix.hpp"
#include "test_util.hpp"

namespace kvlab {
namespace {

using testing::Rng;

TEST(MatrixTest, FromRowsRejectsRaggedInput) {
    EXPECT_THROW(Matrix::from_rows({{1.0, 2.0}, {3.0}}), ContractError);
    const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m(1, 0), 3.0);
}

TEST(MatrixTest, SliceAndGather) {
    const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    EXPECT_EQ(m.slice_rows(1, 2), Matrix::from_rows({{4, 5, 6}, {7, 8, 9}}));
    EXPECT_EQ(m.slice_cols(0, 2), Matrix::from_rows({{1, 2}, {4, 5}, {7, 8}}));
    const std::vector<std::size_t> idx = {2, 0};
    EXPECT_EQ(m.gather_rows(idx), Matrix::from_rows({{7, 8, 9}, {1, 2, 3}}));
    EXPECT_THROW(m.slice_rows(2, 2), ContractError);
}

TEST(MatrixTest, MatmulMatchesNaiveTripleLoop) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = testing::uniform_int(rng, 1, 9);
        const std::size_t k = testing::uniform_int(rng, 1, 9);
        const std::size_t c = testing::uniform_int(rng, 1, 9);
        const Matrix a = testing::random_matrix(rng, r, k);
        const Matrix b = testing::random_matrix(rng, k, c);
        const Matrix got = matmul(a, b);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                long double s = 0.0L;
                for (std::size_t t = 0; t < k; ++t) {
                    s += static_cast<long double>(a(i, t)) * b(t, j);
                }
                EXPECT_NEAR(got(i, j), static_cast<double>(s), 1e-14);
            }
        }
    }
    EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ContractError);
}

TEST(MatrixTest, VecmatAndTranspose) {
    const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const std::vector<double> v = {1, 0, -1};
    EXPECT_EQ(vecmat(v, m), (std::vector<double>{-4, -4}));
    EXPECT_EQ(transpose(m), Matrix::from_rows({{1, 3, 5}, {2, 4, 6}}));
}

TEST(SoftmaxTest, TwoLogitExample) {
    const std::vector<double> logits = {0.0, std::log(3.0)};
    const auto p = softmax(logits);
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(SoftmaxTest, LargeLogitsStayFinite) {
    const std::vector<double> logits = {1000.0, 1001.0, 999.0};
    const auto p = softmax(logits);
    const auto want = testing::oracle_softmax(logits);
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_TRUE(std::isfinite(p[i]));
        EXPECT_NEAR(p[i], want[i], 1e-12);
    }
}

TEST(SoftmaxTest, RowsMatchOracleAndSumToOne) {
    Rng rng(2);
    const Matrix logits = testing::random_matrix(rng, 16, 40, -8.0, 8.0);
    const Matrix p = softmax_rows(logits);
    for (std::size_t r = 0; r < p.rows(); ++r) {
        const auto want = testing::oracle_softmax(logits.row(r));
        double sum = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
            EXPECT_NEAR(p(r, c), want[c], 1e-14);
            sum += p(r, c);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(SoftmaxTest, MaskedEntriesAreExactlyZero) {
    const Matrix logits = Matrix::from_rows({{1, 2, 3, 4}, {4, 3, 2, 1}});
    const std::vector<std::size_t> valid = {2, 4};
    const Matrix p = softmax_rows(logits, valid);
    EXPECT_EQ(p(0, 2), 0.0);
    EXPECT_EQ(p(0, 3), 0.0);
    EXPECT_NEAR(p(0, 0) + p(0, 1), 1.0, 1e-15);
    const std::vector<double> head = {1.0, 2.0};
    EXPECT_NEAR(p(0, 1), testing::oracle_softmax(head)[1], 1e-15);
    const std::vector<std::size_t> none = {0, 4};
    EXPECT_THROW(softmax_rows(logits, none), ContractError);
}

TEST(PoolingTest, PeakSpreadsEvenly) {
    const Matrix m = Matrix::from_rows({{0, 3, 0}});
    const Matrix p = avg_pool_rows(m, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(p(0, c), 1.0, 1e-15);
    }
}

TEST(PoolingTest, KernelFiveSpike) {
    const Matrix m = Matrix::from_rows({{0, 0, 1, 0, 0}});
    const Matrix p = avg_pool_rows(m, 5);
    for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_NEAR(p(0, c), 0.2, 1e-15);
    }
}

TEST(PoolingTest, ZeroPaddingKeepsDivisorFixed) {
    const Matrix m = Matrix::from_rows({{1, 1, 1, 1}});
    const Matrix p = avg_pool_rows(m, 3);
    EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(p(0, 3), 2.0 / 3.0, 1e-15);
}

TEST(PoolingTest, KernelOneIsIdentityAndEvenKernelRejected) {
    Rng rng(3);
    const Matrix m = testing::random_matrix(rng, 3, 11, 0.0, 1.0);
    EXPECT_EQ(avg_pool_rows(m, 1), m);
    EXPECT_THROW(avg_pool_rows(m, 4), ContractError);
    EXPECT_THROW(avg_pool_rows(m, 0), ContractError);
}

TEST(PoolingTest, MatchesWindowSumOracle) {
    Rng rng(4);
    const Matrix m = testing::random_matrix(rng, 4, 23, 0.0, 1.0);
    const Matrix p = avg_pool_rows(m, 5);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            double s = 0.0;
            for (int d = -2; d <= 2; ++d) {
                const long long cc = static_cast<long long>(c) + d;
                if (cc >= 0 && cc < static_cast<long long>(m.cols())) {
                    s += m(r, static_cast<std::size_t>(cc));
                }
            }
            EXPECT_NEAR(p(r, c), s / 5.0, 1e-15);
        }
    }
}

TEST(NormTest, RowNormsMatchOracle) {
    const Matrix m = Matrix::from_rows({{3, 4}, {0, 0}, {1, 1}});
    const auto n = row_l2_norms(m);
    EXPECT_DOUBLE_EQ(n[0], 5.0);
    EXPECT_DOUBLE_EQ(n[1], 0.0);
    EXPECT_NEAR(n[2], std::sqrt(2.0), 1e-15);
}

TEST(TopKTest, TiesGoToLowerIndex) {
    const std::vector<double> s = {0.5, 0.9, 0.5, 0.5, 0.1};
    EXPECT_EQ(top_k_indices(s, 2), (IndexList{0, 1}));
    EXPECT_EQ(top_k_indices(s, 3), (IndexList{0, 1, 2}));
    EXPECT_TRUE(top_k_indices(s, 0).empty());
    EXPECT_EQ(top_k_indices(s, 5).size(), 5u);
}

TEST(TopKTest, MatchesFullSortOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = testing::uniform_int(rng, 1, 120);
        const Matrix s = testing::random_importance(rng, 1, n);
        const std::size_t k = testing::uniform_int(rng, 0, n);
        EXPECT_EQ(top_k_indices(s.row(0), k), testing::oracle_top_k(s.row(0), k));
    }
}

TEST(TopKTest, NestedAsKGrows) {
    Rng rng(6);
    const Matrix s = testing::random_importance(rng, 1, 60);
    IndexList prev;
    for (std::size_t k = 0; k <= 60; ++k) {
        const IndexList cur = top_k_indices(s.row(0), k);
        EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        prev = cur;
    }
}

}  // namespace
}  // namespace kvlab
