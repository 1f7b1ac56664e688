// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace kvlab {

using ScoreVector = std::vector<double>;
using IndexList = std::vector<std::size_t>;

/**
 * @brief Dense row-major matrix of doubles.
 *
 * Every kernel in this library treats a matrix with zero rows or zero columns
 * as invalid input. A default-constructed matrix is empty and exists only as a
 * placeholder (e.g. a KV cache before prefill).
 */
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Builds a matrix from nested rows; every row must have the same length.
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    bool empty() const { return m_rows == 0 || m_cols == 0; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    const std::vector<double>& data() const { return m_data; }
    std::vector<double>& data() { return m_data; }

    /// Appends one row. An empty matrix adopts the row's length as its width.
    void append_row(std::span<const double> values);

    /// Copy of rows [first, first + count).
    Matrix slice_rows(std::size_t first, std::size_t count) const;
    /// Copy of columns [first, first + count).
    Matrix slice_cols(std::size_t first, std::size_t count) const;
    /// Copy of the listed rows, in the order given.
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// Row vector times matrix.
std::vector<double> vecmat(std::span<const double> v, const Matrix& m);

Matrix transpose(const Matrix& m);

Matrix scale(const Matrix& m, double factor);

/**
 * Numerically stable row-wise softmax. When @p valid_prefix is given, row r
 * is normalized over its first valid_prefix[r] columns and the remaining
 * columns are exactly zero.
 */
Matrix softmax_rows(const Matrix& logits,
                    std::optional<std::span<const std::size_t>> valid_prefix = std::nullopt);

/// Softmax of a single vector over all of its entries.
std::vector<double> softmax(std::span<const double> logits);

/**
 * 1-D average pooling along each row: stride 1, zero padding of kernel/2 on
 * both sides, divisor fixed at @p kernel. Output shape equals input shape.
 */
Matrix avg_pool_rows(const Matrix& m, std::size_t kernel);

ScoreVector row_l2_norms(const Matrix& m);

/**
 * Indices of the k largest scores, ties going to the lower index, returned in
 * ascending index order.
 */
IndexList top_k_indices(std::span<const double> scores, std::size_t k);

double l2_norm(std::span<const double> v);

}  // namespace kvlab
