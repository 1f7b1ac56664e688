// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kvlab/error.hpp"

namespace kvlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    require(m_data.size() == rows * cols, "Matrix: data length does not match rows x cols");
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "Matrix::from_rows: no rows");
    const std::size_t cols = rows.front().size();
    Matrix out(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == cols, "Matrix::from_rows: ragged rows");
        std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
    }
    return out;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out(i, i) = 1.0;
    }
    return out;
}

void Matrix::append_row(std::span<const double> values) {
    if (m_rows == 0 && m_cols == 0) {
        m_cols = values.size();
    }
    require(values.size() == m_cols, "Matrix::append_row: width mismatch");
    m_data.insert(m_data.end(), values.begin(), values.end());
    ++m_rows;
}

Matrix Matrix::slice_rows(std::size_t first, std::size_t count) const {
    require(first + count <= m_rows, "Matrix::slice_rows: range out of bounds");
    Matrix out(count, m_cols);
    std::copy_n(m_data.begin() + static_cast<std::ptrdiff_t>(first * m_cols), count * m_cols,
                out.m_data.begin());
    return out;
}

Matrix Matrix::slice_cols(std::size_t first, std::size_t count) const {
    require(first + count <= m_cols, "Matrix::slice_cols: range out of bounds");
    Matrix out(m_rows, count);
    for (std::size_t r = 0; r < m_rows; ++r) {
        auto src = row(r).subspan(first, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), m_cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] < m_rows, "Matrix::gather_rows: index " + std::to_string(indices[i]) +
                                         " out of range for " + std::to_string(m_rows) + " rows");
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(!a.empty() && !b.empty(), "matmul: empty operand");
    require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                      " vs " + std::to_string(b.rows()) + ")");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    return out;
}

std::vector<double> vecmat(std::span<const double> v, const Matrix& m) {
    require(v.size() == m.rows(), "vecmat: vector length does not match matrix rows");
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t k = 0; k < m.rows(); ++k) {
        auto src = m.row(k);
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out[j] += v[k] * src[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

Matrix scale(const Matrix& m, double factor) {
    Matrix out = m;
    for (double& x : out.data()) {
        x *= factor;
    }
    return out;
}

namespace {

void softmax_inplace(std::span<double> row, std::size_t valid) {
    require(valid >= 1, "softmax: row has no valid positions");
    require(valid <= row.size(), "softmax: valid prefix longer than row");
    const double row_max = *std::max_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(valid));
    double total = 0.0;
    for (std::size_t c = 0; c < valid; ++c) {
        row[c] = std::exp(row[c] - row_max);
        total += row[c];
    }
    for (std::size_t c = 0; c < valid; ++c) {
        row[c] /= total;
    }
    std::fill(row.begin() + static_cast<std::ptrdiff_t>(valid), row.end(), 0.0);
}

}  // namespace

Matrix softmax_rows(const Matrix& logits, std::optional<std::span<const std::size_t>> valid_prefix) {
    require(!logits.empty(), "softmax_rows: empty matrix");
    if (valid_prefix) {
        require(valid_prefix->size() == logits.rows(), "softmax_rows: one valid length per row required");
    }
    Matrix out = logits;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        softmax_inplace(out.row(r), valid_prefix ? (*valid_prefix)[r] : out.cols());
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    softmax_inplace(out, out.size());
    return out;
}

Matrix avg_pool_rows(const Matrix& m, std::size_t kernel) {
    require(kernel >= 1 && kernel % 2 == 1, "avg_pool_rows: kernel must be odd and >= 1, got " +
                                                std::to_string(kernel));
    require(!m.empty(), "avg_pool_rows: empty matrix");
    if (kernel == 1) {
        return m;
    }
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto cols = static_cast<std::ptrdiff_t>(m.cols());
    const double divisor = static_cast<double>(kernel);
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        auto dst = out.row(r);
        for (std::ptrdiff_t c = 0; c < cols; ++c) {
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, c - half);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(cols - 1, c + half);
            double sum = 0.0;
            for (std::ptrdiff_t k = lo; k <= hi; ++k) {
                sum += src[static_cast<std::size_t>(k)];
            }
            dst[static_cast<std::size_t>(c)] = sum / divisor;
        }
    }
    return out;
}

double l2_norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) {
        sq += x * x;
    }
    return std::sqrt(sq);
}

ScoreVector row_l2_norms(const Matrix& m) {
    ScoreVector out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r] = l2_norm(m.row(r));
    }
    return out;
}

IndexList top_k_indices(std::span<const double> scores, std::size_t k) {
    require(k <= scores.size(), "top_k_indices: k=" + std::to_string(k) + " exceeds length " +
                                    std::to_string(scores.size()));
    IndexList order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    };
    if (k < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    }
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace kvlab
