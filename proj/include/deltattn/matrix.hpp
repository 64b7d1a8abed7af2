// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "deltattn/errors.hpp"

namespace deltattn {

// Dense row-major matrix. The working scalar across the library is float;
// double instantiations are used by shadow computations in tests.
template <typename T>
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& r : rows) {
            if (r.size() != m.cols_)
                throw ShapeError("from_rows: ragged initializer");
            std::size_t j = 0;
            for (T v : r)
                m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v))
                return false;
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using MatrixF = Matrix<float>;

// Lower-triangular visibility over an n x n score grid: (i, j) active iff j <= i.
struct CausalMask {
    std::size_t n = 0;
    bool active(std::size_t i, std::size_t j) const { return j <= i; }
};

// Dot product with ascending-index accumulation. Every score in the library,
// exact or reconstructed, goes through this helper (or mirrors its order), so
// equal inputs give bit-equal results on every code path.
template <typename T>
inline T dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size())
        throw ShapeError("dot: length mismatch");
    T acc{0};
    for (std::size_t e = 0; e < a.size(); ++e)
        acc += a[e] * b[e];
    return acc;
}

// a (r x k) times b (k x c), accumulating over the inner index in ascending
// order. No blocking or reassociation; determinism outranks throughput here.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ");
    Matrix<T> out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc{0};
            for (std::size_t k = 0; k < a.cols(); ++k)
                acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

// Numerically safe softmax over the first `count` entries of a row, in place.
// Subtracts the running max before exponentiating.
template <typename T>
inline void softmax_inplace(std::span<T> xs) {
    if (xs.empty())
        throw InvariantError("softmax over an empty active set");
    T m = xs[0];
    for (T v : xs)
        if (v > m)
            m = v;
    T sum{0};
    for (T& v : xs) {
        v = std::exp(v - m);
        sum += v;
    }
    for (T& v : xs)
        v /= sum;
}

// Row-wise softmax. With a causal mask the active set of row i is the prefix
// [0, i]; masked entries come out as exact zeros. A row whose active set is
// empty cannot happen under the causal mask (row i always sees column i).
template <typename T>
Matrix<T> row_softmax(const Matrix<T>& scores) {
    Matrix<T> out = scores;
    for (std::size_t i = 0; i < out.rows(); ++i)
        softmax_inplace(out.row(i));
    return out;
}

template <typename T>
Matrix<T> row_softmax(const Matrix<T>& scores, const CausalMask& mask) {
    if (scores.rows() != scores.cols() || mask.n != scores.rows())
        throw ShapeError("row_softmax: causal mask requires matching square scores");
    Matrix<T> out = scores;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        softmax_inplace(out.row(i).subspan(0, i + 1));
        for (std::size_t j = i + 1; j < out.cols(); ++j)
            out(i, j) = T{0};
    }
    return out;
}

// Scaled pre-softmax attention scores: scores(i, j) = (q_i . k_j) / sqrt(d).
// The scale is applied per entry after the raw accumulation, matching the
// sparse paths so that shared entries stay bit-identical.
template <typename T>
Matrix<T> dense_scores(const Matrix<T>& q, const Matrix<T>& k) {
    if (q.cols() != k.cols())
        throw ShapeError("dense_scores: head dimensions differ");
    if (q.cols() == 0)
        throw ShapeError("dense_scores: zero head dimension");
    const T scale = T{1} / std::sqrt(static_cast<T>(q.cols()));
    Matrix<T> s(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t j = 0; j < k.rows(); ++j)
            s(i, j) = dot(q.row(i), k.row(j)) * scale;
    return s;
}

// Exact attention: softmax(q k^T / sqrt(d)) v, optionally causal. This is the
// reference the sparse paths are measured against.
template <typename T>
Matrix<T> dense_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                          bool causal) {
    if (k.rows() != v.rows())
        throw ShapeError("dense_attention: key/value row counts differ");
    Matrix<T> s = dense_scores(q, k);
    Matrix<T> p = causal ? row_softmax(s, CausalMask{q.rows()}) : row_softmax(s);
    return matmul(p, v);
}

// Single-query exact attention over the first `positions` rows of k and v.
// Used as the per-step reference during decode.
template <typename T>
std::vector<T> dense_attention_row(std::span<const T> q_row, const Matrix<T>& k,
                                   const Matrix<T>& v, std::size_t positions) {
    if (positions == 0 || positions > k.rows() || positions > v.rows())
        throw BoundsError("dense_attention_row: position count out of range");
    if (q_row.size() != k.cols())
        throw ShapeError("dense_attention_row: head dimensions differ");
    const T scale = T{1} / std::sqrt(static_cast<T>(q_row.size()));
    std::vector<T> s(positions);
    for (std::size_t j = 0; j < positions; ++j)
        s[j] = dot(q_row, k.row(j)) * scale;
    softmax_inplace(std::span<T>(s));
    std::vector<T> out(v.cols(), T{0});
    for (std::size_t j = 0; j < positions; ++j)
        for (std::size_t e = 0; e < v.cols(); ++e)
            out[e] += s[j] * v(j, e);
    return out;
}

} // namespace deltattn
