// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deltattn/delta_encoding.hpp"
#include "deltattn/errors.hpp"
#include "deltattn/matrix.hpp"

namespace deltattn {

// Per-entry provenance of a score. Masked entries are written as zero and
// must only be consumed by the masking step of the softmax.
enum class Exactness : std::uint8_t {
    Masked = 0,
    Approximate = 1,
    Full = 2,
};

// Multiply-accumulate bookkeeping. `mac` counts products actually performed,
// `skipped` counts products avoided by zero delta entries; their sum is the
// dense-equivalent count for whatever region the counter covered.
struct MacCounter {
    std::uint64_t mac = 0;
    std::uint64_t skipped = 0;

    std::uint64_t dense_equivalent() const { return mac + skipped; }

    MacCounter& operator+=(const MacCounter& o) {
        mac += o.mac;
        skipped += o.skipped;
        return *this;
    }
};

// Scores together with their per-entry exactness flags, same shape.
// Scores are pre-softmax; whether they are scaled is stated by the producer.
template <typename T>
struct ScoreMatrix {
    Matrix<T> scores;
    std::vector<Exactness> flags;

    ScoreMatrix() = default;
    ScoreMatrix(std::size_t rows, std::size_t cols, Exactness fill)
        : scores(rows, cols), flags(rows * cols, fill) {}

    std::size_t rows() const { return scores.rows(); }
    std::size_t cols() const { return scores.cols(); }

    Exactness flag(std::size_t i, std::size_t j) const { return flags[i * cols() + j]; }
    void set_flag(std::size_t i, std::size_t j, Exactness e) { flags[i * cols() + j] = e; }
};

namespace detail {

// One recursion step: fold a sparse delta column into the running score.
// Touches only the stored (nonzero) entries; accumulation order is the
// ascending element order of the column.
template <typename T>
inline T fold_delta(T r, std::span<const T> q_row, const SparseDeltaColumn<T>& col) {
    for (const auto& en : col.entries)
        r += q_row[en.elem] * en.value;
    return r;
}

// Shared single-row recursion over basis + columns[0..upto-1]. Both the
// full-matrix and the single-query entry points drive this loop, which is
// what makes their matching rows bit-equal.
template <typename T>
inline void score_row_recursion(std::span<const T> q_row, std::span<const T> basis,
                                std::span<const SparseDeltaColumn<T>> columns,
                                std::size_t upto, std::span<T> out, MacCounter& counter) {
    T r = dot(q_row, basis);
    counter.mac += basis.size();
    out[0] = r;
    for (std::size_t t = 1; t <= upto; ++t) {
        const auto& col = columns[t - 1];
        r = fold_delta(r, q_row, col);
        counter.mac += col.nnz();
        counter.skipped += basis.size() - col.nnz();
        out[t] = r;
    }
}

} // namespace detail

// Raw (unscaled) score matrix of q against every encoded key position.
// Column 0 is the dense product with the basis; column t extends column t-1
// by the nonzero entries of delta column t. The exactness map marks column 0
// Full and everything else Approximate; masking is a caller concern.
template <typename T>
ScoreMatrix<T> delta_score_columns(const Matrix<T>& q, const DeltaEncoding<T>& enc,
                                   MacCounter& counter) {
    if (q.cols() != enc.d_head)
        throw ShapeError("delta_score_columns: query width differs from encoding");
    const std::size_t n_key = enc.positions();
    ScoreMatrix<T> out(q.rows(), n_key, Exactness::Approximate);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        detail::score_row_recursion<T>(q.row(i), enc.basis, enc.columns, n_key - 1,
                                       out.scores.row(i), counter);
        out.set_flag(i, 0, Exactness::Full);
    }
    return out;
}

// Single-query form of the same recursion, stopping at column `upto`
// inclusive. Values are bit-equal to the matching prefix of a
// delta_score_columns row.
template <typename T>
std::vector<T> delta_score_single_query(std::span<const T> q_row, const DeltaEncoding<T>& enc,
                                        std::size_t upto, MacCounter& counter) {
    if (q_row.size() != enc.d_head)
        throw ShapeError("delta_score_single_query: query width differs from encoding");
    if (upto >= enc.positions())
        throw BoundsError("delta_score_single_query: column index past encoding");
    std::vector<T> out(upto + 1);
    detail::score_row_recursion<T>(q_row, enc.basis, enc.columns, upto,
                                   std::span<T>(out), counter);
    return out;
}

} // namespace deltattn
