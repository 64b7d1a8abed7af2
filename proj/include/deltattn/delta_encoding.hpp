// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "deltattn/errors.hpp"
#include "deltattn/matrix.hpp"

namespace deltattn {

// How the score grid is built from a delta-encoded sequence.
//   TopDownQuery  encodes the query sequence first to last; row 0 is exact.
//   BottomUpQuery encodes the query sequence last to first; the last row is exact.
//   TopDownKey    encodes the key sequence first to last; score column 0 is
//                 exact, which preserves the heavily attended earliest
//                 positions. This is the production strategy.
enum class ConstructionStrategy : std::uint8_t {
    TopDownQuery = 0,
    BottomUpQuery = 1,
    TopDownKey = 2,
};

enum class EncodeDirection : std::uint8_t { TopDown, BottomUp };

// Rolling encoder state: the reference vector is the trajectory the decoder
// reconstructs, i.e. the per-element value as of the last fired delta. step
// counts vectors consumed after the basis.
template <typename T>
struct DeltaState {
    std::vector<T> reference;
    std::size_t step = 0;

    friend bool operator==(const DeltaState& a, const DeltaState& b) {
        return a.step == b.step && a.reference == b.reference;
    }
};

template <typename T>
struct DeltaEntry {
    std::uint32_t elem = 0;
    T value{};

    friend bool operator==(const DeltaEntry& a, const DeltaEntry& b) {
        return a.elem == b.elem && a.value == b.value;
    }
};

// One encoded position: the elements whose change since their last update
// exceeded the threshold, with entries in ascending element order. Elements
// absent here were held at their reference value.
template <typename T>
struct SparseDeltaColumn {
    std::size_t index = 0;
    std::vector<DeltaEntry<T>> entries;

    std::size_t nnz() const { return entries.size(); }

    friend bool operator==(const SparseDeltaColumn& a, const SparseDeltaColumn& b) {
        return a.index == b.index && a.entries == b.entries;
    }
};

// A fully encoded sequence: position 0 stored dense as the basis, positions
// 1..n-1 as sparse delta columns, plus the state after the final position.
template <typename T>
struct DeltaEncoding {
    std::vector<T> basis;
    std::vector<SparseDeltaColumn<T>> columns;
    DeltaState<T> terminal_state;
    T theta{};
    std::size_t d_head = 0;

    std::size_t positions() const { return columns.size() + 1; }

    std::size_t total_nnz() const {
        std::size_t total = 0;
        for (const auto& c : columns)
            total += c.nnz();
        return total;
    }
};

template <typename T>
inline DeltaState<T> init_state(std::span<const T> basis) {
    if (basis.empty())
        throw ShapeError("init_state: empty basis");
    return DeltaState<T>{std::vector<T>(basis.begin(), basis.end()), 0};
}

// Applies the hold/fire rule to one vector. Element e fires when
// |x[e] - reference[e]| > theta (strictly); fired elements store the delta
// x[e] - reference[e] and move the reference to x[e], held elements keep it.
// Returns the new column and the advanced state.
template <typename T>
std::pair<SparseDeltaColumn<T>, DeltaState<T>> delta_encode_step(std::span<const T> x,
                                                                 const DeltaState<T>& state,
                                                                 T theta) {
    if (theta < T{0})
        throw ConfigError("delta_encode_step: negative threshold");
    if (x.size() != state.reference.size())
        throw ShapeError("delta_encode_step: vector length differs from state");
    DeltaState<T> next = state;
    next.step = state.step + 1;
    SparseDeltaColumn<T> col;
    col.index = next.step;
    for (std::size_t e = 0; e < x.size(); ++e) {
        const T d = x[e] - state.reference[e];
        if (std::abs(d) > theta) {
            col.entries.push_back({static_cast<std::uint32_t>(e), d});
            next.reference[e] = x[e];
        }
    }
    return {std::move(col), std::move(next)};
}

// Encodes a whole sequence (rows of seq). TopDown consumes rows 0..n-1 in
// order; BottomUp consumes them in reverse, so the basis is the last row and
// column t corresponds to original row n-1-t.
template <typename T>
DeltaEncoding<T> build_delta_encoding(const Matrix<T>& seq, T theta,
                                      EncodeDirection direction = EncodeDirection::TopDown) {
    if (seq.rows() == 0 || seq.cols() == 0)
        throw ShapeError("build_delta_encoding: empty sequence");
    if (theta < T{0})
        throw ConfigError("build_delta_encoding: negative threshold");
    const std::size_t n = seq.rows();
    DeltaEncoding<T> enc;
    enc.theta = theta;
    enc.d_head = seq.cols();
    const auto row_at = [&](std::size_t t) {
        return direction == EncodeDirection::TopDown ? seq.row(t) : seq.row(n - 1 - t);
    };
    const auto basis = row_at(0);
    enc.basis.assign(basis.begin(), basis.end());
    DeltaState<T> state = init_state<T>(basis);
    enc.columns.reserve(n - 1);
    for (std::size_t t = 1; t < n; ++t) {
        auto [col, next] = delta_encode_step(row_at(t), state, theta);
        enc.columns.push_back(std::move(col));
        state = std::move(next);
    }
    enc.terminal_state = std::move(state);
    return enc;
}

// Materializes the decoder's view of the sequence: row t is the basis plus
// the elementwise sum of columns 1..t. This tracks the encoder's reference
// trajectory, so every entry of row t is within theta of the encoded input
// (up to accumulation rounding on data where float addition is inexact).
template <typename T>
Matrix<T> reconstruct(const DeltaEncoding<T>& enc) {
    Matrix<T> out(enc.positions(), enc.d_head);
    std::vector<T> ref = enc.basis;
    for (std::size_t e = 0; e < enc.d_head; ++e)
        out(0, e) = ref[e];
    for (std::size_t t = 1; t < enc.positions(); ++t) {
        for (const auto& entry : enc.columns[t - 1].entries)
            ref[entry.elem] += entry.value;
        for (std::size_t e = 0; e < enc.d_head; ++e)
            out(t, e) = ref[e];
    }
    return out;
}

// Fraction of zero entries in the delta columns (the basis is excluded; it is
// stored dense by design). A single-position encoding has no delta columns
// and returns 1.0 by convention; callers flag that case in their reports.
template <typename T>
float element_sparsity(const DeltaEncoding<T>& enc) {
    if (enc.columns.empty())
        return 1.0f;
    const std::size_t elems = enc.columns.size() * enc.d_head;
    return 1.0f - static_cast<float>(enc.total_nnz()) / static_cast<float>(elems);
}

// Same fraction with the dense basis counted as d_head nonzeros.
template <typename T>
float element_sparsity_incl_basis(const DeltaEncoding<T>& enc) {
    const std::size_t elems = enc.positions() * enc.d_head;
    const std::size_t nnz = enc.total_nnz() + enc.d_head;
    return 1.0f - static_cast<float>(nnz) / static_cast<float>(elems);
}

} // namespace deltattn
