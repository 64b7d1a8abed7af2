// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "deltattn/delta_matmul.hpp"
#include "deltattn/errors.hpp"
#include "deltattn/matrix.hpp"

namespace deltattn {

enum class Stage : std::uint8_t { Prefill, Decode };

inline const char* stage_name(Stage s) {
    return s == Stage::Prefill ? "prefill" : "decode";
}

// Effective computational sparsity: the element sparsity of the delta matrix
// discounted by the fraction of positions covered by the full-attention
// window (the prefill window during prefill, the decode window during
// decode). Computed in float, the working precision of the whole pipeline.
// A window larger than the sequence means full attention everywhere, which
// contributes no savings; that case returns 0 and callers flag it.
inline float computational_sparsity(float s_m, std::size_t window, std::size_t n) {
    if (s_m < 0.0f || s_m > 1.0f)
        throw ConfigError("computational_sparsity: s_m outside [0, 1]");
    if (window == 0 || n == 0)
        throw ConfigError("computational_sparsity: window and n must be >= 1");
    if (window > n)
        return 0.0f;
    return s_m * (1.0f - static_cast<float>(window) / static_cast<float>(n));
}

// Entrywise error accumulators, mergeable across heads and steps. Sums are
// carried in double so merged means and Frobenius ratios do not depend on
// merge ordering beyond final rounding.
struct ErrorStats {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double ref_sq_sum = 0.0;
    double max_abs = 0.0;
    std::uint64_t count = 0;

    void add(double approx, double exact) {
        const double e = std::abs(approx - exact);
        abs_sum += e;
        sq_sum += e * e;
        ref_sq_sum += exact * exact;
        if (e > max_abs)
            max_abs = e;
        ++count;
    }

    void merge(const ErrorStats& o) {
        abs_sum += o.abs_sum;
        sq_sum += o.sq_sum;
        ref_sq_sum += o.ref_sq_sum;
        if (o.max_abs > max_abs)
            max_abs = o.max_abs;
        count += o.count;
    }

    double mean_abs() const { return count == 0 ? 0.0 : abs_sum / static_cast<double>(count); }

    // Frobenius norm of the error relative to the Frobenius norm of the
    // reference; 0 for an empty or all-zero reference.
    double frobenius_rel() const {
        return ref_sq_sum == 0.0 ? 0.0 : std::sqrt(sq_sum / ref_sq_sum);
    }
};

// Per-stage measurement record. Sparsity fields are float (working
// precision); raw counts are kept so reports merge exactly.
struct AttentionReport {
    Stage stage = Stage::Prefill;
    std::size_t n = 0;
    std::size_t window = 0;
    float s_m = 1.0f;
    float s_m_incl_basis = 1.0f;
    float s_c = 0.0f;
    std::uint64_t mac_used = 0;
    std::uint64_t mac_skipped = 0;
    std::uint64_t delta_nnz = 0;
    std::uint64_t delta_elems = 0;
    std::uint64_t basis_elems = 0;
    ErrorStats score_err;
    double output_err_max = 0.0;
    bool s_m_degenerate = false; // n == 1: no delta columns exist, s_m is 1 by convention
    bool window_clamped = false; // window exceeded n; s_c forced to 0

    double err_max_abs() const { return score_err.max_abs; }
    double err_mean_abs() const { return score_err.mean_abs(); }
    double err_frobenius_rel() const { return score_err.frobenius_rel(); }

    // Recomputes the derived sparsity fields from the raw counts.
    void refresh_sparsity() {
        if (delta_elems == 0) {
            s_m = 1.0f;
            s_m_degenerate = true;
        } else {
            s_m = 1.0f - static_cast<float>(delta_nnz) / static_cast<float>(delta_elems);
            s_m_degenerate = false;
        }
        const std::uint64_t all = delta_elems + basis_elems;
        s_m_incl_basis =
            all == 0 ? 1.0f
                     : 1.0f - static_cast<float>(delta_nnz + basis_elems) / static_cast<float>(all);
        s_c = computational_sparsity(s_m, window, n);
        window_clamped = window > n;
    }
};

// Entrywise score error over the unmasked region. Masked entries contribute
// nothing to any statistic.
template <typename T>
ErrorStats compare_to_oracle(const ScoreMatrix<T>& approx, const Matrix<T>& exact) {
    if (approx.rows() != exact.rows() || approx.cols() != exact.cols())
        throw ShapeError("compare_to_oracle: shape mismatch");
    ErrorStats st;
    for (std::size_t i = 0; i < approx.rows(); ++i)
        for (std::size_t j = 0; j < approx.cols(); ++j)
            if (approx.flag(i, j) != Exactness::Masked)
                st.add(static_cast<double>(approx.scores(i, j)),
                       static_cast<double>(exact(i, j)));
    return st;
}

// Folds per-head reports into one. Counts and maxima combine exactly; s_m is
// recomputed from the summed nonzero counts; means are count-weighted through
// the summed accumulators. Reports must describe the same stage, sequence
// length, and window, otherwise the merge is meaningless.
inline AttentionReport merge_reports(std::span<const AttentionReport> reports) {
    if (reports.empty())
        throw ConfigError("merge_reports: empty list");
    AttentionReport out = reports[0];
    for (std::size_t r = 1; r < reports.size(); ++r) {
        const AttentionReport& o = reports[r];
        if (o.stage != out.stage)
            throw ConfigError("merge_reports: mixed stages");
        if (o.n != out.n)
            throw ConfigError("merge_reports: mixed sequence lengths");
        if (o.window != out.window)
            throw ConfigError("merge_reports: mixed windows");
        out.mac_used += o.mac_used;
        out.mac_skipped += o.mac_skipped;
        out.delta_nnz += o.delta_nnz;
        out.delta_elems += o.delta_elems;
        out.basis_elems += o.basis_elems;
        out.score_err.merge(o.score_err);
        if (o.output_err_max > out.output_err_max)
            out.output_err_max = o.output_err_max;
    }
    out.refresh_sparsity();
    return out;
}

} // namespace deltattn
