// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "deltattn/delta_encoding.hpp"
#include "deltattn/delta_matmul.hpp"
#include "deltattn/errors.hpp"
#include "deltattn/kv_cache.hpp"
#include "deltattn/matrix.hpp"
#include "deltattn/metrics.hpp"

namespace deltattn {

struct HybridConfig {
    double theta = 0.1;
    double gamma = 0.1;
    std::size_t w_max = 64;
    std::size_t w_d = 4;
    ConstructionStrategy strategy = ConstructionStrategy::TopDownKey;

    void validate() const {
        if (theta < 0.0)
            throw ConfigError("config: theta must be >= 0");
        if (!(gamma > 0.0 && gamma < 1.0))
            throw ConfigError("config: gamma must lie strictly between 0 and 1");
        if (w_max == 0)
            throw ConfigError("config: w_max must be >= 1");
        if (w_d == 0)
            throw ConfigError("config: w_d must be >= 1");
    }
};

// Dynamic prefill window: floor(gamma * n) capped at w_max. Clamped below to
// 1 so every row keeps at least its diagonal entry exact; a softmax row needs
// one trustworthy score.
inline std::size_t prefill_window(std::size_t n, double gamma, std::size_t w_max) {
    if (n == 0)
        throw ShapeError("prefill_window: empty sequence");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw ConfigError("prefill_window: gamma must lie strictly between 0 and 1");
    if (w_max == 0)
        throw ConfigError("prefill_window: w_max must be >= 1");
    const auto scaled = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n)));
    return std::max<std::size_t>(std::size_t{1}, std::min(scaled, w_max));
}

// Membership of score entry (i, j) in the prefill pattern: causally masked
// above the diagonal, full inside the diagonal block shared by i and j
// (blocks of width w anchored at position 0), approximate elsewhere. The
// intersection of the block diagonal with the causal mask is what produces
// the staircase of exact squares.
inline Exactness block_membership(std::size_t i, std::size_t j, std::size_t w) {
    if (w == 0)
        throw ConfigError("block_membership: window must be >= 1");
    if (j > i)
        return Exactness::Masked;
    return (i / w == j / w) ? Exactness::Full : Exactness::Approximate;
}

template <typename T>
struct PrefillResult {
    Matrix<T> output;              // n x d_value attention output
    ScoreMatrix<T> scores;         // scaled pre-softmax scores with exactness flags
    std::optional<DeltaKVCache<T>> cache; // absent for ablation strategies
    AttentionReport report;        // sparsity and MAC fields filled; error fields are
                                   // the caller's concern (they need the oracle)
    MacCounter mac_delta;          // recursion over delta columns t >= 1
    MacCounter mac_basis;          // dense basis dot products feeding the recursion
    MacCounter mac_exact;          // exact dots inside the full-attention blocks
    std::size_t window = 0;
};

namespace detail {

template <typename T>
void check_prefill_shapes(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
    if (q.rows() == 0)
        throw ShapeError("prefill: empty sequence");
    if (q.rows() != k.rows() || q.rows() != v.rows())
        throw ShapeError("prefill: q, k, v row counts differ");
    if (q.cols() != k.cols())
        throw ShapeError("prefill: query and key widths differ");
    if (q.cols() == 0)
        throw ShapeError("prefill: zero head dimension");
}

inline AttentionReport make_stage_report(Stage stage, std::size_t n, std::size_t window,
                                         std::uint64_t nnz, std::size_t d_head,
                                         std::size_t delta_columns, const MacCounter& mac_delta,
                                         const MacCounter& mac_basis,
                                         const MacCounter& mac_exact) {
    AttentionReport rep;
    rep.stage = stage;
    rep.n = n;
    rep.window = window;
    rep.delta_nnz = nnz;
    rep.delta_elems = static_cast<std::uint64_t>(delta_columns) * d_head;
    rep.basis_elems = d_head;
    rep.mac_used = mac_delta.mac + mac_basis.mac + mac_exact.mac;
    rep.mac_skipped = mac_delta.skipped;
    rep.refresh_sparsity();
    return rep;
}

// Softmax over the causal prefix of every row, then the dense product with v.
template <typename T>
Matrix<T> finish_attention(ScoreMatrix<T>& sm, const Matrix<T>& v) {
    Matrix<T> probs = row_softmax(sm.scores, CausalMask{sm.rows()});
    return matmul(probs, v);
}

} // namespace detail

// Production prefill: keys are delta-encoded top-down (basis = key row 0),
// scores inside each row's diagonal block come from exact dot products, and
// everything older runs through the delta recursion. Score column 0 rides on
// the dense basis product, so the heavily attended first position is exact
// at any threshold. Returns output, flagged scores, the populated cache, and
// a report whose sparsity/MAC fields are filled in.
template <typename T>
PrefillResult<T> prefill_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                   const HybridConfig& cfg) {
    cfg.validate();
    detail::check_prefill_shapes(q, k, v);
    if (cfg.strategy != ConstructionStrategy::TopDownKey)
        throw ConfigError("prefill_attention: production path requires the top-down-key "
                          "strategy; use prefill_attention_ablation for query-delta runs");
    const std::size_t n = q.rows();
    const std::size_t d = q.cols();
    const std::size_t w = prefill_window(n, cfg.gamma, cfg.w_max);
    const T theta = static_cast<T>(cfg.theta);
    const T scale = T{1} / std::sqrt(static_cast<T>(d));

    DeltaEncoding<T> enc = build_delta_encoding(k, theta, EncodeDirection::TopDown);

    PrefillResult<T> res;
    res.window = w;
    res.scores = ScoreMatrix<T>(n, n, Exactness::Masked);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = res.scores.scores.row(i);
        const std::size_t block_start = (i / w) * w;
        if (block_start > 0) {
            MacCounter rowc;
            detail::score_row_recursion<T>(q.row(i), enc.basis, enc.columns, block_start - 1,
                                           row, rowc);
            res.mac_basis.mac += d;
            res.mac_delta.mac += rowc.mac - d;
            res.mac_delta.skipped += rowc.skipped;
        }
        for (std::size_t j = block_start; j <= i; ++j) {
            row[j] = dot(q.row(i), k.row(j));
            res.mac_exact.mac += d;
        }
        for (std::size_t j = 0; j <= i; ++j) {
            row[j] *= scale;
            res.scores.set_flag(i, j, j < block_start ? Exactness::Approximate : Exactness::Full);
        }
    }

    res.output = detail::finish_attention(res.scores, v);
    res.report = detail::make_stage_report(Stage::Prefill, n, w, enc.total_nnz(), d,
                                              enc.columns.size(), res.mac_delta, res.mac_basis,
                                              res.mac_exact);

    DeltaKVCache<T> cache;
    cache.w_d = cfg.w_d;
    cache.basis = enc.basis;
    cache.delta_columns = std::move(enc.columns);
    const std::size_t ring = std::min(cfg.w_d, n);
    for (std::size_t p = n - ring; p < n; ++p)
        cache.exact_ring.emplace_back(p, std::vector<T>(k.row(p).begin(), k.row(p).end()));
    cache.values.reserve(n);
    for (std::size_t p = 0; p < n; ++p)
        cache.values.emplace_back(v.row(p).begin(), v.row(p).end());
    cache.state = std::move(enc.terminal_state);
    res.cache = std::move(cache);
    return res;
}

// Ablation prefill for the query-delta strategies. The same column kernel
// runs on transposed operands (keys as "queries" against the encoded query
// sequence), which yields the whole n x n rectangle; cells inside diagonal
// blocks are then recomputed exactly. Top-down encoding leaves score row 0
// exact, bottom-up the last row. No cache is produced: query deltas cannot
// serve decoding, where the query is always new.
template <typename T>
PrefillResult<T> prefill_attention_ablation(const Matrix<T>& q, const Matrix<T>& k,
                                            const Matrix<T>& v, const HybridConfig& cfg) {
    cfg.validate();
    detail::check_prefill_shapes(q, k, v);
    if (cfg.strategy == ConstructionStrategy::TopDownKey)
        throw ConfigError("prefill_attention_ablation: use prefill_attention for the "
                          "top-down-key strategy");
    const bool bottom_up = cfg.strategy == ConstructionStrategy::BottomUpQuery;
    const std::size_t n = q.rows();
    const std::size_t d = q.cols();
    const std::size_t w = prefill_window(n, cfg.gamma, cfg.w_max);
    const T theta = static_cast<T>(cfg.theta);
    const T scale = T{1} / std::sqrt(static_cast<T>(d));

    DeltaEncoding<T> enc = build_delta_encoding(
        q, theta, bottom_up ? EncodeDirection::BottomUp : EncodeDirection::TopDown);

    MacCounter kernel;
    ScoreMatrix<T> transposed = delta_score_columns(k, enc, kernel);

    PrefillResult<T> res;
    res.window = w;
    res.mac_basis.mac = static_cast<std::uint64_t>(n) * d;
    res.mac_delta.mac = kernel.mac - res.mac_basis.mac;
    res.mac_delta.skipped = kernel.skipped;

    const std::size_t exact_row = bottom_up ? n - 1 : 0;
    res.scores = ScoreMatrix<T>(n, n, Exactness::Masked);
    for (std::size_t i = 0; i < n; ++i) {
        // Encoding order t maps to query row i: t == i top-down, t == n-1-i bottom-up.
        const std::size_t t = bottom_up ? n - 1 - i : i;
        for (std::size_t j = 0; j <= i; ++j) {
            T s = transposed.scores(j, t);
            Exactness e = block_membership(i, j, w);
            if (e == Exactness::Full) {
                s = dot(q.row(i), k.row(j));
                res.mac_exact.mac += d;
            } else if (i == exact_row) {
                e = Exactness::Full; // exact by construction, no recompute needed
            }
            res.scores.scores(i, j) = s * scale;
            res.scores.set_flag(i, j, e);
        }
    }

    res.output = detail::finish_attention(res.scores, v);
    res.report = detail::make_stage_report(Stage::Prefill, n, w, enc.total_nnz(), d,
                                              enc.columns.size(), res.mac_delta, res.mac_basis,
                                              res.mac_exact);
    return res;
}

template <typename T>
struct DecodeStepResult {
    std::vector<T> output;         // attention output for the new position
    std::vector<T> scores;         // scaled pre-softmax scores over all positions
    std::vector<Exactness> flags;  // Approximate for recursed history, Full in-window
    MacCounter mac_delta;
    MacCounter mac_basis;
    MacCounter mac_exact;
    std::size_t window = 0;        // positions scored exactly this step
    std::size_t nnz_added = 0;     // nonzeros in the delta column appended this step
    std::size_t position = 0;      // absolute position of the decoded token
};

// One autoregressive step. The new key is delta-encoded against the cache's
// running reference and appended; the trailing w_d positions (the new token
// included) are scored exactly from the ring, everything older through the
// delta recursion; one softmax spans both segments.
template <typename T>
DecodeStepResult<T> decode_step(std::span<const T> q_new, std::span<const T> k_new,
                                std::span<const T> v_new, DeltaKVCache<T>& cache,
                                const HybridConfig& cfg) {
    cfg.validate();
    if (cfg.strategy != ConstructionStrategy::TopDownKey)
        throw ConfigError("decode_step: query-delta strategies are prefill ablations and "
                          "cannot run in decode");
    if (!cache.initialized())
        throw StateError("decode_step: cache not initialized");
    if (cfg.w_d != cache.w_d)
        throw ConfigError("decode_step: config w_d differs from cache w_d");
    const std::size_t d = cache.d_head();
    if (q_new.size() != d || k_new.size() != d)
        throw ShapeError("decode_step: vector length differs from cache d_head");
    if (!cache.values.empty() && v_new.size() != cache.values.front().size())
        throw ShapeError("decode_step: value length differs from cached values");

    const T theta = static_cast<T>(cfg.theta);
    auto [delta, advanced] = delta_encode_step(k_new, cache.state, theta);
    cache.state = std::move(advanced);
    DecodeStepResult<T> res;
    res.nnz_added = delta.nnz();
    res.position = delta.index;
    cache_append(cache, std::move(delta), k_new, v_new);

    const std::size_t total = res.position + 1;
    const std::size_t window_start = total > cache.w_d ? total - cache.w_d : 0;
    res.window = total - window_start;
    res.scores.assign(total, T{0});
    res.flags.assign(total, Exactness::Full);
    if (window_start > 0) {
        detail::score_row_recursion<T>(q_new, cache.basis, cache.delta_columns,
                                       window_start - 1, std::span<T>(res.scores), res.mac_delta);
        res.mac_basis.mac += d;
        res.mac_delta.mac -= d;
        for (std::size_t j = 0; j < window_start; ++j)
            res.flags[j] = Exactness::Approximate;
    }
    for (std::size_t j = window_start; j < total; ++j) {
        res.scores[j] = dot(q_new, cache.ring_key(j));
        res.mac_exact.mac += d;
    }
    const T scale = T{1} / std::sqrt(static_cast<T>(d));
    for (T& s : res.scores)
        s *= scale;

    std::vector<T> probs = res.scores;
    softmax_inplace(std::span<T>(probs));
    res.output.assign(v_new.size(), T{0});
    for (std::size_t j = 0; j < total; ++j) {
        const auto& val = cache.values[j];
        for (std::size_t e = 0; e < val.size(); ++e)
            res.output[e] += probs[j] * val[e];
    }
    return res;
}

} // namespace deltattn
