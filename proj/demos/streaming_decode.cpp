// SPDX-License-Identifier: Apache-2.0
//
// Walkthrough of the library's two phases on one attention head.
//
// Prefill: keys from a slowly drifting stream are delta-encoded while the
// scores are computed block-exactly, everything older through the delta
// recursion. Decode: the populated cache serves autoregressive steps, each
// new key appended as a sparse delta column. Every number printed is
// measured against the dense oracle computed on the same tensors.

#include <cstdio>

#include "deltattn/deltattn.hpp"

using namespace deltattn;

int main() {
    const std::size_t n = 128;
    const std::size_t d = 32;
    const std::size_t steps = 8;

    const MatrixF q = gen_gaussian_matrix(7, 0, detail::TensorRole::Query, n + steps, d);
    const MatrixF k = gen_random_walk_keys(7, 0, n + steps, d, 0.05);
    const MatrixF v = gen_gaussian_matrix(7, 0, detail::TensorRole::Value, n + steps, d);

    HybridConfig cfg;
    cfg.theta = 0.1;
    cfg.gamma = 0.1;   // prefill window: floor(0.1 * 128) = 12
    cfg.w_d = 4;       // decode keeps the last 4 keys exact

    MatrixF q_pre(n, d), k_pre(n, d), v_pre(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t e = 0; e < d; ++e) {
            q_pre(i, e) = q(i, e);
            k_pre(i, e) = k(i, e);
            v_pre(i, e) = v(i, e);
        }

    PrefillResult<float> pre = prefill_attention(q_pre, k_pre, v_pre, cfg);
    const MatrixF oracle = dense_attention(q_pre, k_pre, v_pre, true);
    pre.report.score_err = compare_to_oracle(pre.scores, dense_scores(q_pre, k_pre));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t e = 0; e < d; ++e) {
            const double diff = std::abs(double(pre.output(i, e)) - double(oracle(i, e)));
            if (diff > pre.report.output_err_max)
                pre.report.output_err_max = diff;
        }

    std::printf("prefill  n=%zu window=%zu\n", n, pre.window);
    std::printf("  element sparsity      %.3f (incl. basis %.3f)\n",
                double(pre.report.s_m), double(pre.report.s_m_incl_basis));
    std::printf("  effective sparsity    %.3f\n", double(pre.report.s_c));
    std::printf("  macs used / skipped   %llu / %llu\n",
                (unsigned long long)pre.report.mac_used,
                (unsigned long long)pre.report.mac_skipped);
    std::printf("  score err (max, frob) %.2e, %.2e\n", pre.report.err_max_abs(),
                pre.report.err_frobenius_rel());
    std::printf("  output err max        %.2e\n", pre.report.output_err_max);

    DeltaKVCache<float> cache = std::move(*pre.cache);
    const CacheMemoryReport mem = cache_memory_report(cache);
    std::printf("cache    delta %llu + exact %llu scalars vs dense %llu\n",
                (unsigned long long)mem.delta_scalars, (unsigned long long)mem.exact_scalars,
                (unsigned long long)mem.dense_equivalent);

    const float scale = 1.0f / std::sqrt(float(d));
    for (std::size_t s = 0; s < steps; ++s) {
        const std::size_t r = n + s;
        DecodeStepResult<float> step = decode_step(q.row(r), k.row(r), v.row(r), cache, cfg);
        double err = 0.0;
        for (std::size_t j = 0; j <= r; ++j) {
            const double exact = double(dot(q.row(r), k.row(j)) * scale);
            err = std::max(err, std::abs(double(step.scores[j]) - exact));
        }
        std::printf("decode   pos=%zu nnz added=%zu/%zu score err max=%.2e\n", step.position,
                    step.nnz_added, d, err);
    }
    return 0;
}
