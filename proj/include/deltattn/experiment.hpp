// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "deltattn/errors.hpp"
#include "deltattn/hybrid_attention.hpp"
#include "deltattn/matrix.hpp"
#include "deltattn/metrics.hpp"
#include "deltattn/synthetic.hpp"
#include "deltattn/tensor_io.hpp"

namespace deltattn {

inline const char* strategy_name(ConstructionStrategy s) {
    switch (s) {
    case ConstructionStrategy::TopDownQuery:
        return "top-down-query";
    case ConstructionStrategy::BottomUpQuery:
        return "bottom-up-query";
    case ConstructionStrategy::TopDownKey:
        return "top-down-key";
    }
    throw ConfigError("strategy_name: unknown strategy");
}

inline ConstructionStrategy strategy_from_name(const std::string& name) {
    if (name == "top-down-query")
        return ConstructionStrategy::TopDownQuery;
    if (name == "bottom-up-query")
        return ConstructionStrategy::BottomUpQuery;
    if (name == "top-down-key")
        return ConstructionStrategy::TopDownKey;
    throw ConfigError("unknown strategy: " + name);
}

inline const char* key_process_name(KeyProcess p) {
    switch (p) {
    case KeyProcess::IidGaussian:
        return "iid-gaussian";
    case KeyProcess::RandomWalk:
        return "random-walk";
    case KeyProcess::File:
        return "file";
    }
    throw ConfigError("key_process_name: unknown process");
}

inline KeyProcess key_process_from_name(const std::string& name) {
    if (name == "iid-gaussian")
        return KeyProcess::IidGaussian;
    if (name == "random-walk")
        return KeyProcess::RandomWalk;
    if (name == "file")
        return KeyProcess::File;
    throw ConfigError("unknown key process: " + name);
}

inline const char* scenario_name(Scenario s) {
    return s == Scenario::PrefillOnly ? "prefill-only" : "end-to-end";
}

inline Scenario scenario_from_name(const std::string& name) {
    if (name == "prefill-only")
        return Scenario::PrefillOnly;
    if (name == "end-to-end")
        return Scenario::EndToEnd;
    throw ConfigError("unknown scenario: " + name);
}

// Everything one run needs. Counts are validated to be >= 1; theta >= 0;
// gamma strictly inside (0, 1). file inputs replace the generator and carry
// their own heads/n/d_head, resolved before the run.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::size_t n = 64;
    std::size_t d_head = 32;
    std::size_t heads = 2;
    std::size_t decode_steps = 16;
    double theta = 0.1;
    double gamma = 0.1;
    double sigma = 0.05;
    std::size_t w_max = 64;
    std::size_t w_d = 4;
    ConstructionStrategy strategy = ConstructionStrategy::TopDownKey;
    KeyProcess key_process = KeyProcess::RandomWalk;
    Scenario scenario = Scenario::PrefillOnly;
    std::string q_file;
    std::string k_file;
    std::string v_file;

    std::size_t total_rows() const {
        return n + (scenario == Scenario::EndToEnd ? decode_steps : 0);
    }

    HybridConfig hybrid() const { return HybridConfig{theta, gamma, w_max, w_d, strategy}; }

    void validate() const {
        if (n == 0 || d_head == 0 || heads == 0 || decode_steps == 0)
            throw ConfigError("config: n, d_head, heads, decode_steps must all be >= 1");
        hybrid().validate();
        if (key_process == KeyProcess::RandomWalk && !(sigma > 0.0))
            throw ConfigError("config: random-walk keys need sigma > 0");
        if (key_process == KeyProcess::File &&
            (q_file.empty() || k_file.empty() || v_file.empty()))
            throw ConfigError("config: key_process=file needs q_file, k_file, v_file");
        if (scenario == Scenario::EndToEnd && strategy != ConstructionStrategy::TopDownKey)
            throw ConfigError("config: end-to-end runs require the top-down-key strategy");
    }
};

struct HeadTensors {
    MatrixF q;
    MatrixF k;
    MatrixF v;
};

// Synthetic per-head tensors, deterministic in (seed, head). Rows cover the
// prefill sequence plus, for end-to-end runs, one extra row per decode step.
// With key_process=file the tensors come from disk instead; the caller must
// have resolved heads/n/d_head against the file dims first (the CLI path
// does this via resolve_file_inputs). Validation here is limited to what
// generation itself needs; notably sigma = 0 is accepted (a random walk with
// no steps degenerates to constant keys), while run_experiment validates the
// full config.
inline std::vector<HeadTensors> gen_synthetic(const ExperimentConfig& cfg) {
    if (cfg.n == 0 || cfg.d_head == 0 || cfg.heads == 0 || cfg.decode_steps == 0)
        throw ConfigError("config: n, d_head, heads, decode_steps must all be >= 1");
    const std::size_t rows = cfg.total_rows();
    std::vector<HeadTensors> out;
    out.reserve(cfg.heads);
    if (cfg.key_process == KeyProcess::File) {
        const TensorData q = load_tensor(cfg.q_file);
        const TensorData k = load_tensor(cfg.k_file);
        const TensorData v = load_tensor(cfg.v_file);
        for (const TensorData* t : {&q, &k, &v})
            if (t->dims.size() != 3)
                throw ConfigError("config: file tensors must have rank 3 (heads, rows, dim)");
        if (q.dims[0] != cfg.heads || k.dims[0] != cfg.heads || v.dims[0] != cfg.heads)
            throw ConfigError("config: file tensor head count differs from configuration");
        if (q.dims[1] != rows || k.dims[1] != rows || v.dims[1] != rows)
            throw ConfigError("config: file tensor row count differs from n (+ decode_steps)");
        if (q.dims[2] != cfg.d_head || k.dims[2] != cfg.d_head)
            throw ConfigError("config: file tensor width differs from d_head");
        for (std::size_t h = 0; h < cfg.heads; ++h)
            out.push_back({q.matrix_at(h), k.matrix_at(h), v.matrix_at(h)});
        return out;
    }
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        HeadTensors ht;
        ht.q = gen_gaussian_matrix(cfg.seed, h, detail::TensorRole::Query, rows, cfg.d_head);
        ht.k = cfg.key_process == KeyProcess::IidGaussian
                   ? gen_gaussian_matrix(cfg.seed, h, detail::TensorRole::Key, rows, cfg.d_head)
                   : gen_random_walk_keys(cfg.seed, h, rows, cfg.d_head, cfg.sigma);
        ht.v = gen_gaussian_matrix(cfg.seed, h, detail::TensorRole::Value, rows, cfg.d_head);
        out.push_back(std::move(ht));
    }
    return out;
}

// Rewrites heads / n / d_head from the tensor files' dims so a file-driven
// run does not need them repeated on the command line.
inline void resolve_file_inputs(ExperimentConfig& cfg) {
    if (cfg.key_process != KeyProcess::File)
        return;
    if (cfg.q_file.empty() || cfg.k_file.empty() || cfg.v_file.empty())
        throw ConfigError("config: key_process=file needs q_file, k_file, v_file");
    const TensorData q = load_tensor(cfg.q_file);
    if (q.dims.size() != 3)
        throw ConfigError("config: file tensors must have rank 3 (heads, rows, dim)");
    cfg.heads = q.dims[0];
    cfg.d_head = q.dims[2];
    const std::size_t rows = q.dims[1];
    const std::size_t tail = cfg.scenario == Scenario::EndToEnd ? cfg.decode_steps : 0;
    if (rows <= tail)
        throw ConfigError("config: file tensor rows leave no prefill positions");
    cfg.n = rows - tail;
}

struct RunResult {
    AttentionReport prefill_report;
    std::optional<AttentionReport> decode_report;
    TensorData prefill_output;               // heads x n x d_value
    std::optional<TensorData> decode_output; // heads x decode_steps x d_value

    const AttentionReport& primary_report() const {
        return decode_report ? *decode_report : prefill_report;
    }
};

namespace detail {

struct HeadOutcome {
    MatrixF prefill_out;
    AttentionReport prefill_rep;
    MatrixF decode_out; // one row per decode step
    AttentionReport decode_rep;
};

inline MatrixF first_rows(const MatrixF& m, std::size_t count) {
    MatrixF out(count, m.cols());
    std::copy(m.data().begin(), m.data().begin() + count * m.cols(), out.data().begin());
    return out;
}

inline double max_abs_row_diff(std::span<const float> a, std::span<const float> b) {
    double worst = 0.0;
    for (std::size_t e = 0; e < a.size(); ++e)
        worst = std::max(worst, std::abs(static_cast<double>(a[e]) - static_cast<double>(b[e])));
    return worst;
}

// Runs one head end to end against the exact oracle computed in lockstep.
inline HeadOutcome run_head(const ExperimentConfig& cfg, const HeadTensors& t) {
    const HybridConfig hc = cfg.hybrid();
    const std::size_t n = cfg.n;
    HeadOutcome out;

    const MatrixF q_pre = first_rows(t.q, n);
    const MatrixF k_pre = first_rows(t.k, n);
    const MatrixF v_pre = first_rows(t.v, n);
    PrefillResult<float> pre = cfg.strategy == ConstructionStrategy::TopDownKey
                                   ? prefill_attention(q_pre, k_pre, v_pre, hc)
                                   : prefill_attention_ablation(q_pre, k_pre, v_pre, hc);
    const MatrixF oracle_scores = dense_scores(q_pre, k_pre);
    const MatrixF oracle_out = dense_attention(q_pre, k_pre, v_pre, true);
    pre.report.score_err = compare_to_oracle(pre.scores, oracle_scores);
    for (std::size_t i = 0; i < n; ++i)
        pre.report.output_err_max = std::max(
            pre.report.output_err_max, max_abs_row_diff(pre.output.row(i), oracle_out.row(i)));
    out.prefill_out = std::move(pre.output);
    out.prefill_rep = pre.report;

    if (cfg.scenario != Scenario::EndToEnd)
        return out;

    DeltaKVCache<float> cache = std::move(*pre.cache);
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.d_head));
    out.decode_out = MatrixF(cfg.decode_steps, t.v.cols());
    MacCounter mac_delta, mac_basis, mac_exact;
    ErrorStats score_err;
    double output_err_max = 0.0;
    for (std::size_t s = 0; s < cfg.decode_steps; ++s) {
        const std::size_t r = n + s;
        DecodeStepResult<float> step =
            decode_step(t.q.row(r), t.k.row(r), t.v.row(r), cache, hc);
        for (std::size_t j = 0; j <= r; ++j) {
            const float exact = dot(t.q.row(r), t.k.row(j)) * scale;
            score_err.add(static_cast<double>(step.scores[j]), static_cast<double>(exact));
        }
        const std::vector<float> oracle_row = dense_attention_row(t.q.row(r), t.k, t.v, r + 1);
        output_err_max = std::max(output_err_max,
                                  max_abs_row_diff(step.output, oracle_row));
        std::copy(step.output.begin(), step.output.end(), out.decode_out.row(s).begin());
        mac_delta += step.mac_delta;
        mac_basis += step.mac_basis;
        mac_exact += step.mac_exact;
    }
    std::uint64_t nnz = 0;
    for (const auto& col : cache.delta_columns)
        nnz += col.nnz();
    out.decode_rep = make_stage_report(Stage::Decode, cache.positions(), cfg.w_d, nnz,
                                       cfg.d_head, cache.delta_columns.size(), mac_delta,
                                       mac_basis, mac_exact);
    out.decode_rep.score_err = score_err;
    out.decode_rep.output_err_max = output_err_max;
    return out;
}

} // namespace detail

// Executes the configured scenario on every head (heads run on their own
// threads, merged in head order afterwards) and reports against the dense
// oracle evaluated on the same tensors.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<HeadTensors> tensors = gen_synthetic(cfg);
    std::vector<detail::HeadOutcome> outcomes(cfg.heads);
    std::vector<std::exception_ptr> failures(cfg.heads);
    {
        std::vector<std::thread> workers;
        workers.reserve(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h)
            workers.emplace_back([&, h] {
                try {
                    outcomes[h] = detail::run_head(cfg, tensors[h]);
                } catch (...) {
                    failures[h] = std::current_exception();
                }
            });
        for (auto& w : workers)
            w.join();
    }
    for (const auto& f : failures)
        if (f)
            std::rethrow_exception(f);

    RunResult res;
    std::vector<AttentionReport> reps;
    reps.reserve(cfg.heads);
    for (const auto& o : outcomes)
        reps.push_back(o.prefill_rep);
    res.prefill_report = merge_reports(reps);

    const std::size_t d_value = outcomes[0].prefill_out.cols();
    res.prefill_output.dims = {cfg.heads, cfg.n, d_value};
    res.prefill_output.data.reserve(cfg.heads * cfg.n * d_value);
    for (const auto& o : outcomes)
        res.prefill_output.data.insert(res.prefill_output.data.end(),
                                       o.prefill_out.data().begin(), o.prefill_out.data().end());

    if (cfg.scenario == Scenario::EndToEnd) {
        reps.clear();
        for (const auto& o : outcomes)
            reps.push_back(o.decode_rep);
        res.decode_report = merge_reports(reps);
        TensorData dec;
        dec.dims = {cfg.heads, cfg.decode_steps, d_value};
        dec.data.reserve(cfg.heads * cfg.decode_steps * d_value);
        for (const auto& o : outcomes)
            dec.data.insert(dec.data.end(), o.decode_out.data().begin(),
                            o.decode_out.data().end());
        res.decode_output = std::move(dec);
    }
    return res;
}

// Text formatting shared by the JSON report and the sweep CSV. Floats are
// printed with 9 significant digits, enough for an exact f32 round trip;
// doubles with 17 for the same reason. Deterministic for identical values.
namespace detail {

inline std::string fmt_f32(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

inline std::string fmt_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline nlohmann::ordered_json report_to_json(const AttentionReport& r) {
    nlohmann::ordered_json j;
    j["stage"] = stage_name(r.stage);
    j["n"] = r.n;
    j["window"] = r.window;
    j["s_m"] = r.s_m;
    j["s_m_incl_basis"] = r.s_m_incl_basis;
    j["s_c"] = r.s_c;
    j["mac_used"] = r.mac_used;
    j["mac_skipped"] = r.mac_skipped;
    j["delta_nnz"] = r.delta_nnz;
    j["delta_elems"] = r.delta_elems;
    j["basis_elems"] = r.basis_elems;
    j["err_max_abs"] = r.err_max_abs();
    j["err_mean_abs"] = r.err_mean_abs();
    j["err_frobenius_rel"] = r.err_frobenius_rel();
    j["output_err_max"] = r.output_err_max;
    j["err_count"] = r.score_err.count;
    j["s_m_degenerate"] = r.s_m_degenerate;
    j["window_clamped"] = r.window_clamped;
    return j;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["n"] = cfg.n;
    j["d_head"] = cfg.d_head;
    j["heads"] = cfg.heads;
    j["decode_steps"] = cfg.decode_steps;
    j["theta"] = cfg.theta;
    j["gamma"] = cfg.gamma;
    j["sigma"] = cfg.sigma;
    j["w_max"] = cfg.w_max;
    j["w_d"] = cfg.w_d;
    j["strategy"] = strategy_name(cfg.strategy);
    j["key_process"] = key_process_name(cfg.key_process);
    j["scenario"] = scenario_name(cfg.scenario);
    if (cfg.key_process == KeyProcess::File) {
        j["q_file"] = cfg.q_file;
        j["k_file"] = cfg.k_file;
        j["v_file"] = cfg.v_file;
    }
    return j;
}

// Full run report. `stamp` adds a wall-clock timestamp to the metadata;
// it defaults off so identical runs produce identical bytes.
inline std::string report_json_text(const ExperimentConfig& cfg, const RunResult& res,
                                    bool stamp = false) {
    nlohmann::ordered_json j;
    j["tool"] = "deltattn";
    j["format_version"] = 1;
    if (stamp) {
        char buf[64];
        const std::time_t now = std::time(nullptr);
        std::tm tm_utc{};
        gmtime_r(&now, &tm_utc);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
        j["timestamp"] = buf;
    }
    j["config"] = config_to_json(cfg);
    j["prefill"] = report_to_json(res.prefill_report);
    if (res.decode_report)
        j["decode"] = report_to_json(*res.decode_report);
    std::uint64_t used = res.prefill_report.mac_used;
    std::uint64_t skipped = res.prefill_report.mac_skipped;
    if (res.decode_report) {
        used += res.decode_report->mac_used;
        skipped += res.decode_report->mac_skipped;
    }
    j["totals"] = {{"mac_used", used}, {"mac_skipped", skipped}};
    j["notes"] = {
        "the basis position is stored dense and thresholded deltas start at position 1; "
        "s_m excludes the basis while s_m_incl_basis includes it",
        "error fields compare against the exact attention oracle on the same tensors; "
        "no task-level accuracy is measured",
    };
    return j.dump(2) + "\n";
}

// Sweep CSV. Column order is part of the tool's contract:
//   theta,gamma,w_d,stage,n,window,s_m,s_c,err_max_abs,err_mean_abs,
//   err_frobenius_rel,output_err_max,mac_used,mac_skipped
// One row per (theta, gamma, w_d) combination, theta outermost, w_d
// innermost. The row carries the scenario's final stage: prefill for
// prefill-only runs, decode for end-to-end runs.
inline const char* sweep_csv_header() {
    return "theta,gamma,w_d,stage,n,window,s_m,s_c,err_max_abs,err_mean_abs,"
           "err_frobenius_rel,output_err_max,mac_used,mac_skipped";
}

inline std::string sweep_csv_row(const ExperimentConfig& cfg, const AttentionReport& r) {
    std::ostringstream os;
    os << detail::fmt_f64(cfg.theta) << ',' << detail::fmt_f64(cfg.gamma) << ',' << cfg.w_d
       << ',' << stage_name(r.stage) << ',' << r.n << ',' << r.window << ','
       << detail::fmt_f32(r.s_m) << ',' << detail::fmt_f32(r.s_c) << ','
       << detail::fmt_f64(r.err_max_abs()) << ',' << detail::fmt_f64(r.err_mean_abs()) << ','
       << detail::fmt_f64(r.err_frobenius_rel()) << ',' << detail::fmt_f64(r.output_err_max)
       << ',' << r.mac_used << ',' << r.mac_skipped;
    return os.str();
}

inline std::string sweep(const ExperimentConfig& base, const std::vector<double>& thetas,
                         const std::vector<double>& gammas,
                         const std::vector<std::size_t>& w_ds) {
    if (thetas.empty() || gammas.empty() || w_ds.empty())
        throw ConfigError("sweep: every parameter list needs at least one value");
    std::ostringstream os;
    os << sweep_csv_header() << '\n';
    for (double theta : thetas)
        for (double gamma : gammas)
            for (std::size_t w_d : w_ds) {
                ExperimentConfig cfg = base;
                cfg.theta = theta;
                cfg.gamma = gamma;
                cfg.w_d = w_d;
                const RunResult res = run_experiment(cfg);
                os << sweep_csv_row(cfg, res.primary_report()) << '\n';
            }
    return os.str();
}

// Heatmap emission: a plain CSV grid. Exactness maps use 0=masked,
// 1=approximate, 2=full.
inline void dump_heatmap(const MatrixF& m, const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw IoError("dump_heatmap: cannot open " + path);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j)
            os << (j ? "," : "") << detail::fmt_f32(m(i, j));
        os << '\n';
    }
    if (!os)
        throw IoError("dump_heatmap: write failed for " + path);
}

template <typename T>
void dump_exactness(const ScoreMatrix<T>& sm, const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw IoError("dump_exactness: cannot open " + path);
    for (std::size_t i = 0; i < sm.rows(); ++i) {
        for (std::size_t j = 0; j < sm.cols(); ++j)
            os << (j ? "," : "") << static_cast<int>(sm.flag(i, j));
        os << '\n';
    }
    if (!os)
        throw IoError("dump_exactness: write failed for " + path);
}

struct ExactnessGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Exactness> flags;

    Exactness at(std::size_t i, std::size_t j) const { return flags[i * cols + j]; }
};

inline ExactnessGrid load_exactness_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("load_exactness_csv: cannot open " + path);
    ExactnessGrid grid;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::size_t cols = 0;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell != "0" && cell != "1" && cell != "2")
                throw IoError("load_exactness_csv: bad cell '" + cell + "' in " + path);
            grid.flags.push_back(static_cast<Exactness>(cell[0] - '0'));
            ++cols;
        }
        if (grid.rows == 0)
            grid.cols = cols;
        else if (cols != grid.cols)
            throw IoError("load_exactness_csv: ragged rows in " + path);
        ++grid.rows;
    }
    return grid;
}

} // namespace deltattn
