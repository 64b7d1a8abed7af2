// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "deltattn/experiment.hpp"
#include "deltattn/rng.hpp"

namespace deltattn {

namespace selftest {

// Values on the 2^-10 grid with |x| <= 16. Sums and differences of such
// values are exactly representable in float, which makes the bitwise checks
// below meaningful instead of flaky.
inline MatrixF grid_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    Xoshiro256pp rng(derive_stream_seed(seed, 900));
    MatrixF m(rows, cols);
    for (float& v : m.data()) {
        const auto q = static_cast<std::int64_t>(rng.next() % 32769) - 16384;
        v = static_cast<float>(q) / 1024.0f;
    }
    return m;
}

struct Check {
    const char* name;
    std::function<bool()> body;
};

inline std::vector<Check> checks() {
    std::vector<Check> cs;

    cs.push_back({"dot product accumulates in index order", [] {
        const std::vector<float> a{0.1f, 0.2f, 0.3f};
        const std::vector<float> b{1.0f, 10.0f, 100.0f};
        const float expect = (0.1f * 1.0f + 0.2f * 10.0f) + 0.3f * 100.0f;
        return dot(std::span<const float>(a), std::span<const float>(b)) == expect;
    }});

    cs.push_back({"softmax matches reference distribution", [] {
        std::vector<double> x{1.0, 2.0, 3.0};
        softmax_inplace(std::span<double>(x));
        const double ref[3] = {0.09003057317038046, 0.24472847105479767,
                               0.6652409557748219};
        for (std::size_t i = 0; i < 3; ++i)
            if (std::abs(x[i] - ref[i]) > 1e-15)
                return false;
        return true;
    }});

    cs.push_back({"zero threshold reconstructs keys bit-exactly", [] {
        const MatrixF k = grid_matrix(7, 16, 8);
        const DeltaEncoding<float> enc =
            build_delta_encoding(k, 0.0f, EncodeDirection::TopDown);
        return reconstruct(enc) == k;
    }});

    cs.push_back({"delta scores stay within the threshold bound", [] {
        const float theta = 0.1f;
        const MatrixF k = gen_random_walk_keys(11, 0, 32, 16, 0.05);
        const MatrixF q = gen_gaussian_matrix(11, 0, detail::TensorRole::Query, 4, 16);
        const DeltaEncoding<float> enc =
            build_delta_encoding(k, theta, EncodeDirection::TopDown);
        MacCounter mc;
        const ScoreMatrix<float> s = delta_score_columns(q, enc, mc);
        for (std::size_t i = 0; i < q.rows(); ++i) {
            float norm1 = 0.0f;
            for (float v : q.row(i))
                norm1 += std::abs(v);
            const double bound = static_cast<double>(theta) * norm1 * 1.0001 + 1e-5;
            for (std::size_t j = 0; j < k.rows(); ++j) {
                const float exact = dot(q.row(i), k.row(j));
                if (std::abs(static_cast<double>(s.scores(i, j) - exact)) > bound)
                    return false;
            }
        }
        return true;
    }});

    cs.push_back({"single query recursion matches matrix recursion bit-exactly", [] {
        const MatrixF k = gen_random_walk_keys(13, 0, 24, 8, 0.05);
        const MatrixF q = gen_gaussian_matrix(13, 0, detail::TensorRole::Query, 3, 8);
        const DeltaEncoding<float> enc =
            build_delta_encoding(k, 0.1f, EncodeDirection::TopDown);
        MacCounter m1, m2;
        const ScoreMatrix<float> full = delta_score_columns(q, enc, m1);
        const std::vector<float> one = delta_score_single_query(q.row(2), enc, 10, m2);
        for (std::size_t t = 0; t <= 10; ++t)
            if (one[t] != full.scores(2, t))
                return false;
        return true;
    }});

    cs.push_back({"hybrid prefill matches dense attention at zero threshold", [] {
        const std::size_t n = 24, d = 8;
        const MatrixF q = gen_gaussian_matrix(17, 0, detail::TensorRole::Query, n, d);
        const MatrixF k = gen_gaussian_matrix(17, 0, detail::TensorRole::Key, n, d);
        const MatrixF v = gen_gaussian_matrix(17, 0, detail::TensorRole::Value, n, d);
        HybridConfig hc;
        hc.theta = 0.0;
        hc.gamma = 0.25;
        const PrefillResult<float> pre = prefill_attention(q, k, v, hc);
        const MatrixF oracle = dense_attention(q, k, v, true);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t e = 0; e < d; ++e)
                if (std::abs(pre.output(i, e) - oracle(i, e)) > 1e-4f)
                    return false;
        return true;
    }});

    cs.push_back({"decode window scores are exact", [] {
        const std::size_t n = 8, d = 8;
        const MatrixF q = gen_gaussian_matrix(19, 0, detail::TensorRole::Query, n + 1, d);
        const MatrixF k = gen_gaussian_matrix(19, 0, detail::TensorRole::Key, n + 1, d);
        const MatrixF v = gen_gaussian_matrix(19, 0, detail::TensorRole::Value, n + 1, d);
        HybridConfig hc;
        hc.theta = 0.2;
        hc.gamma = 0.25;
        hc.w_d = 4;
        PrefillResult<float> pre = prefill_attention(detail::first_rows(q, n),
                                                     detail::first_rows(k, n),
                                                     detail::first_rows(v, n), hc);
        DeltaKVCache<float> cache = std::move(*pre.cache);
        const DecodeStepResult<float> step =
            decode_step(q.row(n), k.row(n), v.row(n), cache, hc);
        const float scale = 1.0f / std::sqrt(static_cast<float>(d));
        for (std::size_t j = n + 1 - hc.w_d; j <= n; ++j)
            if (step.scores[j] != dot(q.row(n), k.row(j)) * scale)
                return false;
        return true;
    }});

    cs.push_back({"cache survives a save and load round trip", [] {
        const std::size_t n = 12, d = 8;
        const MatrixF q = gen_gaussian_matrix(23, 0, detail::TensorRole::Query, n, d);
        const MatrixF k = gen_random_walk_keys(23, 0, n, d, 0.05);
        const MatrixF v = gen_gaussian_matrix(23, 0, detail::TensorRole::Value, n, d);
        HybridConfig hc;
        hc.theta = 0.1;
        hc.gamma = 0.25;
        PrefillResult<float> pre = prefill_attention(q, k, v, hc);
        const std::filesystem::path path =
            std::filesystem::temp_directory_path() / "deltattn-selftest-cache.dkvc";
        save_cache(*pre.cache, path.string());
        const DeltaKVCache<float> back = load_cache(path.string());
        std::filesystem::remove(path);
        return back == *pre.cache;
    }});

    cs.push_back({"mac accounting covers the causal triangle", [] {
        const std::size_t n = 32, d = 16;
        const MatrixF q = gen_gaussian_matrix(29, 0, detail::TensorRole::Query, n, d);
        const MatrixF k = gen_random_walk_keys(29, 0, n, d, 0.05);
        const MatrixF v = gen_gaussian_matrix(29, 0, detail::TensorRole::Value, n, d);
        HybridConfig hc;
        hc.theta = 0.1;
        hc.gamma = 0.2;
        const PrefillResult<float> pre = prefill_attention(q, k, v, hc);
        const std::uint64_t dense = static_cast<std::uint64_t>(d) * n * (n + 1) / 2;
        return pre.report.mac_used + pre.report.mac_skipped == dense;
    }});

    cs.push_back({"sparsity discount uses the window fraction", [] {
        return computational_sparsity(0.8f, 4, 16) == 0.6f;
    }});

    return cs;
}

} // namespace selftest

inline int run_selftest(std::ostream& os) {
    bool all_ok = true;
    for (const auto& check : selftest::checks()) {
        bool ok = false;
        std::string note;
        try {
            ok = check.body();
        } catch (const std::exception& e) {
            note = std::string(" (") + e.what() + ")";
        }
        os << (ok ? "ok - " : "FAIL - ") << check.name << note << '\n';
        all_ok = all_ok && ok;
    }
    os << (all_ok ? "selftest passed" : "selftest failed") << '\n';
    return all_ok ? 0 : 4;
}

namespace detail {

struct CliState {
    ExperimentConfig cfg;
    std::string strategy = "top-down-key";
    std::string key_process = "random-walk";
    std::string scenario = "prefill-only";
    std::string config_path;
    std::string out_prefix;
    bool stamp = false;
    std::vector<double> thetas;
    std::vector<double> gammas;
    std::vector<std::size_t> w_ds;
    std::string out;
    std::string kind = "exactness";
};

inline void add_experiment_options(CLI::App* sub, CliState& st) {
    sub->add_option("--config", st.config_path,
                    "read options from a config file (flat key=value lines, # comments); "
                    "command-line flags win");
    sub->add_option("--seed", st.cfg.seed, "rng seed");
    sub->add_option("--n", st.cfg.n, "prefill sequence length");
    sub->add_option("--d_head", st.cfg.d_head, "head dimension");
    sub->add_option("--heads", st.cfg.heads, "number of attention heads");
    sub->add_option("--decode_steps", st.cfg.decode_steps,
                    "decode steps for end-to-end runs");
    sub->add_option("--theta", st.cfg.theta, "delta threshold (>= 0)");
    sub->add_option("--gamma", st.cfg.gamma, "prefill window fraction, strictly in (0, 1)");
    sub->add_option("--sigma", st.cfg.sigma, "random-walk step scale");
    sub->add_option("--w_max", st.cfg.w_max, "prefill window cap");
    sub->add_option("--w_d", st.cfg.w_d, "decode window: trailing keys kept exact");
    sub->add_option("--strategy", st.strategy,
                    "top-down-key | top-down-query | bottom-up-query");
    sub->add_option("--key_process", st.key_process, "random-walk | iid-gaussian | file");
    sub->add_option("--scenario", st.scenario, "prefill-only | end-to-end");
    sub->add_option("--q_file", st.cfg.q_file, "query tensor file (key_process=file)");
    sub->add_option("--k_file", st.cfg.k_file, "key tensor file (key_process=file)");
    sub->add_option("--v_file", st.cfg.v_file, "value tensor file (key_process=file)");
}

inline void resolve_enums(CliState& st) {
    st.cfg.strategy = strategy_from_name(st.strategy);
    st.cfg.key_process = key_process_from_name(st.key_process);
    st.cfg.scenario = scenario_from_name(st.scenario);
}

// Applies key=value pairs from --config to options the command line left unset.
// CLI11 only reads config files attached to the root app, and routing values to a
// subcommand from there needs INI sections, so the flat file is handled here instead.
inline void apply_config_file(const CLI::App& sub, CliState& st) {
    if (st.config_path.empty())
        return;
    std::ifstream is(st.config_path);
    if (!is)
        throw IoError("cannot open " + st.config_path);

    const auto trim = [](const std::string& s) {
        const std::size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos)
            return std::string();
        const std::size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    const auto parse_u64 = [&](const std::string& v, const std::string& key) -> std::uint64_t {
        std::size_t used = 0;
        unsigned long long r = 0;
        try {
            r = std::stoull(v, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != v.size())
            throw ConfigError("config file: bad integer for " + key + ": '" + v + "'");
        return r;
    };
    const auto parse_f64 = [&](const std::string& v, const std::string& key) -> double {
        std::size_t used = 0;
        double r = 0.0;
        try {
            r = std::stod(v, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != v.size())
            throw ConfigError("config file: bad number for " + key + ": '" + v + "'");
        return r;
    };

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos)
            line.erase(comment);
        line = trim(line);
        if (line.empty())
            continue;
        const std::string where = st.config_path + " line " + std::to_string(lineno);
        if (line.front() == '[')
            throw ConfigError("config file: sections are not supported, use flat key=value ("
                              + where + ")");
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file: expected key=value (" + where + ")");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config file: empty key (" + where + ")");

        const bool known =
            key == "seed" || key == "n" || key == "d_head" || key == "heads"
            || key == "decode_steps" || key == "theta" || key == "gamma" || key == "sigma"
            || key == "w_max" || key == "w_d" || key == "strategy" || key == "key_process"
            || key == "scenario" || key == "q_file" || key == "k_file" || key == "v_file";
        if (!known)
            throw ConfigError("config file: unknown key '" + key + "' (" + where + ")");
        if (sub.count("--" + key) > 0)
            continue;

        if (key == "seed")
            st.cfg.seed = parse_u64(value, key);
        else if (key == "n")
            st.cfg.n = parse_u64(value, key);
        else if (key == "d_head")
            st.cfg.d_head = parse_u64(value, key);
        else if (key == "heads")
            st.cfg.heads = parse_u64(value, key);
        else if (key == "decode_steps")
            st.cfg.decode_steps = parse_u64(value, key);
        else if (key == "theta")
            st.cfg.theta = parse_f64(value, key);
        else if (key == "gamma")
            st.cfg.gamma = parse_f64(value, key);
        else if (key == "sigma")
            st.cfg.sigma = parse_f64(value, key);
        else if (key == "w_max")
            st.cfg.w_max = parse_u64(value, key);
        else if (key == "w_d")
            st.cfg.w_d = parse_u64(value, key);
        else if (key == "strategy")
            st.strategy = value;
        else if (key == "key_process")
            st.key_process = value;
        else if (key == "scenario")
            st.scenario = value;
        else if (key == "q_file")
            st.cfg.q_file = value;
        else if (key == "k_file")
            st.cfg.k_file = value;
        else
            st.cfg.v_file = value;
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot open " + path);
    os << text;
    if (!os)
        throw IoError("write failed for " + path);
}

inline int cmd_gen(const CLI::App& sub, CliState& st, std::ostream& os) {
    apply_config_file(sub, st);
    resolve_enums(st);
    if (st.cfg.key_process == KeyProcess::File)
        throw ConfigError("gen: key_process=file would copy its inputs back out");
    const std::vector<HeadTensors> tensors = gen_synthetic(st.cfg);
    const std::size_t rows = st.cfg.total_rows();
    TensorData q, k, v;
    for (TensorData* t : {&q, &k, &v}) {
        t->dims = {st.cfg.heads, rows, st.cfg.d_head};
        t->data.reserve(st.cfg.heads * rows * st.cfg.d_head);
    }
    for (const HeadTensors& ht : tensors) {
        q.data.insert(q.data.end(), ht.q.data().begin(), ht.q.data().end());
        k.data.insert(k.data.end(), ht.k.data().begin(), ht.k.data().end());
        v.data.insert(v.data.end(), ht.v.data().begin(), ht.v.data().end());
    }
    const std::string paths[3] = {st.out_prefix + "_q.dtns", st.out_prefix + "_k.dtns",
                                  st.out_prefix + "_v.dtns"};
    save_tensor(q, paths[0]);
    save_tensor(k, paths[1]);
    save_tensor(v, paths[2]);
    for (const std::string& p : paths)
        os << "wrote " << st.cfg.heads << "x" << rows << "x" << st.cfg.d_head << " tensor to "
           << p << '\n';
    return 0;
}

inline int cmd_run(const CLI::App& sub, CliState& st, std::ostream& os) {
    apply_config_file(sub, st);
    resolve_enums(st);
    resolve_file_inputs(st.cfg);
    const RunResult res = run_experiment(st.cfg);
    const std::string json = report_json_text(st.cfg, res, st.stamp);
    os << json;
    if (!st.out_prefix.empty()) {
        write_text_file(st.out_prefix + "_report.json", json);
        save_tensor(res.prefill_output, st.out_prefix + "_prefill_out.dtns");
        if (res.decode_output)
            save_tensor(*res.decode_output, st.out_prefix + "_decode_out.dtns");
    }
    return 0;
}

inline int cmd_sweep(const CLI::App& sub, CliState& st, std::ostream& os) {
    apply_config_file(sub, st);
    resolve_enums(st);
    resolve_file_inputs(st.cfg);
    if (st.thetas.empty())
        st.thetas.push_back(st.cfg.theta);
    if (st.gammas.empty())
        st.gammas.push_back(st.cfg.gamma);
    if (st.w_ds.empty())
        st.w_ds.push_back(st.cfg.w_d);
    const std::string csv = sweep(st.cfg, st.thetas, st.gammas, st.w_ds);
    if (st.out.empty())
        os << csv;
    else
        write_text_file(st.out, csv);
    return 0;
}

inline int cmd_heatmap(const CLI::App& sub, CliState& st, std::ostream& os) {
    apply_config_file(sub, st);
    resolve_enums(st);
    resolve_file_inputs(st.cfg);
    st.cfg.validate();
    if (st.kind != "scores" && st.kind != "exactness")
        throw ConfigError("heatmap: --kind must be scores or exactness");
    const std::vector<HeadTensors> tensors = gen_synthetic(st.cfg);
    const HeadTensors& head = tensors.front();
    const MatrixF q = first_rows(head.q, st.cfg.n);
    const MatrixF k = first_rows(head.k, st.cfg.n);
    const MatrixF v = first_rows(head.v, st.cfg.n);
    const HybridConfig hc = st.cfg.hybrid();
    const PrefillResult<float> pre = st.cfg.strategy == ConstructionStrategy::TopDownKey
                                         ? prefill_attention(q, k, v, hc)
                                         : prefill_attention_ablation(q, k, v, hc);
    if (st.kind == "scores")
        dump_heatmap(pre.scores.scores, st.out);
    else
        dump_exactness(pre.scores, st.out);
    os << "wrote " << st.kind << " grid (" << st.cfg.n << "x" << st.cfg.n << ", window "
       << pre.window << ") for head 0 to " << st.out << '\n';
    return 0;
}

} // namespace detail

// Entry point behind main(). Exit codes: 0 success, 2 configuration or usage
// error, 3 file I/O error, 4 state or invariant violation (selftest failures
// included), 1 anything else.
inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"thresholded delta encoding of attention history with exact-window hybrid "
                 "scoring; every run is measured against a dense oracle"};
    app.require_subcommand(1);
    detail::CliState st;

    CLI::App* gen = app.add_subcommand("gen", "write synthetic q/k/v tensor files");
    detail::add_experiment_options(gen, st);
    gen->add_option("--out_prefix", st.out_prefix, "path prefix for the .dtns files")
        ->required();

    CLI::App* run = app.add_subcommand(
        "run", "run the configured scenario and print a JSON report");
    detail::add_experiment_options(run, st);
    run->add_option("--out_prefix", st.out_prefix,
                    "also write the report and output tensors under this prefix");
    run->add_flag("--stamp", st.stamp, "include a wall-clock timestamp in the report");

    CLI::App* swp = app.add_subcommand(
        "sweep", "grid over theta/gamma/w_d and emit one CSV row per run");
    detail::add_experiment_options(swp, st);
    swp->add_option("--thetas", st.thetas, "theta values (comma separated)")->delimiter(',');
    swp->add_option("--gammas", st.gammas, "gamma values (comma separated)")->delimiter(',');
    swp->add_option("--w_ds", st.w_ds, "decode window values (comma separated)")
        ->delimiter(',');
    swp->add_option("--out", st.out, "CSV output path (default: stdout)");

    CLI::App* heat = app.add_subcommand(
        "heatmap", "dump head 0's score or exactness grid as CSV");
    detail::add_experiment_options(heat, st);
    heat->add_option("--kind", st.kind, "scores | exactness (default exactness)");
    heat->add_option("--out", st.out, "output CSV path")->required();

    CLI::App* self = app.add_subcommand("selftest", "run built-in consistency checks");

    try {
        app.parse(argc, argv);
        if (app.got_subcommand(self))
            return run_selftest(std::cout);
        if (app.got_subcommand(gen))
            return detail::cmd_gen(*gen, st, std::cout);
        if (app.got_subcommand(run))
            return detail::cmd_run(*run, st, std::cout);
        if (app.got_subcommand(swp))
            return detail::cmd_sweep(*swp, st, std::cout);
        if (app.got_subcommand(heat))
            return detail::cmd_heatmap(*heat, st, std::cout);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << '\n';
        return 4;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violated: " << e.what() << '\n';
        return 4;
    } catch (const BoundsError& e) {
        std::cerr << "bounds error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace deltattn
