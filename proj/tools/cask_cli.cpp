// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

// cask: witness generation, replay, bridge runs, sweeps and report tables.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cask/bridge.hpp"
#include "cask/replay_eval.hpp"
#include "cask/report.hpp"
#include "cask/serialize.hpp"
#include "cask/witness.hpp"

namespace {

using namespace cask;

struct CommonOptions {
    std::uint64_t seed = 0;
    ModelShape model;
    CaskConfig cask;
    StageConfig stage;
};

void add_model_options(CLI::App* app, CommonOptions& o) {
    app->add_option("--seed", o.seed, "Global seed; each witness model uses seed + witness seed");
    app->add_option("--vocab", o.model.vocab_size, "Toy model vocabulary size");
    app->add_option("--dim", o.model.model_dim, "Toy model width (even)");
    app->add_option("--layers", o.model.num_layers, "Toy model depth");
    app->add_option("--attention-gain", o.model.attention_gain);
    app->add_option("--logit-gain", o.model.logit_gain);
    app->add_option("--merge-epsilon", o.cask.merge_epsilon, "Merge distance threshold");
    app->add_option("--sink-count", o.cask.sink_count);
    app->add_option("--recency-window", o.cask.recency_window);
    app->add_option("--anchor-quantile", o.cask.anchor_quantile);
    app->add_option("--max-group-size", o.cask.max_group_size);
    app->add_option("--prefix-fraction", o.stage.prefix_fraction);
    app->add_option("--min-decode-slack", o.stage.min_decode_slack);
}

Json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return Json::parse(in);
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::vector<std::int64_t> parse_grid(const std::string& s) {
    std::vector<std::int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoll(item));
    return out;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<Method> out;
    for (const auto& n : names) {
        std::stringstream ss(n);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(parse_method(item));
    }
    return out;
}

void print_summary(const std::string& witness, Method m, std::int64_t budget, const ReplayResult& r) {
    std::printf("%s %s@%lld top1=%.1f%% top5=%.1f%% nll=%.3f first_mismatch=%s saved=%.1f%% decode_events=%lld%s\n",
                witness.c_str(), to_string(m), static_cast<long long>(budget), 100.0 * r.summary.top1,
                100.0 * r.summary.top5, r.summary.mean_nll,
                r.summary.first_mismatch ? std::to_string(*r.summary.first_mismatch).c_str() : "none",
                100.0 * r.summary.saved_ratio, static_cast<long long>(r.flags.decode_events),
                r.flags.prefix_budget_exhausted ? " prefix_budget_exhausted" : "");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Core-aware KV-cache consolidation on a toy attention model"};
    app.require_subcommand(1);

    CommonOptions common;
    WitnessSpec ws;
    std::string out;
    std::string witness_path;
    std::string method_name = "cask";
    std::int64_t budget = 64;

    auto* gen = app.add_subcommand("gen-witness", "Generate a synthetic witness manifest");
    gen->add_option("--kind", ws.kind, "reasoning, summary or qa");
    gen->add_option("--seed", ws.seed, "Witness seed");
    gen->add_option("--prefix-len", ws.prefix_len);
    gen->add_option("--decode-len", ws.decode_len);
    gen->add_option("--redundancy", ws.redundancy);
    gen->add_option("--vocab", common.model.vocab_size);
    gen->add_option("--reference-budget", budget, "Budget used for the regime label")->default_val(kReferenceBudget);
    gen->add_option("--out", out, "Output file (stdout by default)");

    auto* replay = app.add_subcommand("replay", "Teacher-forced replay of one witness under one policy");
    auto* bridge = app.add_subcommand("bridge", "Free-run one witness under one policy and score the output");
    for (auto* sub : {replay, bridge}) {
        sub->add_option("--witness", witness_path, "Witness manifest")->required();
        sub->add_option("--method", method_name, "none, evict or cask");
        sub->add_option("--budget", budget, "Cache budget");
        sub->add_option("--out", out, "Output JSON file (stdout by default)");
        add_model_options(sub, common);
    }

    std::vector<std::string> witness_paths;
    std::vector<std::string> method_names;
    std::string grid = "24,32,48,64";
    std::string suite_kind = "reasoning";
    std::string suite_seeds;
    unsigned jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "Budget-grid sweep over witnesses and methods");
    sweep->add_option("--witness", witness_paths, "Witness manifest (repeatable)");
    sweep->add_option("--suite-kind", suite_kind, "Kind for generated suite witnesses");
    sweep->add_option("--suite-seeds", suite_seeds, "Generate witnesses for seeds lo-hi");
    sweep->add_option("--prefix-len", ws.prefix_len);
    sweep->add_option("--decode-len", ws.decode_len);
    sweep->add_option("--redundancy", ws.redundancy);
    sweep->add_option("--method", method_names, "Methods (repeatable or comma separated)");
    sweep->add_option("--budget-grid", grid, "Comma-separated increasing budgets");
    sweep->add_option("--jobs", jobs, "Witnesses evaluated in parallel");
    sweep->add_option("--out", out, "Output directory")->required();
    add_model_options(sweep, common);

    std::string rows_path;
    std::string format = "markdown";
    auto* report = app.add_subcommand("report", "Emit tables from a sweep's rows.jsonl");
    report->add_option("--rows", rows_path, "rows.jsonl or a sweep directory")->required();
    report->add_option("--format", format, "csv, markdown or json");
    report->add_option("--out", out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto w = make_witness(ws, common.model.vocab_size, budget);
            write_output(out, witness_manifest(w).dump(2) + "\n");
            std::fprintf(stderr, "%s %s prompt=%zu tokens\n", w.name.c_str(), to_string(w.regime), w.prompt.size());
        } else if (*replay || *bridge) {
            const auto w = witness_from_manifest(read_json(witness_path), common.model.vocab_size);
            const auto params = init_model(common.seed + w.spec.seed, common.model);
            const auto ref = generate_reference(params, w.prompt, w.spec.decode_len);
            const Method m = parse_method(method_name);
            const auto policy = make_policy(m, budget, common.cask, common.stage);
            Json result;
            if (*replay) {
                const auto r = teacher_forced_replay(params, w.prompt, ref.tokens, policy, &ref.oracle_scores);
                print_summary(w.name, m, budget, r);
                result = replay_json(w.name, m, budget, r);
                result["diagnostics"] = diagnostics_json(r);
                result["cache"] = cache_snapshot(r.final_cache);
            } else {
                const auto run = free_run(params, w.prompt, w.spec.decode_len, policy);
                const auto b = bridge_row(run, ref.tokens, static_cast<std::size_t>(w.spec.decode_len));
                std::printf("%s %s@%lld seq_ratio=%.3f sem_sim=%.3f task_metric=%.1f saved=%.1f%%%s\n",
                            w.name.c_str(), to_string(m), static_cast<long long>(budget), b.seq_ratio, b.sem_sim,
                            b.task_metric.value_or(0.0), 100.0 * b.terminal_saved,
                            b.warning ? " (warning: empty output)" : "");
                result = Json{{"witness", w.name},
                              {"method", to_string(m)},
                              {"budget", budget},
                              {"seq_ratio", b.seq_ratio},
                              {"sem_sim", b.sem_sim},
                              {"task_metric", optional_json(b.task_metric)},
                              {"terminal_saved", b.terminal_saved},
                              {"compression_events", b.compression_events},
                              {"prefix_ratio", b.prefix_ratio},
                              {"output_ratio", b.output_ratio},
                              {"regime_flags", flags_json(run.flags)},
                              {"tokens", run.tokens},
                              {"reference", ref.tokens}};
            }
            if (!out.empty()) write_output(out, result.dump(2) + "\n");
        } else if (*sweep) {
            SweepSpec spec;
            for (const auto& p : witness_paths) spec.witnesses.push_back(witness_spec_from_json(read_json(p)));
            if (!suite_seeds.empty()) {
                const auto dash = suite_seeds.find('-');
                const auto lo = std::stoull(suite_seeds.substr(0, dash));
                const auto hi = dash == std::string::npos ? lo : std::stoull(suite_seeds.substr(dash + 1));
                for (auto s = lo; s <= hi; ++s) {
                    WitnessSpec w = ws;
                    w.kind = suite_kind;
                    w.seed = s;
                    spec.witnesses.push_back(w);
                }
            }
            if (!method_names.empty()) spec.methods = parse_methods(method_names);
            spec.budget_grid = parse_grid(grid);
            spec.out_dir = out;
            spec.seed = common.seed;
            spec.model = common.model;
            spec.cask = common.cask;
            spec.stage = common.stage;
            spec.jobs = jobs;
            const auto rows = run_sweep(spec);
            std::printf("wrote %zu rows to %s\n", rows.size(), (spec.out_dir / "rows.jsonl").c_str());
        } else if (*report) {
            fs::path rows_file = rows_path;
            if (fs::is_directory(rows_file)) rows_file /= "rows.jsonl";
            const auto rows = read_rows(rows_file);
            for (const auto& p : emit_tables(rows, format, out)) std::printf("%s\n", p.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
