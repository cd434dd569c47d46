// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "cask/bridge.hpp"
#include "cask/replay_eval.hpp"
#include "cask/serialize.hpp"
#include "cask/session.hpp"
#include "cask/trace_model.hpp"
#include "cask/witness.hpp"

namespace cask {

namespace fs = std::filesystem;

struct SweepSpec {
    std::vector<WitnessSpec> witnesses;
    std::vector<Method> methods{Method::evict, Method::cask};
    std::vector<std::int64_t> budget_grid;
    fs::path out_dir;  // empty: keep rows in memory only
    std::uint64_t seed = 0;
    ModelShape model;
    CaskConfig cask;
    StageConfig stage;
    unsigned jobs = 1;

    void validate() const {
        if (witnesses.empty()) throw std::invalid_argument("sweep needs at least one witness");
        if (methods.empty()) throw std::invalid_argument("sweep needs at least one method");
        if (budget_grid.empty()) throw std::invalid_argument("budget grid is empty");
        for (std::size_t i = 0; i < budget_grid.size(); ++i) {
            if (budget_grid[i] < 1) throw std::invalid_argument("budgets must be positive");
            if (i > 0 && budget_grid[i] <= budget_grid[i - 1])
                throw std::invalid_argument("budget grid must be strictly increasing");
        }
        std::set<std::string> names;
        for (const auto& w : witnesses) {
            parse_witness_kind(w.kind);
            if (!names.insert(w.kind + "-" + std::to_string(w.seed)).second)
                throw std::invalid_argument("duplicate witness " + w.kind + "-" + std::to_string(w.seed));
        }
        cask.validate();
    }

    /// Each witness runs on its own toy model.
    std::uint64_t model_seed(const WitnessSpec& w) const { return seed + w.seed; }
};

/// One JSON-lines record. Replay rows leave the bridge fields null and vice versa.
struct ReportRow {
    std::string kind;  // "replay" or "bridge"
    std::string witness;
    std::string regime_label;
    std::string method;
    std::int64_t budget = 0;
    std::optional<double> top1, top5, mean_nll;
    std::optional<std::int64_t> first_mismatch;
    double saved_ratio = 0.0;
    std::int64_t decode_events = 0;
    bool prefix_budget_exhausted = false;
    bool merge_inactive = true;
    std::optional<double> rho_core, rho_rep;
    std::optional<double> seq_ratio, sem_sim, task_metric;
    std::optional<std::int64_t> T, top1_matches, top5_matches;
    std::uint64_t seed = 0;

    bool operator==(const ReportRow&) const = default;
};

inline Json row_to_json(const ReportRow& r) {
    return Json{{"kind", r.kind},
                {"witness", r.witness},
                {"regime_label", r.regime_label},
                {"method", r.method},
                {"budget", r.budget},
                {"top1", optional_json(r.top1)},
                {"top5", optional_json(r.top5)},
                {"mean_nll", optional_json(r.mean_nll)},
                {"first_mismatch", optional_json(r.first_mismatch)},
                {"saved_ratio", r.saved_ratio},
                {"decode_events", r.decode_events},
                {"prefix_budget_exhausted", r.prefix_budget_exhausted},
                {"merge_inactive", r.merge_inactive},
                {"rho_core", optional_json(r.rho_core)},
                {"rho_rep", optional_json(r.rho_rep)},
                {"seq_ratio", optional_json(r.seq_ratio)},
                {"sem_sim", optional_json(r.sem_sim)},
                {"task_metric", optional_json(r.task_metric)},
                {"T", optional_json(r.T)},
                {"top1_matches", optional_json(r.top1_matches)},
                {"top5_matches", optional_json(r.top5_matches)},
                {"seed", r.seed}};
}

namespace detail {
template <class T>
std::optional<T> opt(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}
}  // namespace detail

inline ReportRow row_from_json(const Json& j) {
    ReportRow r;
    r.kind = j.at("kind").get<std::string>();
    r.witness = j.at("witness").get<std::string>();
    r.regime_label = j.at("regime_label").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.budget = j.at("budget").get<std::int64_t>();
    r.top1 = detail::opt<double>(j, "top1");
    r.top5 = detail::opt<double>(j, "top5");
    r.mean_nll = detail::opt<double>(j, "mean_nll");
    r.first_mismatch = detail::opt<std::int64_t>(j, "first_mismatch");
    r.saved_ratio = j.at("saved_ratio").get<double>();
    r.decode_events = j.at("decode_events").get<std::int64_t>();
    r.prefix_budget_exhausted = j.at("prefix_budget_exhausted").get<bool>();
    r.merge_inactive = j.at("merge_inactive").get<bool>();
    r.rho_core = detail::opt<double>(j, "rho_core");
    r.rho_rep = detail::opt<double>(j, "rho_rep");
    r.seq_ratio = detail::opt<double>(j, "seq_ratio");
    r.sem_sim = detail::opt<double>(j, "sem_sim");
    r.task_metric = detail::opt<double>(j, "task_metric");
    r.T = detail::opt<std::int64_t>(j, "T");
    r.top1_matches = detail::opt<std::int64_t>(j, "top1_matches");
    r.top5_matches = detail::opt<std::int64_t>(j, "top5_matches");
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

inline std::vector<ReportRow> read_rows(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<ReportRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(row_from_json(Json::parse(line)));
    }
    return rows;
}

inline ReportRow replay_row(const Witness& w, Method m, std::int64_t budget, const ReplayResult& r) {
    ReportRow row;
    row.kind = "replay";
    row.witness = w.name;
    row.regime_label = to_string(w.regime);
    row.method = to_string(m);
    row.budget = budget;
    row.top1 = r.summary.top1;
    row.top5 = r.summary.top5;
    row.mean_nll = r.summary.mean_nll;
    row.first_mismatch = r.summary.first_mismatch;
    row.saved_ratio = r.summary.saved_ratio;
    row.decode_events = r.flags.decode_events;
    row.prefix_budget_exhausted = r.flags.prefix_budget_exhausted;
    row.merge_inactive = r.flags.merge_inactive;
    if (m == Method::cask) row.rho_core = r.diagnostics.rho_core;  // the core is a cask notion
    row.rho_rep = r.diagnostics.rho_rep;
    row.T = static_cast<std::int64_t>(r.summary.length);
    row.top1_matches = static_cast<std::int64_t>(r.summary.top1_matches);
    row.top5_matches = static_cast<std::int64_t>(r.summary.top5_matches);
    row.seed = w.spec.seed;
    return row;
}

inline ReportRow bridge_report_row(const Witness& w, Method m, std::int64_t budget, const FreeRun& run,
                                   const BridgeRow& b) {
    ReportRow row;
    row.kind = "bridge";
    row.witness = w.name;
    row.regime_label = to_string(w.regime);
    row.method = to_string(m);
    row.budget = budget;
    row.saved_ratio = b.terminal_saved;
    row.decode_events = run.flags.decode_events;
    row.prefix_budget_exhausted = run.flags.prefix_budget_exhausted;
    row.merge_inactive = run.flags.merge_inactive;
    row.seq_ratio = b.seq_ratio;
    row.sem_sim = b.sem_sim;
    row.task_metric = b.task_metric;
    row.seed = w.spec.seed;
    return row;
}

/// Every (method, budget) cell of one witness: replay row then bridge row.
inline std::vector<ReportRow> witness_rows(const SweepSpec& spec, const WitnessSpec& ws) {
    const auto params = init_model(spec.model_seed(ws), spec.model);
    const auto w = make_witness(ws, params.vocab_size, spec.budget_grid.back());
    const auto ref = generate_reference(params, w.prompt, ws.decode_len);
    std::vector<ReportRow> rows;
    for (Method m : spec.methods) {
        for (std::int64_t b : spec.budget_grid) {
            const auto policy = make_policy(m, b, spec.cask, spec.stage);
            const auto r = teacher_forced_replay(params, w.prompt, ref.tokens, policy, &ref.oracle_scores);
            rows.push_back(replay_row(w, m, b, r));
            const auto run = free_run(params, w.prompt, ws.decode_len, policy);
            rows.push_back(bridge_report_row(w, m, b, run, bridge_row(run, ref.tokens, static_cast<std::size_t>(ws.decode_len))));
        }
    }
    return rows;
}

inline Json sweep_manifest(const SweepSpec& spec) {
    Json witnesses = Json::array();
    for (const auto& ws : spec.witnesses) {
        const auto w = make_witness(ws, spec.model.vocab_size, spec.budget_grid.back());
        Json j = witness_manifest(w);
        j.erase("prompt");
        j["name"] = w.name;
        j["model_seed"] = spec.model_seed(ws);
        witnesses.push_back(j);
    }
    Json methods = Json::array();
    for (Method m : spec.methods) methods.push_back(to_string(m));
    return Json{{"global_seed", spec.seed},
                {"methods", methods},
                {"budget_grid", spec.budget_grid},
                {"model", model_shape_json(spec.model)},
                {"cask", cask_config_json(spec.cask)},
                {"stage", stage_config_json(spec.stage)},
                {"witnesses", witnesses},
                {"rows", "rows.jsonl"}};
}

/**
 * Runs every (witness, method, budget) cell. Witnesses may be evaluated in
 * parallel (`jobs`), but rows are written in spec order by this thread only,
 * so reruns produce byte-identical files.
 */
inline std::vector<ReportRow> run_sweep(const SweepSpec& spec) {
    spec.validate();
    std::ofstream rows_out;
    if (!spec.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(spec.out_dir, ec);
        std::ofstream manifest(spec.out_dir / "manifest.json");
        if (ec || !manifest) throw std::runtime_error("cannot write output directory " + spec.out_dir.string());
        manifest << sweep_manifest(spec).dump(2) << '\n';
        rows_out.open(spec.out_dir / "rows.jsonl", std::ios::trunc);
        if (!rows_out) throw std::runtime_error("cannot write output directory " + spec.out_dir.string());
    }

    const std::size_t n = spec.witnesses.size();
    const std::size_t jobs = std::max(1U, spec.jobs);
    std::vector<std::future<std::vector<ReportRow>>> pending;
    std::vector<ReportRow> all;
    for (std::size_t i = 0; i < n; ++i) {
        while (pending.size() < n && pending.size() < i + jobs) {
            const auto& ws = spec.witnesses[pending.size()];
            pending.push_back(std::async(std::launch::async, [&spec, &ws] { return witness_rows(spec, ws); }));
        }
        for (auto& row : pending[i].get()) {
            if (rows_out.is_open()) rows_out << row_to_json(row).dump() << '\n' << std::flush;
            all.push_back(std::move(row));
        }
    }
    return all;
}

// ---------------------------------------------------------------------------

enum class FidelityMetric { top1, top5, mean_nll };

inline const char* to_string(FidelityMetric m) {
    switch (m) {
    case FidelityMetric::top1: return "top1";
    case FidelityMetric::top5: return "top5";
    case FidelityMetric::mean_nll: return "mean_nll";
    }
    return "unknown";
}

inline FidelityMetric parse_fidelity_metric(const std::string& s) {
    if (s == "top1") return FidelityMetric::top1;
    if (s == "top5") return FidelityMetric::top5;
    if (s == "mean_nll") return FidelityMetric::mean_nll;
    throw std::invalid_argument("unknown metric '" + s + "'");
}

struct CrossingFinding {
    std::string witness;
    std::string lower_method;
    std::int64_t lower_budget = 0;
    std::string higher_method;
    std::int64_t higher_budget = 0;
    FidelityMetric metric = FidelityMetric::top1;
    double margin = 0.0;  // always > 0

    bool operator==(const CrossingFinding&) const = default;
};

inline std::optional<double> metric_value(const ReportRow& r, FidelityMetric m) {
    switch (m) {
    case FidelityMetric::top1: return r.top1;
    case FidelityMetric::top5: return r.top5;
    case FidelityMetric::mean_nll: return r.mean_nll;
    }
    return std::nullopt;
}

/// Every cask@b_low that strictly beats evict@b_high (b_low < b_high) on one witness.
inline std::vector<CrossingFinding> detect_crossings(const std::vector<ReportRow>& rows, FidelityMetric metric) {
    std::vector<CrossingFinding> out;
    for (const auto& low : rows) {
        if (low.kind != "replay" || low.method != "cask") continue;
        const auto lv = metric_value(low, metric);
        if (!lv) continue;
        for (const auto& high : rows) {
            if (high.kind != "replay" || high.method != "evict" || high.witness != low.witness) continue;
            if (!(low.budget < high.budget)) continue;
            const auto hv = metric_value(high, metric);
            if (!hv) continue;
            const double margin = metric == FidelityMetric::mean_nll ? *hv - *lv : *lv - *hv;
            if (margin > 0.0) out.push_back({low.witness, low.method, low.budget, high.method, high.budget, metric, margin});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

enum class TableFormat { csv, markdown, json };

inline TableFormat parse_table_format(const std::string& s) {
    if (s == "csv") return TableFormat::csv;
    if (s == "markdown" || s == "md") return TableFormat::markdown;
    if (s == "json") return TableFormat::json;
    throw std::invalid_argument("unknown format '" + s + "'");
}

inline const char* file_extension(TableFormat f) {
    switch (f) {
    case TableFormat::csv: return ".csv";
    case TableFormat::markdown: return ".md";
    case TableFormat::json: return ".json";
    }
    return "";
}

/// A rendered cell: display text plus the number behind it (none for labels and blanks).
struct Cell {
    std::string text;
    std::optional<double> number;
};

struct Table {
    std::string name;
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

namespace fmt {

inline std::string fixed(double v, int decimals, bool sign = false) {
    // Keep "-0.0" out of the tables.
    const double scale = std::pow(10.0, decimals);
    if (std::round(v * scale) == 0.0) v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, sign ? "%+.*f" : "%.*f", decimals, v);
    return buf;
}

inline Cell text(std::string s) { return {std::move(s), std::nullopt}; }
inline Cell integer(std::int64_t v) { return {std::to_string(v), static_cast<double>(v)}; }
inline Cell percent(double ratio) {
    auto s = fixed(100.0 * ratio, 1);
    return {s, std::stod(s)};
}
inline Cell percent_delta(double ratio_delta) {
    auto s = fixed(100.0 * ratio_delta, 1, true);
    return {s, std::stod(s)};
}
inline Cell nll(double v, bool sign = false) {
    auto s = fixed(v, 3, sign);
    return {s, std::stod(s)};
}
inline Cell ratio(double v) {
    auto s = fixed(v, 3);
    return {s, std::stod(s)};
}
inline Cell mismatch(const std::optional<std::int64_t>& v) { return v ? integer(*v) : text("none"); }
inline Cell blank() { return text("-"); }

}  // namespace fmt

namespace detail {

inline std::vector<const ReportRow*> replay_rows(const std::vector<ReportRow>& rows) {
    std::vector<const ReportRow*> out;
    for (const auto& r : rows)
        if (r.kind == "replay") out.push_back(&r);
    return out;
}

inline const ReportRow* find_row(const std::vector<const ReportRow*>& rows, const std::string& witness,
                                 const std::string& method, std::int64_t budget) {
    for (const auto* r : rows)
        if (r->witness == witness && r->method == method && r->budget == budget) return r;
    return nullptr;
}

inline std::vector<std::string> ordered_unique(const std::vector<const ReportRow*>& rows,
                                               std::string ReportRow::*field) {
    std::vector<std::string> out;
    for (const auto* r : rows)
        if (std::find(out.begin(), out.end(), r->*field) == out.end()) out.push_back(r->*field);
    return out;
}

inline std::vector<std::int64_t> budgets(const std::vector<const ReportRow*>& rows) {
    std::set<std::int64_t> s;
    for (const auto* r : rows) s.insert(r->budget);
    return {s.begin(), s.end()};
}

struct Totals {
    std::int64_t top1 = 0, top5 = 0, tokens = 0;
    double nll_weighted = 0.0;
    double mismatch_sum = 0.0;
    std::int64_t mismatch_n = 0, full_matches = 0;
};

inline Totals totals(const std::vector<const ReportRow*>& rows, const std::string& method, std::int64_t budget) {
    Totals t;
    for (const auto* r : rows) {
        if (r->method != method || r->budget != budget) continue;
        const auto T = r->T.value_or(0);
        t.top1 += r->top1_matches.value_or(0);
        t.top5 += r->top5_matches.value_or(0);
        t.tokens += T;
        t.nll_weighted += static_cast<double>(T) * r->mean_nll.value_or(0.0);
        if (r->first_mismatch) {
            t.mismatch_sum += static_cast<double>(*r->first_mismatch);
            ++t.mismatch_n;
        } else {
            ++t.full_matches;
        }
    }
    return t;
}

}  // namespace detail

/// Fidelity and replay-count tables; crossings on top1 and mean_nll.
inline std::vector<Table> build_tables(const std::vector<ReportRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("no rows to report");
    const auto replay = detail::replay_rows(rows);
    const auto witnesses = detail::ordered_unique(replay, &ReportRow::witness);
    const auto methods = detail::ordered_unique(replay, &ReportRow::method);
    const auto budgets = detail::budgets(replay);
    std::vector<Table> tables;

    Table fid{"fidelity", "Replay fidelity",
              {"Witness", "Regime", "Method", "Budget", "Top-1 (%)", "Top-5 (%)", "Mean NLL", "First Mismatch",
               "Saved Ratio (%)", "Decode Events", "rho_core", "rho_rep"},
              {}};
    for (const auto* r : replay) {
        fid.rows.push_back({fmt::text(r->witness), fmt::text(r->regime_label), fmt::text(r->method),
                            fmt::integer(r->budget), fmt::percent(r->top1.value_or(0.0)),
                            fmt::percent(r->top5.value_or(0.0)), fmt::nll(r->mean_nll.value_or(0.0)),
                            fmt::mismatch(r->first_mismatch), fmt::percent(r->saved_ratio),
                            r->method == "cask" ? fmt::integer(r->decode_events) : fmt::blank(),
                            r->rho_core ? fmt::ratio(*r->rho_core) : fmt::blank(),
                            r->rho_rep ? fmt::ratio(*r->rho_rep) : fmt::blank()});
    }
    tables.push_back(std::move(fid));

    Table agg{"weighted_aggregate", "Token-weighted aggregate",
              {"Method", "Budget", "Weighted Top-1 (%)", "Weighted Top-5 (%)", "Weighted Mean NLL",
               "Mean First Mismatch", "Full Matches"},
              {}};
    Table agg_counts{"aggregate_counts", "Aggregate measured counts",
                     {"Method", "Budget", "Top-1 Matches", "Top-5 Matches", "Total Replay Tokens", "Weighted Mean NLL"},
                     {}};
    for (const auto& m : methods) {
        for (auto b : budgets) {
            const auto t = detail::totals(replay, m, b);
            if (t.tokens == 0) continue;
            const double T = static_cast<double>(t.tokens);
            agg.rows.push_back({fmt::text(m), fmt::integer(b), fmt::percent(static_cast<double>(t.top1) / T),
                                fmt::percent(static_cast<double>(t.top5) / T), fmt::nll(t.nll_weighted / T),
                                t.mismatch_n ? fmt::ratio(t.mismatch_sum / static_cast<double>(t.mismatch_n))
                                             : fmt::text("none"),
                                fmt::integer(t.full_matches)});
            agg_counts.rows.push_back({fmt::text(m), fmt::integer(b), fmt::integer(t.top1), fmt::integer(t.top5),
                                       fmt::integer(t.tokens), fmt::nll(t.nll_weighted / T)});
        }
    }
    tables.push_back(std::move(agg));

    Table same{"same_budget", "Same-budget summary",
               {"Witness", "Budget", "Evict Top-1 (%)", "CASK Top-1 (%)", "Delta Top-1 (%p)", "Evict Mean NLL",
                "CASK Mean NLL", "Delta NLL", "Decode Events"},
               {}};
    Table same_counts{"same_budget_counts", "Same-budget measured counts",
                      {"Witness", "Budget", "Output Tokens", "Evict Top-1 Matches", "CASK Top-1 Matches",
                       "Evict Top-5 Matches", "CASK Top-5 Matches", "Evict First Mismatch", "CASK First Mismatch"},
                      {}};
    for (const auto& w : witnesses) {
        for (auto b : budgets) {
            const auto* e = detail::find_row(replay, w, "evict", b);
            const auto* c = detail::find_row(replay, w, "cask", b);
            if (!e || !c) continue;
            same.rows.push_back({fmt::text(w), fmt::integer(b), fmt::percent(*e->top1), fmt::percent(*c->top1),
                                 fmt::percent_delta(*c->top1 - *e->top1), fmt::nll(*e->mean_nll),
                                 fmt::nll(*c->mean_nll), fmt::nll(*c->mean_nll - *e->mean_nll, true),
                                 fmt::integer(c->decode_events)});
            same_counts.rows.push_back({fmt::text(w), fmt::integer(b), fmt::integer(c->T.value_or(0)),
                                        fmt::integer(e->top1_matches.value_or(0)),
                                        fmt::integer(c->top1_matches.value_or(0)),
                                        fmt::integer(e->top5_matches.value_or(0)),
                                        fmt::integer(c->top5_matches.value_or(0)), fmt::mismatch(e->first_mismatch),
                                        fmt::mismatch(c->first_mismatch)});
        }
    }
    tables.push_back(std::move(same));
    tables.push_back(std::move(agg_counts));
    tables.push_back(std::move(same_counts));

    Table counts{"replay_counts", "Per-replay measured counts",
                 {"Witness", "Method", "Budget", "Replay Tokens", "Top-1 Matches", "Top-5 Matches", "First Mismatch"},
                 {}};
    for (const auto* r : replay) {
        counts.rows.push_back({fmt::text(r->witness), fmt::text(r->method), fmt::integer(r->budget),
                               fmt::integer(r->T.value_or(0)), fmt::integer(r->top1_matches.value_or(0)),
                               fmt::integer(r->top5_matches.value_or(0)), fmt::mismatch(r->first_mismatch)});
    }
    tables.push_back(std::move(counts));

    Table bridge{"bridge", "Output bridge",
                 {"Witness", "Method", "Budget", "SeqRatio", "SemSim", "Task Metric", "Saved Ratio (%)"},
                 {}};
    for (const auto& r : rows) {
        if (r.kind != "bridge") continue;
        bridge.rows.push_back({fmt::text(r.witness), fmt::text(r.method), fmt::integer(r.budget),
                               fmt::ratio(r.seq_ratio.value_or(0.0)), fmt::ratio(r.sem_sim.value_or(0.0)),
                               r.task_metric ? fmt::percent(*r.task_metric / 100.0) : fmt::blank(),
                               fmt::percent(r.saved_ratio)});
    }
    tables.push_back(std::move(bridge));

    Table cross{"crossings", "Budget crossings",
                {"Witness", "Metric", "Lower", "Higher", "Margin"},
                {}};
    for (auto metric : {FidelityMetric::top1, FidelityMetric::mean_nll}) {
        for (const auto& f : detect_crossings(rows, metric)) {
            cross.rows.push_back({fmt::text(f.witness), fmt::text(to_string(metric)),
                                  fmt::text(f.lower_method + "@" + std::to_string(f.lower_budget)),
                                  fmt::text(f.higher_method + "@" + std::to_string(f.higher_budget)),
                                  metric == FidelityMetric::mean_nll ? fmt::nll(f.margin) : fmt::percent(f.margin)});
        }
    }
    tables.push_back(std::move(cross));
    return tables;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::string render_table(const Table& t, TableFormat format) {
    std::ostringstream os;
    switch (format) {
    case TableFormat::csv: {
        for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << detail::csv_escape(t.columns[i]);
        os << '\n';
        for (const auto& row : t.rows) {
            for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_escape(row[i].text);
            os << '\n';
        }
        break;
    }
    case TableFormat::markdown: {
        os << "## " << t.title << "\n\n|";
        for (const auto& c : t.columns) os << ' ' << c << " |";
        os << "\n|";
        for (std::size_t i = 0; i < t.columns.size(); ++i) os << " --- |";
        os << '\n';
        for (const auto& row : t.rows) {
            os << '|';
            for (const auto& c : row) os << ' ' << c.text << " |";
            os << '\n';
        }
        break;
    }
    case TableFormat::json: {
        Json rows = Json::array();
        for (const auto& row : t.rows) {
            Json obj = Json::object();
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (row[i].number && row[i].text.find('.') == std::string::npos)
                    obj[t.columns[i]] = static_cast<std::int64_t>(*row[i].number);
                else if (row[i].number)
                    obj[t.columns[i]] = *row[i].number;
                else
                    obj[t.columns[i]] = row[i].text;
            }
            rows.push_back(obj);
        }
        os << Json{{"table", t.name}, {"title", t.title}, {"columns", t.columns}, {"rows", rows}}.dump(2) << '\n';
        break;
    }
    }
    return os.str();
}

/// Writes one file per table into `out_dir` and returns the paths in order.
inline std::vector<fs::path> emit_tables(const std::vector<ReportRow>& rows, TableFormat format, const fs::path& out_dir) {
    const auto tables = build_tables(rows);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::vector<fs::path> paths;
    for (const auto& t : tables) {
        auto path = out_dir / (t.name + file_extension(format));
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << render_table(t, format);
        paths.push_back(std::move(path));
    }
    return paths;
}

inline std::vector<fs::path> emit_tables(const std::vector<ReportRow>& rows, const std::string& format,
                                         const fs::path& out_dir) {
    return emit_tables(rows, parse_table_format(format), out_dir);
}

}  // namespace cask
