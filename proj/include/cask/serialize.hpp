// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <stdexcept>

#include "json.hpp"

#include "cask/policies.hpp"
#include "cask/replay_eval.hpp"
#include "cask/session.hpp"
#include "cask/trace_model.hpp"
#include "cask/two_stage.hpp"
#include "cask/witness.hpp"

namespace cask {

using Json = nlohmann::ordered_json;

inline Json witness_manifest(const Witness& w) {
    return Json{{"kind", w.spec.kind},
                {"seed", w.spec.seed},
                {"prefix_len", w.spec.prefix_len},
                {"decode_len", w.spec.decode_len},
                {"redundancy", w.spec.redundancy},
                {"regime_label", to_string(w.regime)},
                {"prompt", w.prompt}};
}

inline WitnessSpec witness_spec_from_json(const Json& j) {
    WitnessSpec s;
    s.kind = j.at("kind").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.prefix_len = j.at("prefix_len").get<std::int64_t>();
    s.decode_len = j.at("decode_len").get<std::int64_t>();
    s.redundancy = j.at("redundancy").get<double>();
    return s;
}

/// Reads a witness manifest; the stored prompt wins over regeneration.
inline Witness witness_from_manifest(const Json& j, std::size_t vocab_size) {
    Witness w = make_witness(witness_spec_from_json(j), vocab_size);
    if (j.contains("prompt")) {
        w.prompt = j.at("prompt").get<std::vector<TokenId>>();
    }
    return w;
}

/// Audit snapshot of every live entry of one layer.
inline Json cache_snapshot(const CacheState& cache, std::size_t layer = 0) {
    Json entries = Json::array();
    for (const auto& e : cache.entries(layer)) {
        entries.push_back(Json{{"position", e.position},
                               {"origin", to_string(e.origin)},
                               {"protected", e.is_protected},
                               {"group_mass", e.group_mass},
                               {"member_count", e.member_count}});
    }
    Json events = Json::array();
    for (const auto& ev : cache.events()) {
        events.push_back(Json{{"step", ev.step},
                              {"stage", to_string(ev.stage)},
                              {"entries_before", ev.entries_before},
                              {"entries_after", ev.entries_after}});
    }
    return Json{{"budget", cache.budget()},
                {"total_appended", cache.total_appended()},
                {"entries", entries},
                {"compression_events", events}};
}

inline Json diagnostics_json(const ReplayResult& r) {
    return Json{{"rho_core", r.diagnostics.rho_core},
                {"rho_rep", r.diagnostics.rho_rep},
                {"groups", r.groups_folded},
                {"folded_members", r.members_folded},
                {"lost_mass_total", r.lost_mass_total}};
}

inline Json flags_json(const RegimeFlags& f) {
    return Json{{"prefix_budget_exhausted", f.prefix_budget_exhausted},
                {"merge_inactive", f.merge_inactive},
                {"core_overflow", f.core_overflow},
                {"decode_events", f.decode_events},
                {"regime_label", to_string(f.regime_label)}};
}

inline Json optional_json(const std::optional<std::int64_t>& v) { return v ? Json(*v) : Json(nullptr); }
inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

/// Per-replay record.
inline Json replay_json(const std::string& witness, Method method, std::int64_t budget, const ReplayResult& r) {
    return Json{{"witness", witness},
                {"method", to_string(method)},
                {"budget", budget},
                {"top1", r.summary.top1},
                {"top5", r.summary.top5},
                {"mean_nll", r.summary.mean_nll},
                {"first_mismatch", optional_json(r.summary.first_mismatch)},
                {"saved_ratio", r.summary.saved_ratio},
                {"regime_flags", flags_json(r.flags)},
                {"decode_events", r.flags.decode_events}};
}

inline Json cask_config_json(const CaskConfig& c) {
    return Json{{"sink_count", c.sink_count},         {"recency_window", c.recency_window},
                {"anchor_quantile", c.anchor_quantile}, {"merge_epsilon", c.merge_epsilon},
                {"temporal_window", c.temporal_window}, {"max_group_size", c.max_group_size},
                {"horizon", c.horizon},                 {"horizon_rate", c.horizon_rate},
                {"frequency_base", c.frequency_base}};
}

inline CaskConfig cask_config_from_json(const Json& j, CaskConfig c = {}) {
    c.sink_count = j.value("sink_count", c.sink_count);
    c.recency_window = j.value("recency_window", c.recency_window);
    c.anchor_quantile = j.value("anchor_quantile", c.anchor_quantile);
    c.merge_epsilon = j.value("merge_epsilon", c.merge_epsilon);
    c.temporal_window = j.value("temporal_window", c.temporal_window);
    c.max_group_size = j.value("max_group_size", c.max_group_size);
    c.horizon = j.value("horizon", c.horizon);
    c.horizon_rate = j.value("horizon_rate", c.horizon_rate);
    c.frequency_base = j.value("frequency_base", c.frequency_base);
    c.validate();
    return c;
}

inline Json stage_config_json(const StageConfig& s) {
    return Json{{"prefix_fraction", s.prefix_fraction},
                {"min_decode_slack", s.min_decode_slack},
                {"min_prefix_keep", s.min_prefix_keep}};
}

inline StageConfig stage_config_from_json(const Json& j, StageConfig s = {}) {
    s.prefix_fraction = j.value("prefix_fraction", s.prefix_fraction);
    s.min_decode_slack = j.value("min_decode_slack", s.min_decode_slack);
    s.min_prefix_keep = j.value("min_prefix_keep", s.min_prefix_keep);
    return s;
}

inline Json model_shape_json(const ModelShape& m) {
    return Json{{"vocab_size", m.vocab_size},
                {"model_dim", m.model_dim},
                {"num_layers", m.num_layers},
                {"attention_gain", m.attention_gain},
                {"logit_gain", m.logit_gain}};
}

inline ModelShape model_shape_from_json(const Json& j, ModelShape m = {}) {
    m.vocab_size = j.value("vocab_size", m.vocab_size);
    m.model_dim = j.value("model_dim", m.model_dim);
    m.num_layers = j.value("num_layers", m.num_layers);
    m.attention_gain = j.value("attention_gain", m.attention_gain);
    m.logit_gain = j.value("logit_gain", m.logit_gain);
    return m;
}

}  // namespace cask
