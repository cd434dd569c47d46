// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cask/policies.hpp"
#include "cask/session.hpp"
#include "cask/trace_model.hpp"

namespace cask {

inline constexpr double kProbabilityFloor = 1e-12;

/// 0-based rank of `token` when tokens are ordered by probability descending,
/// lower id first on ties.
inline std::size_t token_rank(std::span<const double> dist, TokenId token) {
    const double p = dist[static_cast<std::size_t>(token)];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < dist.size(); ++j) {
        if (dist[j] > p || (dist[j] == p && j < static_cast<std::size_t>(token))) ++rank;
    }
    return rank;
}

struct ReplayStep {
    TokenId reference = 0;
    TokenId argmax = 0;
    bool top5_hit = false;
    double log_prob = 0.0;  // log max(p(reference), floor)
    std::size_t cache_size = 0;
};

inline ReplayStep make_replay_step(std::span<const double> dist, TokenId reference, std::size_t cache_size = 0) {
    if (reference < 0 || static_cast<std::size_t>(reference) >= dist.size()) {
        throw std::invalid_argument("token out of vocab");
    }
    ReplayStep s;
    s.reference = reference;
    s.argmax = argmax_lowest(dist);
    s.top5_hit = token_rank(dist, reference) < 5;
    s.log_prob = std::log(std::max(dist[static_cast<std::size_t>(reference)], kProbabilityFloor));
    s.cache_size = cache_size;
    return s;
}

struct ReplayRecord {
    std::size_t vocab_size = 0;
    std::vector<ReplayStep> steps;
    std::vector<std::vector<double>> distributions;

    std::size_t length() const { return steps.size(); }
};

inline void require_steps(const ReplayRecord& r) {
    if (r.steps.empty()) throw std::invalid_argument("replay record has no steps");
}

inline std::size_t top1_matches(const ReplayRecord& r) {
    return static_cast<std::size_t>(
        std::count_if(r.steps.begin(), r.steps.end(), [](const ReplayStep& s) { return s.argmax == s.reference; }));
}

inline std::size_t top5_matches(const ReplayRecord& r) {
    return static_cast<std::size_t>(std::count_if(r.steps.begin(), r.steps.end(), [](const ReplayStep& s) { return s.top5_hit; }));
}

inline double top1_agreement(const ReplayRecord& r) {
    require_steps(r);
    return static_cast<double>(top1_matches(r)) / static_cast<double>(r.length());
}

/// Top-5 coverage; with fewer than five tokens every step is covered.
inline double top5_coverage(const ReplayRecord& r) {
    require_steps(r);
    return static_cast<double>(top5_matches(r)) / static_cast<double>(r.length());
}

inline double mean_nll(const ReplayRecord& r) {
    require_steps(r);
    double s = 0.0;
    for (const auto& step : r.steps) s -= step.log_prob;
    return s / static_cast<double>(r.length());
}

/// 1-based step of the first argmax/reference disagreement.
inline std::optional<std::int64_t> first_mismatch(const ReplayRecord& r) {
    require_steps(r);
    for (std::size_t t = 0; t < r.steps.size(); ++t)
        if (r.steps[t].argmax != r.steps[t].reference) return static_cast<std::int64_t>(t + 1);
    return std::nullopt;
}

struct FidelitySummary {
    double top1 = 0.0;
    double top5 = 0.0;
    double mean_nll = 0.0;
    std::optional<std::int64_t> first_mismatch;
    double saved_ratio = 0.0;
    std::size_t top1_matches = 0;
    std::size_t top5_matches = 0;
    std::size_t length = 0;
    bool top5_clamped = false;  // vocab below five
};

inline FidelitySummary summarize(const ReplayRecord& r, double saved_ratio) {
    FidelitySummary f;
    f.top1 = top1_agreement(r);
    f.top5 = top5_coverage(r);
    f.mean_nll = mean_nll(r);
    f.first_mismatch = first_mismatch(r);
    f.saved_ratio = saved_ratio;
    f.top1_matches = top1_matches(r);
    f.top5_matches = top5_matches(r);
    f.length = r.length();
    f.top5_clamped = r.vocab_size < 5;
    return f;
}

struct ReplayResult {
    ReplayRecord record;
    FidelitySummary summary;
    RegimeFlags flags;
    MassDiagnostics diagnostics;
    std::size_t groups_folded = 0;
    std::size_t members_folded = 0;
    double lost_mass_total = 0.0;
    CacheState final_cache;
};

/// Mass diagnostics of a finished session against full-KV oracle scores (layer 0).
inline MassDiagnostics session_diagnostics(const PolicySession& session, const std::map<Position, double>& oracle,
                                           std::size_t k) {
    const auto& cache = session.cache();
    const auto core = core_positions(cache.entries(0), session.policy().cask);
    auto diag = mass_diagnostics(core, covered_positions(cache, 0), oracle, std::max<std::size_t>(k, 1));
    diag.lost_mass.assign(1, session.lost_mass_total());
    return diag;
}

/**
 * Teacher-forced replay: prefill `prompt` under the policy, then for every
 * reference token record the candidate distribution and force the token into
 * the cache. `oracle` (full-KV attention mass) enables mass diagnostics.
 */
inline ReplayResult teacher_forced_replay(const ModelParams& params, std::span<const TokenId> prompt,
                                          std::span<const TokenId> reference, const PolicyConfig& policy,
                                          const std::map<Position, double>* oracle = nullptr) {
    if (reference.empty()) throw std::invalid_argument("reference must be nonempty");
    for (TokenId t : reference)
        if (t < 0 || static_cast<std::size_t>(t) >= params.vocab_size) throw std::invalid_argument("token out of vocab");

    PolicySession session(params, policy);
    ReplayResult out;
    out.record.vocab_size = params.vocab_size;
    auto dist = session.prefill(prompt);
    for (std::size_t t = 0; t < reference.size(); ++t) {
        out.record.steps.push_back(make_replay_step(dist, reference[t], session.cache().max_count()));
        out.record.distributions.push_back(dist);
        if (t + 1 < reference.size()) dist = session.feed(reference[t]);
    }
    out.summary = summarize(out.record, terminal_saved_ratio(session.cache()));
    out.flags = session.flags();
    if (oracle) {
        const auto k = policy.method == Method::none ? oracle->size() : static_cast<std::size_t>(policy.budget());
        out.diagnostics = session_diagnostics(session, *oracle, k);
    }
    out.groups_folded = session.groups_folded();
    out.members_folded = session.members_folded();
    out.lost_mass_total = session.lost_mass_total();
    out.final_cache = session.cache();
    return out;
}

}  // namespace cask
