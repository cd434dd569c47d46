// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cask/random.hpp"
#include "cask/session.hpp"
#include "cask/trace_model.hpp"

namespace cask {

struct FreeRun {
    std::vector<TokenId> tokens;
    double saved_ratio = 0.0;
    std::int64_t compression_events = 0;
    RegimeFlags flags;
};

/// Greedy generation where every emitted token goes through the policy exactly as in replay.
inline FreeRun free_run(const ModelParams& params, std::span<const TokenId> prompt, std::int64_t length,
                        const PolicyConfig& policy) {
    if (length < 1) throw std::invalid_argument("length must be at least 1");
    PolicySession session(params, policy);
    FreeRun out;
    auto dist = session.prefill(prompt);
    while (true) {
        out.tokens.push_back(argmax_lowest(dist));
        if (static_cast<std::int64_t>(out.tokens.size()) == length) break;
        dist = session.feed(out.tokens.back());
    }
    out.saved_ratio = terminal_saved_ratio(session.cache());
    out.flags = session.flags();
    out.compression_events = static_cast<std::int64_t>(session.cache().events().size());
    return out;
}

/// Length of the longest common subsequence (two-row DP).
inline std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct Scored {
    double value = 0.0;
    bool warning = false;
};

/// LCS(candidate, reference) / max(L, L'). Empty input scores 0 with a warning.
inline Scored seq_ratio(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
    if (candidate.empty() || reference.empty()) return {0.0, true};
    const auto l = static_cast<double>(lcs_length(candidate, reference));
    return {l / static_cast<double>(std::max(candidate.size(), reference.size())), false};
}

struct SemSimConfig {
    std::size_t width = 256;
    int max_order = 2;  // n-grams of order 1..max_order
    std::uint64_t seed = 0x5eed;
};

/// Hashed n-gram count vector, L2-normalized (zero vector left as is).
inline std::vector<double> ngram_embedding(std::span<const TokenId> tokens, const SemSimConfig& cfg = {}) {
    std::vector<double> v(cfg.width, 0.0);
    for (int n = 1; n <= cfg.max_order; ++n) {
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
            std::uint64_t h = mix64(cfg.seed ^ static_cast<std::uint64_t>(n));
            for (int k = 0; k < n; ++k) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(tokens[i + k])));
            v[h % cfg.width] += 1.0;
        }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return v;
}

/// Cosine of hashed n-gram embeddings; a zero embedding scores 0 with a warning.
inline Scored sem_sim(std::span<const TokenId> candidate, std::span<const TokenId> reference, const SemSimConfig& cfg = {}) {
    const auto a = ngram_embedding(candidate, cfg);
    const auto b = ngram_embedding(reference, cfg);
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    return {std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0), false};
}

/// Length of the shared leading run divided by the reference length.
inline double prefix_ratio(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
    if (reference.empty()) return 0.0;
    std::size_t n = 0;
    while (n < candidate.size() && n < reference.size() && candidate[n] == reference[n]) ++n;
    return static_cast<double>(n) / static_cast<double>(reference.size());
}

inline double output_ratio(std::size_t emitted, std::size_t requested) {
    return requested == 0 ? 0.0 : static_cast<double>(emitted) / static_cast<double>(requested);
}

using TaskEvaluator =
    std::function<std::optional<double>(std::span<const TokenId>, std::span<const TokenId>, const std::string&)>;

/// Named task evaluators. "exact_match" (100 on identical sequences, else 0) is built in.
class TaskMetricRegistry {
public:
    TaskMetricRegistry() {
        add("exact_match", [](std::span<const TokenId> c, std::span<const TokenId> r, const std::string&) -> std::optional<double> {
            return std::equal(c.begin(), c.end(), r.begin(), r.end()) ? 100.0 : 0.0;
        });
    }

    void add(const std::string& name, TaskEvaluator fn) { evaluators_[name] = std::move(fn); }

    std::optional<double> evaluate(const std::string& name, std::span<const TokenId> candidate,
                                   std::span<const TokenId> reference, const std::string& annotation = {}) const {
        auto it = evaluators_.find(name);
        if (it == evaluators_.end()) throw std::invalid_argument("unknown evaluator '" + name + "'");
        return it->second(candidate, reference, annotation);
    }

private:
    std::map<std::string, TaskEvaluator> evaluators_;
};

inline std::optional<double> task_metric(std::span<const TokenId> candidate, std::span<const TokenId> reference,
                                         const std::string& annotation = {}, const std::string& evaluator = "exact_match",
                                         const TaskMetricRegistry& registry = TaskMetricRegistry{}) {
    return registry.evaluate(evaluator, candidate, reference, annotation);
}

struct BridgeRow {
    double seq_ratio = 0.0;
    double sem_sim = 0.0;
    std::optional<double> task_metric;
    double terminal_saved = 0.0;
    std::int64_t compression_events = 0;
    double prefix_ratio = 0.0;
    double output_ratio = 0.0;
    bool warning = false;
};

inline BridgeRow bridge_row(const FreeRun& run, std::span<const TokenId> reference, std::size_t requested) {
    BridgeRow row;
    const auto sr = seq_ratio(run.tokens, reference);
    const auto ss = sem_sim(run.tokens, reference);
    row.seq_ratio = sr.value;
    row.sem_sim = ss.value;
    row.warning = sr.warning || ss.warning;
    row.task_metric = task_metric(run.tokens, reference);
    row.terminal_saved = run.saved_ratio;
    row.compression_events = run.compression_events;
    row.prefix_ratio = prefix_ratio(run.tokens, reference);
    row.output_ratio = output_ratio(run.tokens.size(), requested);
    return row;
}

}  // namespace cask
