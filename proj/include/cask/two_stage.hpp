// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>

#include "cask/kv_store.hpp"
#include "cask/policies.hpp"
#include "cask/trace_model.hpp"

namespace cask {

struct StageConfig {
    std::int64_t budget = 256;
    double prefix_fraction = 0.75;
    std::int64_t min_decode_slack = 16;
    std::int64_t min_prefix_keep = 4;

    void validate() const {
        if (budget < 1) throw std::invalid_argument("budget must be positive");
        if (!(prefix_fraction > 0.0 && prefix_fraction <= 1.0)) throw std::invalid_argument("prefix_fraction must be in (0,1]");
        if (min_decode_slack < 0 || min_prefix_keep < 0) throw std::invalid_argument("slack and prefix keep must be >= 0");
    }

    /// floor(prefix_fraction * budget), never below min_prefix_keep.
    std::int64_t prefix_target() const {
        const auto t = static_cast<std::int64_t>(std::floor(prefix_fraction * static_cast<double>(budget)));
        return std::max(t, min_prefix_keep);
    }
};

enum class RegimeLabel { decode_active, prefix_dominant, boundary };

inline const char* to_string(RegimeLabel r) {
    switch (r) {
    case RegimeLabel::decode_active: return "decode-active";
    case RegimeLabel::prefix_dominant: return "prefix-dominant";
    case RegimeLabel::boundary: return "boundary";
    }
    return "unknown";
}

struct RegimeFlags {
    bool prefix_budget_exhausted = false;
    bool merge_inactive = true;
    bool core_overflow = false;
    std::int64_t decode_events = 0;
    RegimeLabel regime_label = RegimeLabel::boundary;
};

inline std::int64_t prefix_count(const CacheState& cache, std::size_t layer) {
    const auto& e = cache.entries(layer);
    return std::count_if(e.begin(), e.end(), [](const KVEntry& x) { return x.origin == Origin::prefix; });
}

/**
 * Stage 1, run once at the end of prefill: trims the prefix to
 * StageConfig::prefix_target() by lowest score mass and raises
 * prefix_budget_exhausted when the remaining decode slack is below
 * min_decode_slack. Decode entries are never touched.
 */
inline RegimeFlags stage1_prefix_evict(CacheState& cache, const StageConfig& config) {
    config.validate();
    RegimeFlags flags;
    const std::int64_t target = config.prefix_target();
    const std::size_t before = cache.max_count();
    std::size_t removed = 0;
    std::int64_t widest_prefix = 0;
    for (std::size_t l = 0; l < cache.num_layers(); ++l) {
        const std::int64_t n = prefix_count(cache, l);
        if (n > target) {
            std::set<Position> drop;
            std::vector<const KVEntry*> order;
            for (const auto& e : cache.entries(l))
                if (e.origin == Origin::prefix) order.push_back(&e);
            std::sort(order.begin(), order.end(), [](const KVEntry* a, const KVEntry* b) {
                if (a->score_mass != b->score_mass) return a->score_mass < b->score_mass;
                return a->position < b->position;
            });
            for (std::int64_t i = 0; i < n - target; ++i) drop.insert(order[static_cast<std::size_t>(i)]->position);
            cache.clear_protection(l);
            removed += cache.evict(l, drop);
        }
        widest_prefix = std::max(widest_prefix, prefix_count(cache, l));
    }
    if (removed > 0) cache.record_event(Stage::prefix_evict, before, cache.max_count());
    flags.prefix_budget_exhausted = config.budget - widest_prefix < config.min_decode_slack;
    return flags;
}

/**
 * Stage 2 for one decode token: append, then enforce the budget. With the
 * merge path open this runs core-aware consolidation on the decode region;
 * when the regime guard has closed it (prefix_budget_exhausted) the budget is
 * held by plain score-mass eviction instead.
 */
inline CompressOutcome stage2_step(CacheState& cache, StepOutput step, const CaskConfig& cask,
                                   const StageConfig& config, RegimeFlags& flags) {
    absorb_step(cache, std::move(step));
    if (static_cast<std::int64_t>(cache.max_count()) <= config.budget) return {};
    if (flags.prefix_budget_exhausted) {
        CompressOutcome guard;
        guard.evicted = evict_baseline(cache, config.budget);
        return guard;
    }
    auto outcome = cask_compress(cache, cask, config.budget);
    if (outcome.changed) ++flags.decode_events;
    if (outcome.core_overflow) flags.core_overflow = true;
    return outcome;
}

inline RegimeFlags finalize_flags(RegimeFlags flags) {
    flags.merge_inactive = flags.decode_events == 0;
    if (flags.decode_events > 0) {
        flags.regime_label = RegimeLabel::decode_active;
    } else if (flags.prefix_budget_exhausted) {
        flags.regime_label = RegimeLabel::prefix_dominant;
    } else {
        flags.regime_label = RegimeLabel::boundary;
    }
    return flags;
}

}  // namespace cask
