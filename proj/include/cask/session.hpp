// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cask/kv_store.hpp"
#include "cask/policies.hpp"
#include "cask/trace_model.hpp"
#include "cask/two_stage.hpp"

namespace cask {

enum class Method { none, evict, cask };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::none: return "none";
    case Method::evict: return "evict";
    case Method::cask: return "cask";
    }
    return "unknown";
}

inline Method parse_method(const std::string& s) {
    if (s == "none") return Method::none;
    if (s == "evict") return Method::evict;
    if (s == "cask") return Method::cask;
    throw std::invalid_argument("unknown method '" + s + "'");
}

/// Policy selector plus every tunable the pipeline needs.
struct PolicyConfig {
    Method method = Method::none;
    CaskConfig cask;
    StageConfig stage;

    std::int64_t budget() const { return stage.budget; }
};

inline PolicyConfig make_policy(Method m, std::int64_t budget, CaskConfig cask = {}, StageConfig stage = {}) {
    stage.budget = budget;
    return {m, cask, stage};
}

/**
 * Drives one sequence through the model under a compression policy. Prefill
 * runs at full KV; the policy's prefill hook (stage 1 for cask, budget
 * eviction for evict) fires once the prompt is consumed, then every fed token
 * goes through the policy's per-step hook.
 */
class PolicySession {
public:
    PolicySession(const ModelParams& params, PolicyConfig policy)
        : params_(&params), policy_(std::move(policy)),
          cache_(params.num_layers, policy_.method == Method::none ? std::numeric_limits<std::int64_t>::max()
                                                                     : policy_.budget()) {
        if (policy_.method != Method::none) {
            policy_.stage.validate();
            policy_.cask.validate();
        }
    }

    /// Feeds the prompt and returns the distribution over the first continuation token.
    std::vector<double> prefill(std::span<const TokenId> prompt) {
        if (prompt.empty()) throw std::invalid_argument("prompt must be nonempty");
        if (prefilled_) throw std::logic_error("prefill called twice");
        std::vector<double> dist;
        for (TokenId t : prompt) {
            auto step = forward_step(*params_, cache_, t, Origin::prefix);
            dist = step.distribution;
            absorb_step(cache_, std::move(step));
        }
        switch (policy_.method) {
        case Method::none: break;
        case Method::evict: evict_baseline(cache_, policy_.budget()); break;
        case Method::cask: flags_ = stage1_prefix_evict(cache_, policy_.stage); break;
        }
        prefilled_ = true;
        return dist;
    }

    /// Feeds one continuation token and returns the next distribution.
    std::vector<double> feed(TokenId token) {
        if (!prefilled_) throw std::logic_error("feed before prefill");
        auto step = forward_step(*params_, cache_, token, Origin::decode);
        auto dist = step.distribution;
        switch (policy_.method) {
        case Method::none: absorb_step(cache_, std::move(step)); break;
        case Method::evict:
            absorb_step(cache_, std::move(step));
            if (static_cast<std::int64_t>(cache_.max_count()) > policy_.budget()) evict_baseline(cache_, policy_.budget());
            break;
        case Method::cask: {
            const auto outcome = stage2_step(cache_, std::move(step), policy_.cask, policy_.stage, flags_);
            groups_ += outcome.groups;
            folded_members_ += outcome.folded_members;
            for (double m : outcome.lost_mass) lost_mass_total_ += m;
            break;
        }
        }
        return dist;
    }

    const CacheState& cache() const { return cache_; }
    const PolicyConfig& policy() const { return policy_; }
    RegimeFlags flags() const { return finalize_flags(flags_); }
    std::size_t groups_folded() const { return groups_; }
    std::size_t members_folded() const { return folded_members_; }
    double lost_mass_total() const { return lost_mass_total_; }

private:
    const ModelParams* params_;
    PolicyConfig policy_;
    CacheState cache_;
    RegimeFlags flags_;
    bool prefilled_ = false;
    std::size_t groups_ = 0;
    std::size_t folded_members_ = 0;
    double lost_mass_total_ = 0.0;
};

}  // namespace cask
