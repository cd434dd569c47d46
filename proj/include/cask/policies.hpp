// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "cask/kernel_geometry.hpp"
#include "cask/kv_store.hpp"

namespace cask {

/// Tunables of the core-aware consolidation policy.
struct CaskConfig {
    std::int64_t sink_count = 4;
    std::int64_t recency_window = 8;
    double anchor_quantile = 0.9;
    double merge_epsilon = 0.5;
    std::int64_t temporal_window = 64;
    std::int64_t max_group_size = 8;
    std::int64_t horizon = 8;
    double horizon_rate = 0.5;
    double frequency_base = kDefaultFrequencyBase;

    void validate() const {
        if (sink_count < 0 || recency_window < 0) throw std::invalid_argument("sink_count and recency_window must be >= 0");
        if (!(anchor_quantile >= 0.0 && anchor_quantile <= 1.0)) throw std::invalid_argument("anchor_quantile must be in [0,1]");
        if (!(merge_epsilon >= 0.0)) throw std::invalid_argument("merge_epsilon must be >= 0");
        if (temporal_window < 1) throw std::invalid_argument("temporal_window must be >= 1");
        if (max_group_size < 2) throw std::invalid_argument("max_group_size must be >= 2");
        if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    }

    HorizonDistribution horizon_distribution() const {
        return HorizonDistribution::truncated_geometric(horizon, horizon_rate);
    }
};

struct MergeGroup {
    std::vector<Position> positions;  // ascending
    std::vector<double> weights;      // a_i, aligned with positions
    double mass = 0.0;                // m_G, left-to-right sum of weights
};

// ---------------------------------------------------------------------------
// Core detection
// ---------------------------------------------------------------------------

/// Linear-interpolated quantile of an unsorted sample (q in [0,1]).
inline double quantile(std::vector<double> sample, double q) {
    if (sample.empty()) throw std::invalid_argument("quantile of empty sample");
    std::sort(sample.begin(), sample.end());
    const double h = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sample.size()) return sample.back();
    return sample[lo] + (h - static_cast<double>(lo)) * (sample[lo + 1] - sample[lo]);
}

/// Union of: first sink_count decode entries, last recency_window decode
/// entries, and decode entries whose score mass is strictly above the
/// anchor quantile of decode score mass.
inline std::set<Position> core_positions(std::span<const KVEntry> entries, const CaskConfig& config) {
    std::vector<const KVEntry*> decode;
    for (const auto& e : entries)
        if (e.origin == Origin::decode) decode.push_back(&e);
    std::set<Position> core;
    if (decode.empty()) return core;
    const auto n = static_cast<std::int64_t>(decode.size());
    for (std::int64_t i = 0; i < std::min(config.sink_count, n); ++i) core.insert(decode[i]->position);
    for (std::int64_t i = std::max<std::int64_t>(0, n - config.recency_window); i < n; ++i) core.insert(decode[i]->position);
    std::vector<double> scores;
    scores.reserve(decode.size());
    for (const auto* e : decode) scores.push_back(e->score_mass);
    const double cut = quantile(scores, config.anchor_quantile);
    for (const auto* e : decode)
        if (e->score_mass > cut) core.insert(e->position);
    return core;
}

/// Recomputes the core of `layer` and marks exactly those entries protected.
inline std::set<Position> detect_core(CacheState& cache, const CaskConfig& config, std::size_t layer = 0) {
    if (cache.count(layer) == 0) throw std::invalid_argument("detect_core on an empty cache");
    auto core = core_positions(cache.entries(layer), config);
    cache.clear_protection(layer);
    for (Position p : core) cache.set_protected(layer, p, true);
    return core;
}

// ---------------------------------------------------------------------------
// m-folding
// ---------------------------------------------------------------------------

/**
 * Folding weights for a set of entries: attention-mass shares scaled so they
 * sum to the members' combined group mass. The folded key is then the
 * attention-weighted mean and the representative keeps the mass its members
 * carried into attention.
 */
inline std::vector<double> folding_weights(std::span<const KVEntry* const> members) {
    double score = 0.0;
    double mass = 0.0;
    for (const auto* e : members) {
        score += e->score_mass;
        mass += e->group_mass;
    }
    std::vector<double> w;
    w.reserve(members.size());
    for (const auto* e : members) w.push_back(score > 0.0 ? mass * (e->score_mass / score) : e->group_mass);
    return w;
}

/// Representative with key = (1/m_G) sum a_i k_i, value likewise, group_mass = m_G.
inline KVEntry fold_group(const MergeGroup& group, std::span<const KVEntry> entries) {
    if (group.positions.size() != group.weights.size() || group.positions.empty()) {
        throw std::invalid_argument("malformed merge group");
    }
    double mass = 0.0;
    for (double a : group.weights) {
        if (!(a >= 0.0)) throw std::invalid_argument("negative folding weight");
        mass += a;
    }
    if (!(mass > 0.0)) throw std::invalid_argument("all-zero weights");

    std::vector<const KVEntry*> members;
    for (Position p : group.positions) {
        auto it = std::find_if(entries.begin(), entries.end(), [p](const KVEntry& e) { return e.position == p; });
        if (it == entries.end()) throw std::invalid_argument("group member not live");
        members.push_back(&*it);
    }
    const std::size_t d = members.front()->key.size();
    KVEntry rep;
    rep.key.assign(d, 0.0);
    rep.value.assign(d, 0.0);
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            rep.key[c] += group.weights[i] * members[i]->key[c];
            rep.value[c] += group.weights[i] * members[i]->value[c];
        }
        rep.score_mass += members[i]->score_mass;
    }
    for (std::size_t c = 0; c < d; ++c) {
        rep.key[c] /= mass;
        rep.value[c] /= mass;
    }
    rep.position = group.positions.front();
    rep.origin = Origin::decode;
    rep.group_mass = mass;
    rep.member_count = static_cast<std::int64_t>(group.positions.size());
    return rep;
}

/**
 * Greedy temporal scan over unprotected decode entries. A group is seeded at
 * the earliest unassigned entry and admits later unassigned entries within
 * temporal_window positions of the seed whose d_kappa to the running folded
 * centroid is at most merge_epsilon, up to max_group_size members.
 * Singleton groups are dropped.
 */
inline std::vector<MergeGroup> form_merge_groups(std::span<const KVEntry> entries, const CaskConfig& config,
                                                 std::span<const double> band_weights) {
    std::vector<const KVEntry*> scratch;
    for (const auto& e : entries)
        if (e.origin == Origin::decode && !e.is_protected) scratch.push_back(&e);

    std::vector<bool> assigned(scratch.size(), false);
    std::vector<MergeGroup> groups;
    std::vector<double> centroid;
    for (std::size_t s = 0; s < scratch.size(); ++s) {
        if (assigned[s]) continue;
        assigned[s] = true;
        std::vector<const KVEntry*> members{scratch[s]};
        centroid = scratch[s]->key;
        for (std::size_t j = s + 1; j < scratch.size(); ++j) {
            if (static_cast<std::int64_t>(members.size()) >= config.max_group_size) break;
            if (scratch[j]->position - scratch[s]->position > config.temporal_window) break;
            if (assigned[j]) continue;
            if (d_kappa(band_weights, scratch[j]->key, centroid) > config.merge_epsilon) continue;
            members.push_back(scratch[j]);
            assigned[j] = true;
            const auto w = folding_weights(members);
            double m = 0.0;
            for (double a : w) m += a;
            std::fill(centroid.begin(), centroid.end(), 0.0);
            for (std::size_t i = 0; i < members.size(); ++i)
                for (std::size_t c = 0; c < centroid.size(); ++c) centroid[c] += w[i] * members[i]->key[c];
            if (m > 0.0)
                for (auto& c : centroid) c /= m;
        }
        if (members.size() < 2) continue;
        MergeGroup g;
        for (const auto* e : members) g.positions.push_back(e->position);
        g.weights = folding_weights(members);
        for (double a : g.weights) g.mass += a;
        groups.push_back(std::move(g));
    }
    return groups;
}

inline std::vector<MergeGroup> form_merge_groups(std::span<const KVEntry> entries, const CaskConfig& config,
                                                 const HorizonDistribution& pi) {
    if (entries.empty()) return {};
    const auto w = kappa_band_weights(pi, entries.front().key.size(), config.frequency_base);
    return form_merge_groups(entries, config, w);
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

struct CompressOutcome {
    bool changed = false;
    bool core_overflow = false;
    std::size_t groups = 0;
    std::size_t folded_members = 0;
    std::size_t evicted = 0;
    std::vector<double> lost_mass;  // |group_mass - sum a_i| per folded group
};

/// Entries ordered for eviction: lowest score first, older first on ties.
inline std::vector<const KVEntry*> eviction_order(std::span<const KVEntry> entries, bool skip_protected,
                                                  bool decode_only) {
    std::vector<const KVEntry*> c;
    for (const auto& e : entries) {
        if (skip_protected && e.is_protected) continue;
        if (decode_only && e.origin != Origin::decode) continue;
        c.push_back(&e);
    }
    std::sort(c.begin(), c.end(), [](const KVEntry* a, const KVEntry* b) {
        if (a->score_mass != b->score_mass) return a->score_mass < b->score_mass;
        return a->position < b->position;
    });
    return c;
}

/**
 * Core-aware consolidation of the decode region: detect core, fold each merge
 * group, then evict the lowest-score unprotected decode entries while over
 * budget. Prefix entries are never touched. Logs one decode-consolidate event
 * when anything changed.
 */
inline CompressOutcome cask_compress(CacheState& cache, const CaskConfig& config, std::int64_t budget) {
    config.validate();
    if (budget < 1) throw std::invalid_argument("budget must be positive");
    CompressOutcome out;
    const std::size_t before = cache.max_count();
    const auto pi = config.horizon_distribution();
    for (std::size_t l = 0; l < cache.num_layers(); ++l) {
        if (static_cast<std::int64_t>(cache.count(l)) <= budget) continue;
        detect_core(cache, config, l);
        const auto& entries = cache.entries(l);
        const auto weights = kappa_band_weights(pi, entries.front().key.size(), config.frequency_base);
        const auto groups = form_merge_groups(entries, config, weights);
        std::vector<KVEntry> reps;
        reps.reserve(groups.size());
        for (const auto& g : groups) reps.push_back(fold_group(g, entries));
        for (std::size_t i = 0; i < groups.size(); ++i) {
            out.lost_mass.push_back(std::abs(reps[i].group_mass - groups[i].mass));
            out.folded_members += groups[i].positions.size();
            cache.merge_replace(l, groups[i].positions, groups[i].weights, std::move(reps[i]));
        }
        out.groups += groups.size();
        const auto count = static_cast<std::int64_t>(cache.count(l));
        if (count > budget) {
            std::set<Position> drop;
            for (const auto* e : eviction_order(cache.entries(l), true, true)) {
                if (count - static_cast<std::int64_t>(drop.size()) <= budget) break;
                drop.insert(e->position);
            }
            out.evicted += cache.evict(l, drop);
        }
        if (static_cast<std::int64_t>(cache.count(l)) > budget) out.core_overflow = true;
        out.changed = out.changed || !groups.empty() || out.evicted > 0;
    }
    if (out.changed) cache.record_event(Stage::decode_consolidate, before, cache.max_count());
    return out;
}

/// Keeps the `budget` entries with highest score mass (recency breaks ties),
/// regardless of origin or protection.
inline std::size_t evict_baseline(CacheState& cache, std::int64_t budget) {
    if (budget < 1) throw std::invalid_argument("budget must be positive");
    const std::size_t before = cache.max_count();
    std::size_t removed = 0;
    for (std::size_t l = 0; l < cache.num_layers(); ++l) {
        const auto count = static_cast<std::int64_t>(cache.count(l));
        if (count <= budget) continue;
        cache.clear_protection(l);
        std::set<Position> drop;
        for (const auto* e : eviction_order(cache.entries(l), false, false)) {
            if (count - static_cast<std::int64_t>(drop.size()) <= budget) break;
            drop.insert(e->position);
        }
        removed += cache.evict(l, drop);
    }
    if (removed > 0) cache.record_event(Stage::score_evict, before, cache.max_count());
    return removed;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct MassDiagnostics {
    double rho_core = 0.0;
    double rho_rep = 0.0;
    std::size_t topk_size = 0;
    bool k_clamped = false;
    std::vector<double> lost_mass;
};

/// Top-k positions by oracle score, ties to the later position.
inline std::vector<Position> oracle_topk(const std::map<Position, double>& oracle, std::size_t k) {
    std::vector<std::pair<Position, double>> v(oracle.begin(), oracle.end());
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first > b.first;
    });
    std::vector<Position> out;
    for (std::size_t i = 0; i < std::min(k, v.size()); ++i) out.push_back(v[i].first);
    return out;
}

/**
 * rho_core and rho_rep: shares of the oracle top-k score mass held by the core
 * and by the representative set. `covered` lists every position represented
 * in the live cache (live entries and the members folded into them); the core
 * is always counted as covered.
 */
inline MassDiagnostics mass_diagnostics(const std::set<Position>& core, const std::set<Position>& covered,
                                        const std::map<Position, double>& oracle_scores, std::size_t k) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    MassDiagnostics d;
    for (const auto& [p, s] : oracle_scores) {
        if (!(s >= 0.0)) throw std::invalid_argument("oracle scores must be non-negative");
    }
    if (k > oracle_scores.size()) {
        d.k_clamped = true;
        k = oracle_scores.size();
    }
    const auto top = oracle_topk(oracle_scores, k);
    d.topk_size = top.size();
    double total = 0.0, in_core = 0.0, in_rep = 0.0;
    for (Position p : top) {
        const double s = oracle_scores.at(p);
        total += s;
        if (core.count(p)) {
            in_core += s;
            in_rep += s;
        } else if (covered.count(p)) {
            in_rep += s;
        }
    }
    if (total > 0.0) {
        d.rho_core = in_core / total;
        d.rho_rep = in_rep / total;
    }
    return d;
}

/// Every position represented by live entries of `layer`.
inline std::set<Position> covered_positions(const CacheState& cache, std::size_t layer = 0) {
    std::set<Position> out;
    for (const auto& e : cache.entries(layer)) {
        auto c = e.covered_positions();
        out.insert(c.begin(), c.end());
    }
    return out;
}

inline constexpr double kKappaFloor = 1e-6;

/// ||x||_kappa = sum_f |kappa_f| ||x_f||.
inline double kappa_norm(std::span<const double> band_weights, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t f = 0; f < band_weights.size(); ++f) s += band_weights[f] * std::hypot(x[2 * f], x[2 * f + 1]);
    return s;
}

/// ||q||_{kappa,*} = max_f ||q_f|| / max(|kappa_f|, kKappaFloor).
inline double kappa_dual_norm(std::span<const double> band_weights, std::span<const double> q) {
    double m = 0.0;
    for (std::size_t f = 0; f < band_weights.size(); ++f)
        m = std::max(m, std::hypot(q[2 * f], q[2 * f + 1]) / std::max(band_weights[f], kKappaFloor));
    return m;
}

struct PerturbationReport {
    std::vector<std::pair<double, double>> pairs;  // (lhs, rhs) per query
    double fraction_within = 0.0;
    double lost_mass = 0.0;
};

/**
 * Compares the representative's attention-logit perturbation against the
 * dispersion-plus-lost-mass bound:
 *   lhs = | sum a_i <q,k_i> - group_mass * <q, k_rep> |
 *   rhs = ||q||_{kappa,*} * sum a_i ||k_i - k_rep||_kappa + |group_mass - m_G|
 */
inline PerturbationReport perturbation_check(const MergeGroup& group, std::span<const KVEntry> entries,
                                             const KVEntry& representative,
                                             std::span<const std::vector<double>> queries,
                                             std::span<const double> band_weights) {
    if (queries.empty()) throw std::invalid_argument("perturbation_check needs queries");
    std::vector<const KVEntry*> members;
    for (Position p : group.positions) {
        auto it = std::find_if(entries.begin(), entries.end(), [p](const KVEntry& e) { return e.position == p; });
        if (it == entries.end()) throw std::invalid_argument("group member not live");
        members.push_back(&*it);
    }
    PerturbationReport rep;
    rep.lost_mass = std::abs(representative.group_mass - group.mass);
    const std::size_t d = representative.key.size();
    double dispersion = 0.0;
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t c = 0; c < d; ++c) diff[c] = members[i]->key[c] - representative.key[c];
        dispersion += group.weights[i] * kappa_norm(band_weights, diff);
    }
    const double mass_gap = group.mass - representative.group_mass;
    std::size_t within = 0;
    for (const auto& q : queries) {
        // sum a_i <q, k_i - k_rep> + (m_G - group_mass) <q, k_rep>, which is
        // the lhs above rearranged so identical members cancel exactly.
        double rep_dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) rep_dot += q[c] * representative.key[c];
        double acc = mass_gap * rep_dot;
        for (std::size_t i = 0; i < members.size(); ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += q[c] * (members[i]->key[c] - representative.key[c]);
            acc += group.weights[i] * dot;
        }
        const double lhs = std::abs(acc);
        const double rhs = kappa_dual_norm(band_weights, q) * dispersion + rep.lost_mass;
        if (lhs <= rhs) ++within;
        rep.pairs.emplace_back(lhs, rhs);
    }
    rep.fraction_within = static_cast<double>(within) / static_cast<double>(queries.size());
    return rep;
}

}  // namespace cask
