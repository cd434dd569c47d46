// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cask {

using TokenId = std::int32_t;
using Position = std::int64_t;

enum class Origin { prefix, decode };

/// Stage tag of a logged compression event. `score_evict` is plain score-mass
/// eviction: the baseline policy and the budget guard while merging is closed.
enum class Stage { prefix_evict, decode_consolidate, score_evict };

inline const char* to_string(Origin o) { return o == Origin::prefix ? "prefix" : "decode"; }

inline const char* to_string(Stage s) {
    switch (s) {
    case Stage::prefix_evict: return "prefix-evict";
    case Stage::decode_consolidate: return "decode-consolidate";
    case Stage::score_evict: return "score-evict";
    }
    return "unknown";
}

/**
 * One cached key/value slot. An unmerged entry has group_mass 1 and
 * member_count 1; a representative produced by folding carries the folded
 * group mass and the positions it covers in `members`.
 */
struct KVEntry {
    std::vector<double> key;
    std::vector<double> value;
    Position position = 0;
    Origin origin = Origin::decode;
    double score_mass = 0.0;  // accumulated attention mass
    double group_mass = 1.0;
    std::int64_t member_count = 1;
    bool is_protected = false;
    std::vector<Position> members;  // covered positions; empty for unmerged entries

    bool merged() const { return !members.empty(); }

    /// Positions this slot stands for (itself when unmerged).
    std::vector<Position> covered_positions() const {
        return members.empty() ? std::vector<Position>{position} : members;
    }
};

struct CompressionEvent {
    std::int64_t step = 0;  // total_appended when the event fired
    Stage stage = Stage::decode_consolidate;
    std::size_t entries_before = 0;
    std::size_t entries_after = 0;
};

/**
 * Position-ordered KV entries for every layer, plus budget accounting and the
 * compression-event log. All layers receive exactly one entry per appended
 * token; compression may then shrink layers independently.
 */
class CacheState {
public:
    CacheState() = default;

    CacheState(std::size_t num_layers, std::int64_t budget) : layers_(num_layers), evicted_(num_layers, 0), budget_(budget) {
        if (num_layers == 0) {
            throw std::invalid_argument("cache needs at least one layer");
        }
    }

    std::size_t num_layers() const { return layers_.size(); }
    std::int64_t budget() const { return budget_; }
    void set_budget(std::int64_t b) { budget_ = b; }
    std::int64_t total_appended() const { return total_appended_; }
    Position next_position() const { return last_position_ ? *last_position_ + 1 : 0; }

    const std::vector<KVEntry>& entries(std::size_t layer = 0) const { return layers_.at(layer); }
    std::size_t count(std::size_t layer = 0) const { return layers_.at(layer).size(); }

    /// Slots in use by the widest layer.
    std::size_t max_count() const {
        std::size_t m = 0;
        for (const auto& l : layers_) m = std::max(m, l.size());
        return m;
    }

    bool empty() const { return max_count() == 0; }

    /// Members (original tokens) removed from `layer` by eviction so far.
    std::int64_t evicted_members(std::size_t layer = 0) const { return evicted_.at(layer); }

    const std::vector<CompressionEvent>& events() const { return events_; }

    std::size_t count_events(Stage stage) const {
        return static_cast<std::size_t>(
            std::count_if(events_.begin(), events_.end(), [stage](const auto& e) { return e.stage == stage; }));
    }

    /// Appends one entry per layer for the next token.
    void append(std::vector<KVEntry> per_layer) {
        if (per_layer.size() != layers_.size()) {
            throw std::invalid_argument("append expects one entry per layer");
        }
        const Position pos = per_layer.front().position;
        for (const auto& e : per_layer) {
            if (e.position != pos) {
                throw std::invalid_argument("layer entries disagree on position");
            }
        }
        if (last_position_ && pos <= *last_position_) {
            throw std::invalid_argument("non-monotone position " + std::to_string(pos));
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            layers_[l].push_back(std::move(per_layer[l]));
        }
        last_position_ = pos;
        ++total_appended_;
    }

    void append(KVEntry entry) {
        std::vector<KVEntry> v;
        v.push_back(std::move(entry));
        append(std::move(v));
    }

    /// Removes the listed positions from `layer`; returns the number removed.
    /// When `log_as` is set and something was removed, an event is logged.
    std::size_t evict(std::size_t layer, const std::set<Position>& positions,
                      std::optional<Stage> log_as = std::nullopt) {
        auto& entries = layers_.at(layer);
        for (const auto& e : entries) {
            if (e.is_protected && positions.count(e.position)) {
                throw std::invalid_argument("protected entry " + std::to_string(e.position));
            }
        }
        const std::size_t before = entries.size();
        std::int64_t members = 0;
        std::erase_if(entries, [&](const KVEntry& e) {
            if (positions.count(e.position)) {
                members += e.member_count;
                return true;
            }
            return false;
        });
        evicted_[layer] += members;
        const std::size_t removed = before - entries.size();
        if (removed > 0 && log_as) {
            record_event(*log_as, before, entries.size());
        }
        return removed;
    }

    /// Replaces the group members with `representative`, placed at the
    /// earliest member position. `weights` are the folding weights a_i; the
    /// representative must carry their left-to-right sum as group_mass.
    void merge_replace(std::size_t layer, std::span<const Position> group, std::span<const double> weights,
                       KVEntry representative) {
        if (group.size() < 2) {
            throw std::invalid_argument("singleton group");
        }
        if (weights.size() != group.size()) {
            throw std::invalid_argument("one weight per group member expected");
        }
        double mass = 0.0;
        for (double w : weights) mass += w;
        if (mass != representative.group_mass) {
            throw std::invalid_argument("mass mismatch");
        }
        auto& entries = layers_.at(layer);
        const std::set<Position> wanted(group.begin(), group.end());
        if (wanted.size() != group.size()) {
            throw std::invalid_argument("duplicate group member");
        }
        std::size_t found = 0;
        std::int64_t member_count = 0;
        std::vector<Position> covered;
        for (const auto& e : entries) {
            if (!wanted.count(e.position)) continue;
            if (e.is_protected) {
                throw std::invalid_argument("protected entry " + std::to_string(e.position));
            }
            ++found;
            member_count += e.member_count;
            auto c = e.covered_positions();
            covered.insert(covered.end(), c.begin(), c.end());
        }
        if (found != group.size()) {
            throw std::invalid_argument("group member not live");
        }
        std::sort(covered.begin(), covered.end());
        representative.position = *wanted.begin();
        representative.member_count = member_count;
        representative.members = std::move(covered);
        representative.is_protected = false;

        std::erase_if(entries, [&](const KVEntry& e) { return wanted.count(e.position) > 0; });
        auto at = std::lower_bound(entries.begin(), entries.end(), representative.position,
                                   [](const KVEntry& e, Position p) { return e.position < p; });
        entries.insert(at, std::move(representative));
    }

    void record_event(Stage stage, std::size_t before, std::size_t after) {
        events_.push_back({total_appended_, stage, before, after});
    }

    /// Adds one step of attention weights (one per live entry, in order).
    void absorb_attention(std::size_t layer, std::span<const double> weights) {
        auto& entries = layers_.at(layer);
        if (weights.size() != entries.size()) {
            throw std::invalid_argument("attention weights do not match cache entries");
        }
        for (std::size_t i = 0; i < entries.size(); ++i) entries[i].score_mass += weights[i];
    }

    void set_protected(std::size_t layer, Position pos, bool value) {
        for (auto& e : layers_.at(layer)) {
            if (e.position == pos) {
                e.is_protected = value;
                return;
            }
        }
        throw std::invalid_argument("no entry at position " + std::to_string(pos));
    }

    void clear_protection(std::size_t layer) {
        for (auto& e : layers_.at(layer)) e.is_protected = false;
    }

    /// Sum of live member counts plus evicted members; equals total_appended.
    std::int64_t accounted_members(std::size_t layer = 0) const {
        std::int64_t n = evicted_.at(layer);
        for (const auto& e : layers_.at(layer)) n += e.member_count;
        return n;
    }

private:
    std::vector<std::vector<KVEntry>> layers_;
    std::vector<std::int64_t> evicted_;
    std::vector<CompressionEvent> events_;
    std::int64_t budget_ = 0;
    std::int64_t total_appended_ = 0;
    std::optional<Position> last_position_;
};

/// 1 - terminal cache tokens / tokens ever appended. Uses the widest layer.
inline double terminal_saved_ratio(const CacheState& cache) {
    if (cache.total_appended() < 1) {
        throw std::invalid_argument("empty history");
    }
    return 1.0 - static_cast<double>(cache.max_count()) / static_cast<double>(cache.total_appended());
}

}  // namespace cask
