// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <limits>

#include "cask/policies.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cask;
using fixtures::entry;

namespace {

std::vector<double> flat_weights(std::size_t dim) { return std::vector<double>(dim / 2, 1.0); }

CaskConfig no_core() {
    CaskConfig c;
    c.sink_count = 0;
    c.recency_window = 0;
    c.anchor_quantile = 1.0;
    return c;
}

}  // namespace

TEST(Core, WindowCoversEverything) {
    Rng rng(1);
    auto cache = fixtures::random_cache(rng, 3, 12, 4, 0);
    CaskConfig c;
    c.recency_window = 12;
    const auto core = detect_core(cache, c);
    EXPECT_EQ(core.size(), 12u);
    for (const auto& e : cache.entries()) EXPECT_EQ(e.is_protected, e.origin == Origin::decode);
}

TEST(Core, DegenerateConfigIsEmpty) {
    Rng rng(2);
    auto cache = fixtures::random_cache(rng, 0, 12, 4, 0);
    EXPECT_TRUE(detect_core(cache, no_core()).empty());
}

TEST(Core, MatchesRuleByRuleOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto cache = fixtures::random_cache(rng, rng.below(5), 20, 4, 0);
        CaskConfig c;
        c.sink_count = static_cast<std::int64_t>(rng.below(5));
        c.recency_window = static_cast<std::int64_t>(rng.below(6));
        c.anchor_quantile = rng.uniform();
        const auto got = core_positions(cache.entries(), c);
        EXPECT_EQ(got, oracle::core(cache.entries(), c.sink_count, c.recency_window, c.anchor_quantile));
    }
}

TEST(Core, ProtectionIsRecomputed) {
    Rng rng(4);
    auto cache = fixtures::random_cache(rng, 0, 10, 4, 0);
    cache.set_protected(0, 5, true);
    const auto core = detect_core(cache, no_core());
    EXPECT_TRUE(core.empty());
    for (const auto& e : cache.entries()) EXPECT_FALSE(e.is_protected);
    CacheState empty(1, 4);
    EXPECT_THROW(detect_core(empty, CaskConfig{}), std::invalid_argument);
}

TEST(Quantile, Interpolates) {
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
    EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(FoldGroup, IdenticalMembers) {
    std::vector<KVEntry> es{entry(0, {1, 2, 3, 4}, 0.1), entry(1, {1, 2, 3, 4}, 0.7), entry(2, {1, 2, 3, 4}, 0.2)};
    MergeGroup g{{0, 1, 2}, {0.3, 2.0, 0.7}, 3.0};
    const auto rep = fold_group(g, es);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(rep.key[c], es[0].key[c], 1e-15);
}

TEST(FoldGroup, TwoOrthogonalKeys) {
    std::vector<KVEntry> es{entry(0, {1, 0}), entry(1, {0, 1})};
    MergeGroup g{{0, 1}, {1.0, 1.0}, 2.0};
    const auto rep = fold_group(g, es);
    EXPECT_EQ(rep.key, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(rep.group_mass, 2.0);
    EXPECT_EQ(rep.member_count, 2);
    EXPECT_EQ(rep.position, 0);
}

TEST(FoldGroup, MatchesIndependentWeightedMean) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<KVEntry> es;
        for (int i = 0; i < 5; ++i) es.push_back(entry(i, fixtures::random_vector(rng, 6)));
        MergeGroup g;
        std::vector<std::vector<double>> keys;
        for (int i = 0; i < 5; ++i) {
            g.positions.push_back(i);
            g.weights.push_back(rng.uniform(0.01, 3.0));
            g.mass += g.weights.back();
            keys.push_back(es[static_cast<std::size_t>(i)].key);
        }
        const auto rep = fold_group(g, es);
        const auto expect = oracle::weighted_mean(keys, g.weights);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(rep.key[c], expect[c], 1e-12);
        EXPECT_EQ(rep.group_mass, g.mass);
    }
}

TEST(FoldGroup, Errors) {
    std::vector<KVEntry> es{entry(0, {1, 0}), entry(1, {0, 1})};
    EXPECT_THROW(fold_group(MergeGroup{{0, 1}, {0.0, 0.0}, 0.0}, es), std::invalid_argument);
    EXPECT_THROW(fold_group(MergeGroup{{0, 1}, {1.0, -1.0}, 0.0}, es), std::invalid_argument);
    EXPECT_THROW(fold_group(MergeGroup{{0, 5}, {1.0, 1.0}, 2.0}, es), std::invalid_argument);
    EXPECT_THROW(fold_group(MergeGroup{{0, 1}, {1.0}, 1.0}, es), std::invalid_argument);
}

TEST(FoldingWeights, ShareOfScoreScaledToMass) {
    auto a = entry(0, {0, 0}, 3.0), b = entry(1, {0, 0}, 1.0);
    a.group_mass = 2.0;
    const std::vector<const KVEntry*> m{&a, &b};
    const auto w = folding_weights(m);
    EXPECT_DOUBLE_EQ(w[0], 2.25);
    EXPECT_DOUBLE_EQ(w[1], 0.75);
    a.score_mass = b.score_mass = 0.0;
    const auto fallback = folding_weights(m);
    EXPECT_DOUBLE_EQ(fallback[0], 2.0);
    EXPECT_DOUBLE_EQ(fallback[1], 1.0);
}

TEST(MergeGroups, ZeroEpsilonDistinctKeys) {
    Rng rng(6);
    auto cache = fixtures::random_cache(rng, 0, 16, 4, 0);
    auto c = no_core();
    c.merge_epsilon = 0.0;
    EXPECT_TRUE(form_merge_groups(cache.entries(), c, flat_weights(4)).empty());
}

TEST(MergeGroups, InfiniteThresholdsMergeAllScratch) {
    Rng rng(7);
    auto cache = fixtures::random_cache(rng, 2, 16, 4, 0);
    auto c = no_core();
    c.merge_epsilon = std::numeric_limits<double>::infinity();
    c.temporal_window = std::numeric_limits<std::int64_t>::max();
    c.max_group_size = 16;
    const auto groups = form_merge_groups(cache.entries(), c, flat_weights(4));
    ASSERT_EQ(groups.size(), 1u);
    EXPECT_EQ(groups[0].positions.size(), 16u);
    EXPECT_EQ(groups[0].positions.front(), 2);
}

TEST(MergeGroups, DuplicatesMatchPairwiseClustering) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        // Motifs far apart relative to epsilon; duplicates exactly equal.
        std::vector<std::vector<double>> motifs;
        for (int m = 0; m < 4; ++m) motifs.push_back(fixtures::random_vector(rng, 6, 10.0));
        CacheState cache(1, 1000);
        std::vector<std::vector<double>> keys;
        const auto n = 2 + rng.below(11);
        for (std::uint64_t i = 0; i < n; ++i) {
            // Half the entries are unique noise vectors.
            auto k = rng.bernoulli(0.5) ? motifs[rng.below(4)] : fixtures::random_vector(rng, 6, 10.0);
            keys.push_back(k);
            cache.append(entry(static_cast<Position>(i), k, rng.uniform()));
        }
        auto c = no_core();
        c.merge_epsilon = 1e-9;
        c.max_group_size = 64;
        const auto w = flat_weights(6);
        const auto groups = form_merge_groups(cache.entries(), c, w);
        auto clusters = oracle::pairwise_clusters(
            keys, [&](std::size_t i, std::size_t j) { return d_kappa(w, keys[i], keys[j]); }, 1e-9);
        std::set<std::set<std::size_t>> expect;
        for (auto& cl : clusters)
            if (cl.size() > 1) expect.insert(cl);
        std::set<std::set<std::size_t>> got;
        for (const auto& g : groups) got.insert(std::set<std::size_t>(g.positions.begin(), g.positions.end()));
        EXPECT_EQ(got, expect);
    }
}

TEST(MergeGroups, RespectsWindowAndGroupCap) {
    CacheState cache(1, 1000);
    for (int i = 0; i < 10; ++i) cache.append(entry(i * 10, {1, 1}, 0.1));
    auto c = no_core();
    c.merge_epsilon = 0.1;
    c.temporal_window = 25;
    c.max_group_size = 8;
    for (const auto& g : form_merge_groups(cache.entries(), c, flat_weights(2))) {
        EXPECT_LE(g.positions.back() - g.positions.front(), 25);
        EXPECT_LE(g.positions.size(), 8u);
    }
    c.temporal_window = 1000;
    const auto capped = form_merge_groups(cache.entries(), c, flat_weights(2));
    ASSERT_EQ(capped.size(), 2u);
    EXPECT_EQ(capped[0].positions.size(), 8u);
    EXPECT_EQ(capped[1].positions.size(), 2u);
}

TEST(MergeGroups, SkipsProtectedAndPrefix) {
    CacheState cache(1, 1000);
    cache.append(entry(0, {1, 1}, 0.1, Origin::prefix));
    for (int i = 1; i < 6; ++i) cache.append(entry(i, {1, 1}, 0.1));
    cache.set_protected(0, 3, true);
    auto c = no_core();
    const auto groups = form_merge_groups(cache.entries(), c, flat_weights(2));
    ASSERT_EQ(groups.size(), 1u);
    EXPECT_EQ(groups[0].positions, (std::vector<Position>{1, 2, 4, 5}));
}

TEST(Compress, UnderBudgetIsUnchanged) {
    Rng rng(9);
    auto cache = fixtures::random_cache(rng, 2, 10, 4, 2);
    const auto before = cache.entries();
    const auto out = cask_compress(cache, CaskConfig{}, 12);
    EXPECT_FALSE(out.changed);
    EXPECT_TRUE(cache.events().empty());
    EXPECT_EQ(cache.count(), before.size());
}

TEST(Compress, FullyRedundantScratchFoldsToOne) {
    CacheState cache(1, 1000);
    Rng rng(10);
    const auto dup = fixtures::random_vector(rng, 4);
    // 20 decode entries; sinks and recency are distinct, the middle is one repeated key.
    for (int i = 0; i < 20; ++i) {
        const bool edge = i < 4 || i >= 12;
        cache.append(entry(i, edge ? fixtures::random_vector(rng, 4) : dup, 0.5));
    }
    CaskConfig c;
    c.anchor_quantile = 1.0;
    c.max_group_size = 64;
    const auto core = core_positions(cache.entries(), c);
    EXPECT_EQ(core.size(), 12u);
    const auto out = cask_compress(cache, c, 14);
    EXPECT_TRUE(out.changed);
    EXPECT_EQ(out.groups, 1u);
    EXPECT_EQ(cache.count(), core.size() + 1);
    EXPECT_EQ(cache.count_events(Stage::decode_consolidate), 1u);
}

TEST(Compress, CoreOverflowIsSignalled) {
    Rng rng(11);
    auto cache = fixtures::random_cache(rng, 0, 30, 4, 0);
    CaskConfig c;
    c.recency_window = 20;
    const auto out = cask_compress(cache, c, 10);
    EXPECT_TRUE(out.core_overflow);
    EXPECT_GT(cache.count(), 10u);
}

TEST(Compress, PrefixIsFrozen) {
    Rng rng(12);
    auto cache = fixtures::random_cache(rng, 20, 30, 4, 3);
    std::set<Position> prefix;
    for (const auto& e : cache.entries())
        if (e.origin == Origin::prefix) prefix.insert(e.position);
    cask_compress(cache, CaskConfig{}, 36);
    std::set<Position> after;
    for (const auto& e : cache.entries())
        if (e.origin == Origin::prefix) after.insert(e.position);
    EXPECT_EQ(prefix, after);
    EXPECT_LE(cache.count(), 36u);
}

TEST(Compress, Idempotent) {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        auto cache = fixtures::random_cache(rng, 4, 60, 6, 6);
        cask_compress(cache, CaskConfig{}, 30);
        const auto once = cache.entries();
        const auto events = cache.events().size();
        const auto out = cask_compress(cache, CaskConfig{}, 30);
        EXPECT_FALSE(out.changed);
        EXPECT_EQ(cache.events().size(), events);
        ASSERT_EQ(cache.count(), once.size());
        for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(cache.entries()[i].position, once[i].position);
    }
}

TEST(Compress, BadBudget) {
    Rng rng(14);
    auto cache = fixtures::random_cache(rng, 0, 5, 4, 0);
    EXPECT_THROW(cask_compress(cache, CaskConfig{}, 0), std::invalid_argument);
    CaskConfig bad;
    bad.max_group_size = 1;
    EXPECT_THROW(cask_compress(cache, bad, 3), std::invalid_argument);
}

TEST(EvictBaseline, BudgetAboveCount) {
    Rng rng(15);
    auto cache = fixtures::random_cache(rng, 3, 5, 4, 0);
    EXPECT_EQ(evict_baseline(cache, 8), 0u);
    EXPECT_EQ(cache.count(), 8u);
    EXPECT_TRUE(cache.events().empty());
}

TEST(EvictBaseline, UniformScoresKeepRecent) {
    CacheState cache(1, 100);
    for (int i = 0; i < 10; ++i) cache.append(entry(i, {0, 0}, 1.0));
    evict_baseline(cache, 4);
    std::vector<Position> kept;
    for (const auto& e : cache.entries()) kept.push_back(e.position);
    EXPECT_EQ(kept, (std::vector<Position>{6, 7, 8, 9}));
    EXPECT_EQ(cache.count_events(Stage::score_evict), 1u);
}

TEST(EvictBaseline, MatchesSortOracle) {
    Rng rng(16);
    for (int trial = 0; trial < 200; ++trial) {
        auto cache = fixtures::random_cache(rng, rng.below(10), 1 + rng.below(30), 2, 0);
        // Coarse scores so ties happen.
        CacheState tied(1, 100);
        for (auto e : cache.entries()) {
            e.score_mass = std::floor(e.score_mass * 4.0);
            tied.append(e);
        }
        const auto budget = static_cast<std::int64_t>(1 + rng.below(tied.count() + 2));
        const auto expect = oracle::keep_top(tied.entries(), budget);
        evict_baseline(tied, budget);
        std::set<Position> got;
        for (const auto& e : tied.entries()) got.insert(e.position);
        EXPECT_EQ(got, expect);
    }
}

TEST(MassDiagnostics, CoverageCases) {
    std::map<Position, double> oracle_scores{{0, 5.0}, {1, 1.0}, {2, 3.0}, {3, 0.5}};
    const auto all = mass_diagnostics({}, {0, 1, 2, 3}, oracle_scores, 2);
    EXPECT_DOUBLE_EQ(all.rho_rep, 1.0);
    EXPECT_DOUBLE_EQ(all.rho_core, 0.0);
    EXPECT_FALSE(all.k_clamped);
    const auto clamped = mass_diagnostics({0}, {}, oracle_scores, 10);
    EXPECT_TRUE(clamped.k_clamped);
    EXPECT_EQ(clamped.topk_size, 4u);
    EXPECT_DOUBLE_EQ(clamped.rho_core, 5.0 / 9.5);
    EXPECT_DOUBLE_EQ(clamped.rho_rep, 5.0 / 9.5);
    EXPECT_THROW(mass_diagnostics({}, {}, oracle_scores, 0), std::invalid_argument);
    EXPECT_THROW(mass_diagnostics({}, {}, {{0, -1.0}}, 1), std::invalid_argument);
}

TEST(MassDiagnostics, EightEntryEnumeration) {
    std::map<Position, double> s;
    const double scores[] = {0.9, 0.1, 0.4, 0.8, 0.05, 0.3, 0.7, 0.2};
    for (int i = 0; i < 8; ++i) s[i] = scores[i];
    // Top 4 by score: 0 (0.9), 3 (0.8), 6 (0.7), 2 (0.4); total 2.8.
    const auto d = mass_diagnostics({0, 1}, {0, 1, 3, 5}, s, 4);
    EXPECT_DOUBLE_EQ(d.rho_core, 0.9 / 2.8);
    EXPECT_DOUBLE_EQ(d.rho_rep, (0.9 + 0.8) / 2.8);
}

TEST(MassDiagnostics, TopKTiesPreferLater) {
    const auto top = oracle_topk({{0, 1.0}, {1, 1.0}, {2, 0.5}}, 1);
    EXPECT_EQ(top, (std::vector<Position>{1}));
}

TEST(Perturbation, IdenticalAndSingleMembers) {
    std::vector<KVEntry> es{entry(0, {1, 2, 3, 4}, 0.2), entry(1, {1, 2, 3, 4}, 0.6)};
    MergeGroup g{{0, 1}, {0.5, 1.5}, 2.0};
    const auto rep = fold_group(g, es);
    const std::vector<std::vector<double>> qs{{1, -1, 2, 0.5}, {3, 3, 3, 3}};
    const auto w = kappa_band_weights(HorizonDistribution::truncated_geometric(8), 4);
    const auto r = perturbation_check(g, es, rep, qs, w);
    for (const auto& [lhs, rhs] : r.pairs) {
        EXPECT_EQ(lhs, 0.0);
        EXPECT_LE(lhs, rhs);
    }
    MergeGroup single{{1}, {1.0}, 1.0};
    const auto rep1 = fold_group(single, es);
    for (const auto& [lhs, rhs] : perturbation_check(single, es, rep1, qs, w).pairs) EXPECT_EQ(lhs, 0.0);
    EXPECT_THROW(perturbation_check(g, es, rep, {}, w), std::invalid_argument);
}

TEST(Perturbation, BoundHoldsOnRandomGroups) {
    Rng rng(17);
    const auto w = kappa_band_weights(HorizonDistribution::truncated_geometric(8), 8);
    std::size_t within = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<KVEntry> es;
        MergeGroup g;
        const auto n = 2 + rng.below(6);
        for (std::uint64_t i = 0; i < n; ++i) {
            es.push_back(entry(static_cast<Position>(i), fixtures::random_vector(rng, 8)));
            g.positions.push_back(static_cast<Position>(i));
            g.weights.push_back(rng.uniform(0.1, 2.0));
            g.mass += g.weights.back();
        }
        const auto rep = fold_group(g, es);
        std::vector<std::vector<double>> qs;
        for (int q = 0; q < 20; ++q) qs.push_back(fixtures::random_vector(rng, 8, 3.0));
        const auto r = perturbation_check(g, es, rep, qs, w);
        EXPECT_EQ(r.lost_mass, 0.0);
        for (const auto& [lhs, rhs] : r.pairs) within += lhs <= rhs;
        total += r.pairs.size();
    }
    EXPECT_GE(double(within) / double(total), 0.99);
}

TEST(KappaNorms, Conventions) {
    const std::vector<double> w{1.0, 0.5}, x{3, 4, 0, 2};
    EXPECT_DOUBLE_EQ(kappa_norm(w, x), 5.0 + 1.0);
    EXPECT_DOUBLE_EQ(kappa_dual_norm(w, x), std::max(5.0, 4.0));
    const std::vector<double> tiny{0.0, 1.0};
    EXPECT_DOUBLE_EQ(kappa_dual_norm(tiny, x), 5.0 / kKappaFloor);
}
