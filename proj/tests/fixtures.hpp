// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "cask/kv_store.hpp"
#include "cask/random.hpp"

namespace fixtures {

using namespace cask;

inline KVEntry entry(Position pos, std::vector<double> key, double score = 0.0, Origin origin = Origin::decode) {
    KVEntry e;
    e.key = key;
    e.value = std::move(key);
    e.position = pos;
    e.origin = origin;
    e.score_mass = score;
    return e;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t d, double scale = 1.0) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return v;
}

/// Single-layer cache: `prefix` prefix entries then `decode` decode entries.
/// Decode keys are drawn from `motifs` distinct vectors so duplicates occur.
inline CacheState random_cache(Rng& rng, std::size_t prefix, std::size_t decode, std::size_t dim,
                               std::size_t motifs, std::int64_t budget = 1 << 20) {
    CacheState cache(1, budget);
    std::vector<std::vector<double>> pool;
    for (std::size_t m = 0; m < std::max<std::size_t>(motifs, 1); ++m) pool.push_back(random_vector(rng, dim));
    Position p = 0;
    for (std::size_t i = 0; i < prefix; ++i) cache.append(entry(p++, random_vector(rng, dim), rng.uniform(), Origin::prefix));
    for (std::size_t i = 0; i < decode; ++i) {
        auto key = motifs ? pool[rng.below(pool.size())] : random_vector(rng, dim);
        cache.append(entry(p++, std::move(key), rng.uniform(), Origin::decode));
    }
    return cache;
}

}  // namespace fixtures
