// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "cask/kv_store.hpp"
#include "cask/random.hpp"

namespace cask {

/// Per-layer attention projections, row-major d x d.
struct LayerParams {
    std::vector<double> wq, wk, wv, wo;
};

/**
 * Parameters of the toy causal-attention language model. Everything is drawn
 * from `seed`; equal inputs to init_model give bit-identical parameters.
 */
struct ModelParams {
    std::uint64_t seed = 0;
    std::size_t vocab_size = 0;
    std::size_t model_dim = 0;
    std::size_t num_layers = 0;
    double attention_gain = 0.0;
    double logit_gain = 0.0;
    std::vector<double> embedding;  // vocab x d
    std::vector<LayerParams> layers;
    std::vector<double> unembedding;  // vocab x d

    /// FNV-1a over the raw bytes of every parameter array.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto eat = [&h](const std::vector<double>& v) {
            for (double x : v) {
                std::uint64_t bits;
                std::memcpy(&bits, &x, sizeof bits);
                for (int i = 0; i < 8; ++i) {
                    h ^= (bits >> (8 * i)) & 0xffU;
                    h *= 0x100000001b3ULL;
                }
            }
        };
        eat(embedding);
        for (const auto& l : layers) {
            eat(l.wq);
            eat(l.wk);
            eat(l.wv);
            eat(l.wo);
        }
        eat(unembedding);
        return h;
    }
};

struct ModelShape {
    std::size_t vocab_size = 64;
    std::size_t model_dim = 16;
    std::size_t num_layers = 1;
    double attention_gain = 2.0;
    double logit_gain = 4.0;
};

inline ModelParams init_model(std::uint64_t seed, const ModelShape& shape) {
    if (shape.vocab_size < 2) {
        throw std::invalid_argument("vocab_size must be at least 2");
    }
    if (shape.model_dim % 2 != 0) {
        throw std::invalid_argument("model_dim must be even");
    }
    if (shape.model_dim < 4) {
        throw std::invalid_argument("model_dim must be at least 4");
    }
    if (shape.num_layers < 1) {
        throw std::invalid_argument("num_layers must be positive");
    }
    ModelParams p;
    p.seed = seed;
    p.vocab_size = shape.vocab_size;
    p.model_dim = shape.model_dim;
    p.num_layers = shape.num_layers;
    p.attention_gain = shape.attention_gain;
    p.logit_gain = shape.logit_gain;

    Rng rng(seed);
    const std::size_t d = shape.model_dim;
    const double unit = std::sqrt(3.0);
    const double proj = std::sqrt(3.0 / static_cast<double>(d));
    auto fill = [&rng](std::size_t n, double a) {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(-a, a);
        return v;
    };
    p.embedding = fill(shape.vocab_size * d, unit);
    for (std::size_t l = 0; l < shape.num_layers; ++l) {
        LayerParams lp;
        lp.wq = fill(d * d, proj);
        lp.wk = fill(d * d, proj);
        lp.wv = fill(d * d, proj);
        lp.wo = fill(d * d, proj);
        p.layers.push_back(std::move(lp));
    }
    p.unembedding = fill(shape.vocab_size * d, proj);
    return p;
}

inline ModelParams init_model(std::uint64_t seed, std::size_t vocab_size, std::size_t model_dim,
                              std::size_t num_layers) {
    ModelShape s;
    s.vocab_size = vocab_size;
    s.model_dim = model_dim;
    s.num_layers = num_layers;
    return init_model(seed, s);
}

struct StepOutput {
    std::vector<double> distribution;
    std::vector<KVEntry> new_entries;  // one per layer
    // Per layer: one weight per cache entry present at call time, then the
    // weight of the new token on itself (last element).
    std::vector<std::vector<double>> attention_weights;
};

namespace detail {

inline void matvec(std::span<const double> m, std::span<const double> x, std::span<double> out) {
    const std::size_t d = x.size();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += m[r * d + c] * x[c];
        out[r] = s;
    }
}

inline std::vector<double> rms_normalized(std::span<const double> h) {
    double ss = 0.0;
    for (double x : h) ss += x * x;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(h.size()) + 1e-12);
    std::vector<double> out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * inv;
    return out;
}

/// In-place max-shifted softmax.
inline void softmax(std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (auto& x : v) x /= sum;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

/**
 * One causal step: the new token attends to every entry in `cache` and to
 * itself. Merged representatives add log(group_mass) to their attention
 * logit. Pure: nothing is inserted into the cache.
 */
inline StepOutput forward_step(const ModelParams& params, const CacheState& cache, TokenId token,
                               Origin origin = Origin::decode) {
    if (token < 0 || static_cast<std::size_t>(token) >= params.vocab_size) {
        throw std::invalid_argument("token out of vocab");
    }
    if (cache.num_layers() != params.num_layers) {
        throw std::invalid_argument("cache layer count does not match model");
    }
    const std::size_t d = params.model_dim;
    const double scale = params.attention_gain / std::sqrt(static_cast<double>(d));
    const Position pos = cache.next_position();

    StepOutput out;
    out.attention_weights.resize(params.num_layers);
    std::vector<double> h(params.embedding.begin() + static_cast<std::ptrdiff_t>(token * d),
                          params.embedding.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
    std::vector<double> q(d), o(d), delta(d);
    for (std::size_t l = 0; l < params.num_layers; ++l) {
        const auto& lp = params.layers[l];
        const auto x = detail::rms_normalized(h);
        KVEntry entry;
        entry.key.resize(d);
        entry.value.resize(d);
        entry.position = pos;
        entry.origin = origin;
        detail::matvec(lp.wq, x, q);
        detail::matvec(lp.wk, x, entry.key);
        detail::matvec(lp.wv, x, entry.value);

        const auto& entries = cache.entries(l);
        std::vector<double> w(entries.size() + 1);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].key.size() != d || entries[i].value.size() != d) {
                throw std::invalid_argument("cache entry dimension mismatch");
            }
            w[i] = scale * detail::dot(q, entries[i].key) + std::log(entries[i].group_mass);
        }
        w.back() = scale * detail::dot(q, entry.key);
        detail::softmax(w);

        std::fill(o.begin(), o.end(), 0.0);
        for (std::size_t i = 0; i < entries.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) o[c] += w[i] * entries[i].value[c];
        for (std::size_t c = 0; c < d; ++c) o[c] += w.back() * entry.value[c];
        detail::matvec(lp.wo, o, delta);
        for (std::size_t c = 0; c < d; ++c) h[c] += delta[c];

        entry.score_mass = w.back();
        out.attention_weights[l] = std::move(w);
        out.new_entries.push_back(std::move(entry));
    }
    const auto x = detail::rms_normalized(h);
    out.distribution.resize(params.vocab_size);
    for (std::size_t t = 0; t < params.vocab_size; ++t) {
        out.distribution[t] =
            params.logit_gain * detail::dot(std::span<const double>(params.unembedding).subspan(t * d, d), x);
    }
    detail::softmax(out.distribution);
    return out;
}

/// Adds the step's attention to live entries and appends the new entries.
inline void absorb_step(CacheState& cache, StepOutput step) {
    for (std::size_t l = 0; l < cache.num_layers(); ++l) {
        const auto& w = step.attention_weights[l];
        cache.absorb_attention(l, std::span<const double>(w).first(w.size() - 1));
    }
    cache.append(std::move(step.new_entries));
}

/// Index of the largest probability; ties go to the lowest token id.
inline TokenId argmax_lowest(std::span<const double> dist) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
        if (dist[i] > dist[best]) best = i;
    return static_cast<TokenId>(best);
}

struct Reference {
    std::vector<TokenId> tokens;                      // greedy continuation
    std::vector<std::vector<double>> distributions;   // distribution that produced tokens[t]
    std::map<Position, double> oracle_scores;         // full-KV accumulated attention, layer mean
};

/**
 * Greedy full-KV continuation of `prompt`. The first distribution comes from
 * the last prompt token; each emitted token is fed back until `length` tokens
 * exist (the final token is not fed).
 */
inline Reference generate_reference(const ModelParams& params, std::span<const TokenId> prompt, std::int64_t length) {
    if (length < 1) {
        throw std::invalid_argument("reference length must be at least 1");
    }
    if (prompt.empty()) {
        throw std::invalid_argument("prompt must be nonempty");
    }
    CacheState cache(params.num_layers, std::numeric_limits<std::int64_t>::max());
    Reference ref;
    StepOutput step;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
        step = forward_step(params, cache, prompt[i], Origin::prefix);
        auto dist = step.distribution;
        absorb_step(cache, std::move(step));
        if (i + 1 == prompt.size()) {
            ref.tokens.push_back(argmax_lowest(dist));
            ref.distributions.push_back(std::move(dist));
        }
    }
    while (static_cast<std::int64_t>(ref.tokens.size()) < length) {
        step = forward_step(params, cache, ref.tokens.back(), Origin::decode);
        auto dist = step.distribution;
        absorb_step(cache, std::move(step));
        ref.tokens.push_back(argmax_lowest(dist));
        ref.distributions.push_back(std::move(dist));
    }
    const double layers = static_cast<double>(cache.num_layers());
    for (std::size_t l = 0; l < cache.num_layers(); ++l)
        for (const auto& e : cache.entries(l)) ref.oracle_scores[e.position] += e.score_mass / layers;
    return ref;
}

}  // namespace cask
