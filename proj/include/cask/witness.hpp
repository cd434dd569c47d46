// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cask/kv_store.hpp"
#include "cask/random.hpp"

namespace cask {

enum class Regime { short_prompt_reasoning, prompt_heavy_decode_active, prompt_heavy_prefix_dominant };

inline const char* to_string(Regime r) {
    switch (r) {
    case Regime::short_prompt_reasoning: return "short-prompt-reasoning";
    case Regime::prompt_heavy_decode_active: return "prompt-heavy-decode-active";
    case Regime::prompt_heavy_prefix_dominant: return "prompt-heavy-prefix-dominant";
    }
    return "unknown";
}

inline constexpr TokenId kBosToken = 0;
inline constexpr std::int64_t kReferenceBudget = 256;
inline constexpr double kReferencePrefixFraction = 0.75;

/// Witness template. `reasoning` is a short prompt with a long continuation;
/// `summary` is a long document of restated sentences; `qa` is a document
/// whose closing question re-quotes earlier spans.
enum class WitnessKind { reasoning, summary, qa };

inline WitnessKind parse_witness_kind(const std::string& s) {
    if (s == "reasoning") return WitnessKind::reasoning;
    if (s == "summary") return WitnessKind::summary;
    if (s == "qa") return WitnessKind::qa;
    throw std::invalid_argument("unknown witness kind '" + s + "'");
}

inline const char* to_string(WitnessKind k) {
    switch (k) {
    case WitnessKind::reasoning: return "reasoning";
    case WitnessKind::summary: return "summary";
    case WitnessKind::qa: return "qa";
    }
    return "unknown";
}

struct WitnessSpec {
    std::string kind = "reasoning";
    std::uint64_t seed = 0;
    std::int64_t prefix_len = 16;
    std::int64_t decode_len = 64;
    double redundancy = 0.5;
};

struct Witness {
    WitnessSpec spec;
    std::string name;  // kind-seed
    Regime regime = Regime::short_prompt_reasoning;
    std::vector<TokenId> prompt;  // BOS followed by prefix_len tokens
    std::int64_t repeated_blocks = 0;
};

/**
 * Regime from lengths alone: short prompt when the prefix is shorter than the
 * decode; otherwise decode-active when the decode would overflow the slack
 * left after prefix trimming to floor(fraction * budget), else prefix-dominant.
 */
inline Regime classify_regime(std::int64_t prefix_tokens, std::int64_t decode_len,
                              std::int64_t budget = kReferenceBudget,
                              double prefix_fraction = kReferencePrefixFraction) {
    if (prefix_tokens < decode_len) return Regime::short_prompt_reasoning;
    const auto kept = std::min<std::int64_t>(prefix_tokens,
                                             static_cast<std::int64_t>(std::floor(prefix_fraction * static_cast<double>(budget))));
    return decode_len > budget - kept ? Regime::prompt_heavy_decode_active : Regime::prompt_heavy_prefix_dominant;
}

/**
 * Builds a synthetic prompt from motif blocks. Each block is either a fresh
 * motif of random content tokens or, with probability `redundancy`, a verbatim
 * repeat of an earlier block.
 */
inline Witness make_witness(const WitnessSpec& spec, std::size_t vocab_size, std::int64_t reference_budget = kReferenceBudget) {
    const auto kind = parse_witness_kind(spec.kind);
    if (spec.prefix_len < 0) throw std::invalid_argument("prefix_len must be non-negative");
    if (spec.decode_len < 1) throw std::invalid_argument("decode_len must be at least 1");
    if (!(spec.redundancy >= 0.0 && spec.redundancy <= 1.0)) throw std::invalid_argument("redundancy must be in [0,1]");
    if (vocab_size < 3) throw std::invalid_argument("vocab too small for witnesses");

    Rng rng(spec.seed * 0x9E37U + static_cast<std::uint64_t>(kind) + 1);
    Witness w;
    w.spec = spec;
    w.name = spec.kind + "-" + std::to_string(spec.seed);
    w.prompt.push_back(kBosToken);

    std::int64_t min_block = 3, max_block = 6;
    if (kind == WitnessKind::summary) {
        min_block = 6;
        max_block = 10;
    }
    const auto content = [&] { return static_cast<TokenId>(1 + rng.below(vocab_size - 1)); };
    std::vector<std::vector<TokenId>> blocks;
    std::int64_t body = spec.prefix_len;
    std::int64_t question = 0;
    if (kind == WitnessKind::qa && spec.prefix_len >= 8) {
        question = std::max<std::int64_t>(4, spec.prefix_len / 8);
        body -= question;
    }
    std::int64_t emitted = 0;
    while (emitted < body) {
        std::vector<TokenId> block;
        if (!blocks.empty() && rng.bernoulli(spec.redundancy)) {
            block = blocks[rng.below(blocks.size())];
            ++w.repeated_blocks;
        } else {
            const auto len = min_block + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_block - min_block + 1)));
            for (std::int64_t i = 0; i < len; ++i) block.push_back(content());
            blocks.push_back(block);
        }
        for (TokenId t : block) {
            if (emitted == body) break;
            w.prompt.push_back(t);
            ++emitted;
        }
    }
    if (question > 0) {
        // The question quotes a stretch of the document when redundancy allows.
        const std::int64_t doc_end = static_cast<std::int64_t>(w.prompt.size());
        for (std::int64_t i = 0; i < question; ++i) {
            if (spec.redundancy > 0.0 && rng.bernoulli(spec.redundancy) && doc_end > 1) {
                w.prompt.push_back(w.prompt[1 + rng.below(static_cast<std::uint64_t>(doc_end - 1))]);
            } else {
                w.prompt.push_back(content());
            }
        }
    }
    w.regime = classify_regime(static_cast<std::int64_t>(w.prompt.size()), spec.decode_len, reference_budget);
    return w;
}

}  // namespace cask
