#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/provider.hpp"
#include "cfmd/tokenizer.hpp"

namespace cfmd {

struct PerturbConfig {
    double mask_fraction = 0.15;
    std::size_t span_length = 2;
    std::size_t n_perturbations = 25;
    std::size_t max_retries = 3;
    std::uint64_t seed = 0;

    void validate() const {
        require(mask_fraction > 0.0 && mask_fraction <= 1.0, "mask_fraction must be in (0, 1]");
        require(span_length >= 1, "span_length must be >= 1");
        require(n_perturbations >= 2, "n_perturbations must be >= 2");
    }
};

struct PerturbationSet {
    std::string original;
    std::vector<std::string> variants;
    std::vector<bool> degenerate;  // variant equals the original after all retries
    std::string fill_provider_id;
    PerturbConfig config;

    std::size_t degenerate_count() const {
        return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), true));
    }
};

/// Flags every variant whose tokens equal the original's.
inline void mark_degenerate(PerturbationSet& set) {
    const auto original = tokenize(set.original);
    set.degenerate.assign(set.variants.size(), false);
    for (std::size_t i = 0; i < set.variants.size(); ++i) {
        set.degenerate[i] = tokenize(set.variants[i]) == original;
    }
}

/// Start offsets of k non-overlapping spans of length `span` in `width`
/// tokens, uniform over all such placements, ascending.
inline std::vector<std::size_t> choose_spans(std::size_t width, std::size_t span, std::size_t k,
                                             Rng& rng) {
    // Collapse each span to one slot: placements of k spans in `width` tokens
    // correspond one-to-one with k-subsets of width - k*(span-1) slots.
    const std::size_t slots = width - k * (span - 1);
    std::vector<std::size_t> pool(slots);
    for (std::size_t i = 0; i < slots; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + uniform_index(rng, slots - i)]);
    }
    std::vector<std::size_t> picked(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(picked.begin(), picked.end());
    for (std::size_t i = 0; i < k; ++i) picked[i] += i * (span - 1);
    return picked;
}

/// Number of masked spans for a text of `width` tokens.
inline std::size_t span_count(std::size_t width, const PerturbConfig& cfg) {
    const auto wanted = static_cast<std::size_t>(
        std::ceil(cfg.mask_fraction * static_cast<double>(width) / static_cast<double>(cfg.span_length) - 1e-12));
    return std::clamp<std::size_t>(wanted, 1, width / cfg.span_length);
}

/// Span-mask-and-fill variants of `text`. Each span of span_length tokens is
/// replaced by the same number of tokens drawn from `fill_model` given the
/// variant's left context.
inline PerturbationSet perturb(std::string_view text, const PerturbConfig& cfg,
                               const FillProvider& fill_model) {
    cfg.validate();
    const auto tokens = tokenize(text);
    if (tokens.size() < cfg.span_length) {
        throw ValidationError("text too short to perturb: " + std::to_string(tokens.size()) +
                              " tokens, span_length " + std::to_string(cfg.span_length));
    }
    const std::size_t k = span_count(tokens.size(), cfg);

    PerturbationSet set;
    set.original = std::string(text);
    set.fill_provider_id = fill_model.id();
    set.config = cfg;
    set.variants.reserve(cfg.n_perturbations);
    set.degenerate.reserve(cfg.n_perturbations);
    for (std::size_t v = 0; v < cfg.n_perturbations; ++v) {
        Rng rng(derive_seed(cfg.seed, text, v));
        std::vector<Token> variant;
        bool changed = false;
        for (std::size_t attempt = 0; attempt <= cfg.max_retries && !changed; ++attempt) {
            variant = tokens;
            for (std::size_t start : choose_spans(tokens.size(), cfg.span_length, k, rng)) {
                std::vector<Token> filled;
                try {
                    filled = fill_model.fill(std::span(variant).first(start), cfg.span_length, rng);
                } catch (const std::exception& e) {
                    throw RuntimeError("fill provider " + fill_model.id() + " failed on variant " +
                                       std::to_string(v) + ": " + e.what());
                }
                if (filled.size() != cfg.span_length) {
                    throw RuntimeError("fill provider " + fill_model.id() + " returned " +
                                       std::to_string(filled.size()) + " tokens for variant " +
                                       std::to_string(v));
                }
                std::copy(filled.begin(), filled.end(),
                          variant.begin() + static_cast<std::ptrdiff_t>(start));
            }
            changed = variant != tokens;
        }
        set.variants.push_back(detokenize(variant));
        set.degenerate.push_back(!changed);
    }
    return set;
}

/// Mean per-token log-probability of each variant under `scorer`, in variant order.
inline std::vector<double> perturbation_logprobs(const PerturbationSet& set,
                                                 const LikelihoodProvider& scorer) {
    std::vector<double> out;
    out.reserve(set.variants.size());
    for (const auto& v : set.variants) out.push_back(scorer.score(v).mean());
    return out;
}

/// Where DetectGPT gets its variants: local span filling or a remote bridge.
class PerturbationSource {
public:
    virtual ~PerturbationSource() = default;
    virtual PerturbationSet perturbations(std::string_view text, const PerturbConfig& cfg) const = 0;
};

class LocalPerturber final : public PerturbationSource {
public:
    explicit LocalPerturber(const FillProvider& fill) : fill_(&fill) {}

    PerturbationSet perturbations(std::string_view text, const PerturbConfig& cfg) const override {
        return perturb(text, cfg, *fill_);
    }

private:
    const FillProvider* fill_;
};

// -- persistence ---------------------------------------------------------------

inline nlohmann::json to_json(const PerturbationSet& set, std::string_view item_id) {
    return {{"item_id", item_id},
            {"original", set.original},
            {"variants", set.variants},
            {"degenerate", set.degenerate},
            {"fill_provider_id", set.fill_provider_id},
            {"config",
             {{"mask_fraction", set.config.mask_fraction},
              {"span_length", set.config.span_length},
              {"n_perturbations", set.config.n_perturbations},
              {"max_retries", set.config.max_retries},
              {"seed", set.config.seed}}}};
}

inline PerturbationSet perturbation_set_from_json(const nlohmann::json& j) {
    try {
        PerturbationSet set;
        set.original = j.at("original").get<std::string>();
        set.variants = j.at("variants").get<std::vector<std::string>>();
        set.degenerate = j.at("degenerate").get<std::vector<bool>>();
        set.fill_provider_id = j.at("fill_provider_id").get<std::string>();
        const auto& c = j.at("config");
        set.config.mask_fraction = c.at("mask_fraction").get<double>();
        set.config.span_length = c.at("span_length").get<std::size_t>();
        set.config.n_perturbations = c.at("n_perturbations").get<std::size_t>();
        set.config.max_retries = c.at("max_retries").get<std::size_t>();
        set.config.seed = c.at("seed").get<std::uint64_t>();
        require(set.degenerate.size() == set.variants.size(), "degenerate flags do not match variants");
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed perturbation record: ") + e.what());
    }
}

}  // namespace cfmd
