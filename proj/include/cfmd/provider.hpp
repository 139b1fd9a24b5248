#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfmd/common.hpp"
#include "cfmd/ngram_lm.hpp"
#include "cfmd/tokenizer.hpp"

namespace cfmd {

/// Anything that returns per-token log-probabilities for a text: the local
/// n-gram model or a remote LLM behind the bridge. Implementations must
/// tolerate concurrent const calls.
class LikelihoodProvider {
public:
    virtual ~LikelihoodProvider() = default;
    virtual const std::string& id() const = 0;
    virtual TokenScores score(std::string_view text) const = 0;
};

/// Draws replacement tokens for a masked span given its left context.
class FillProvider {
public:
    virtual ~FillProvider() = default;
    virtual const std::string& id() const = 0;
    virtual std::vector<Token> fill(std::span<const Token> left_context, std::size_t n,
                                    Rng& rng) const = 0;
};

/// Produces a continuation for a prompt.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual const std::string& id() const = 0;
    virtual std::string generate(std::string_view prompt, const DecodeConfig& cfg) const = 0;
};

/// Adapts a shared immutable NGramLM to all three roles.
class NGramProvider final : public LikelihoodProvider, public FillProvider, public TextGenerator {
public:
    NGramProvider(std::string id, std::shared_ptr<const NGramLM> model)
        : id_(std::move(id)), model_(std::move(model)) {
        require(!id_.empty(), "provider id must not be empty");
        require(model_ != nullptr, "provider " + id_ + " has no model");
    }

    NGramProvider(std::string id, NGramLM model)
        : NGramProvider(std::move(id), std::make_shared<const NGramLM>(std::move(model))) {}

    const std::string& id() const override { return id_; }
    const NGramLM& model() const { return *model_; }
    std::shared_ptr<const NGramLM> shared_model() const { return model_; }

    TokenScores score(std::string_view text) const override { return model_->logprobs(text, id_); }

    std::vector<Token> fill(std::span<const Token> left_context, std::size_t n,
                            Rng& rng) const override {
        return model_->fill(left_context, n, rng);
    }

    std::string generate(std::string_view prompt, const DecodeConfig& cfg) const override {
        return model_->generate(prompt, cfg);
    }

private:
    std::string id_;
    std::shared_ptr<const NGramLM> model_;
};

}  // namespace cfmd
