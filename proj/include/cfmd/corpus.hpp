#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/provider.hpp"
#include "cfmd/tokenizer.hpp"

namespace cfmd {

enum class Label { human, synthetic };

inline std::string_view to_string(Label l) { return l == Label::human ? "human" : "synthetic"; }

inline Label parse_label(std::string_view s) {
    if (s == "human") return Label::human;
    if (s == "synthetic") return Label::synthetic;
    throw ValidationError("unknown label '" + std::string(s) + "' (expected human|synthetic)");
}

struct Article {
    std::string id;
    std::string title;
    std::string text;
    Label label = Label::human;
    std::optional<std::string> generator;  // provider that produced a synthetic text
    std::string source_corpus;
    std::optional<std::string> base_id;  // pairs a synthetic item with its human original

    bool operator==(const Article&) const = default;
};

/// Thrown when an article cannot yield a prompt of the requested size.
class ShortArticleError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InsufficientPoolError : public ValidationError {
public:
    InsufficientPoolError(std::string pool, std::size_t shortfall, const std::string& context = {})
        : ValidationError("insufficient pool '" + pool + "': short by " +
                          std::to_string(shortfall) + " items" +
                          (context.empty() ? "" : " (" + context + ")")),
          pool_(std::move(pool)),
          shortfall_(shortfall) {}

    const std::string& pool() const noexcept { return pool_; }
    std::size_t shortfall() const noexcept { return shortfall_; }

private:
    std::string pool_;
    std::size_t shortfall_;
};

/// Ordered, immutable collection of articles with unique ids.
class LabeledDataset {
public:
    LabeledDataset() = default;

    explicit LabeledDataset(std::vector<Article> items) : items_(std::move(items)) {
        std::unordered_set<std::string_view> seen;
        for (const auto& a : items_) {
            require(!a.id.empty(), "article id must not be empty");
            require(!a.text.empty(), "article " + a.id + " has empty text");
            require(a.label == Label::human || a.generator.has_value(),
                    "synthetic article " + a.id + " has no generator");
            if (!seen.insert(a.id).second) throw ValidationError("duplicate article id " + a.id);
            ++provenance_[a.source_corpus];
        }
    }

    const std::vector<Article>& items() const noexcept { return items_; }
    const std::map<std::string, std::size_t>& provenance() const noexcept { return provenance_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const Article& operator[](std::size_t i) const { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    std::size_t count(Label l) const {
        return static_cast<std::size_t>(std::count_if(
            items_.begin(), items_.end(), [l](const Article& a) { return a.label == l; }));
    }

    bool balanced() const { return count(Label::human) == count(Label::synthetic); }

    std::map<std::string, Label> label_map() const {
        std::map<std::string, Label> out;
        for (const auto& a : items_) out.emplace(a.id, a.label);
        return out;
    }

private:
    std::vector<Article> items_;
    std::map<std::string, std::size_t> provenance_;
};

// -- JSONL ------------------------------------------------------------------

inline nlohmann::json to_json(const Article& a) {
    nlohmann::json j = {{"id", a.id},
                        {"title", a.title},
                        {"text", a.text},
                        {"label", to_string(a.label)},
                        {"source_corpus", a.source_corpus}};
    if (a.generator) j["generator"] = *a.generator;
    if (a.base_id) j["base_id"] = *a.base_id;
    return j;
}

inline Article article_from_json(const nlohmann::json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");
    auto field = [&](const char* name, bool required) -> std::optional<std::string> {
        auto it = j.find(name);
        if (it == j.end() || it->is_null()) {
            if (required) throw ParseError(line, std::string("missing required field '") + name + "'");
            return std::nullopt;
        }
        if (!it->is_string()) throw ParseError(line, std::string("field '") + name + "' must be a string");
        return it->get<std::string>();
    };
    Article a;
    a.id = *field("id", true);
    a.title = *field("title", true);
    a.text = *field("text", true);
    try {
        a.label = parse_label(*field("label", true));
    } catch (const ParseError&) {
        throw;
    } catch (const ValidationError& e) {
        throw ParseError(line, e.what());
    }
    a.source_corpus = *field("source_corpus", true);
    a.generator = field("generator", false);
    a.base_id = field("base_id", false);
    if (a.id.empty()) throw ParseError(line, "empty id");
    if (a.text.empty()) throw ParseError(line, "empty text");
    if (a.label == Label::synthetic && !a.generator) {
        throw ParseError(line, "synthetic row without 'generator'");
    }
    return a;
}

inline LabeledDataset read_jsonl(std::istream& in) {
    std::vector<Article> items;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
        }
        Article a = article_from_json(j, lineno);
        if (!ids.insert(a.id).second) throw ParseError(lineno, "duplicate id '" + a.id + "'");
        items.push_back(std::move(a));
    }
    return LabeledDataset(std::move(items));
}

inline LabeledDataset load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    return read_jsonl(in);
}

inline void write_jsonl(const LabeledDataset& ds, std::ostream& out) {
    for (const auto& a : ds) out << to_json(a).dump() << '\n';
}

inline void save_jsonl(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path);
    write_jsonl(ds, out);
}

// -- prompts and clipping -----------------------------------------------------

enum class PromptMode { prefix, title_template };

inline PromptMode parse_prompt_mode(std::string_view s) {
    if (s == "prefix") return PromptMode::prefix;
    if (s == "title_template") return PromptMode::title_template;
    throw ValidationError("unknown prompt mode '" + std::string(s) + "'");
}

inline std::string_view to_string(PromptMode m) {
    return m == PromptMode::prefix ? "prefix" : "title_template";
}

struct Prompt {
    PromptMode mode = PromptMode::prefix;
    std::string text;                // what the generator is conditioned on
    std::size_t token_budget = 30;
    std::string article_prefix;      // leading article tokens kept in the prompt
};

inline constexpr std::size_t kTemplateWordCap = 30;

inline std::string render_title_template(std::string_view title, std::string_view article) {
    std::string out = "Given the following article title, generate the article.\n### Title:\n";
    out.append(title);
    out.append("\n### Article:\n");
    out.append(article);
    return out;
}

inline Prompt make_prompt(const Article& article, PromptMode mode, std::size_t token_budget) {
    require(token_budget >= 1, "prompt token budget must be >= 1");
    const auto tokens = tokenize(article.text);
    Prompt p;
    p.mode = mode;
    p.token_budget = token_budget;
    if (mode == PromptMode::prefix) {
        if (tokens.size() < token_budget) {
            throw ShortArticleError("article " + article.id + " has " +
                                    std::to_string(tokens.size()) + " tokens, prompt needs " +
                                    std::to_string(token_budget));
        }
        p.article_prefix = detokenize(std::span(tokens).first(token_budget));
        p.text = p.article_prefix;
        return p;
    }
    require(!article.title.empty(), "title_template prompt needs a title (article " + article.id + ")");
    // Longest article prefix that keeps the rendered prompt within the word cap.
    std::size_t keep = std::min(token_budget, tokens.size());
    while (keep > 0) {
        auto prefix = detokenize(std::span(tokens).first(keep));
        auto rendered = render_title_template(article.title, prefix);
        if (word_count(rendered) <= kTemplateWordCap) {
            p.article_prefix = std::move(prefix);
            p.text = std::move(rendered);
            return p;
        }
        --keep;
    }
    throw ShortArticleError("title_template prompt for article " + article.id + " exceeds " +
                            std::to_string(kTemplateWordCap) + " words");
}

/// First max_tokens tokens of `text`; texts already within the limit come back unchanged.
inline std::string clip(std::string_view text, std::size_t max_tokens = 150) {
    require(max_tokens >= 1, "clip length must be >= 1");
    const auto tokens = tokenize(text);
    if (tokens.size() <= max_tokens) return std::string(text);
    return detokenize(std::span(tokens).first(max_tokens));
}

// -- dataset builders ----------------------------------------------------------

struct PromptConfig {
    PromptMode mode = PromptMode::prefix;
    std::size_t token_budget = 30;
    std::size_t clip_tokens = 150;
};

inline std::string synthetic_id(const Article& human, std::string_view generator_id) {
    return human.id + "::" + std::string(generator_id);
}

/// n clipped human originals interleaved with n synthetic continuations of
/// their prompts. Articles too short for the prompt are skipped and the next
/// one in `human` order replaces them.
inline LabeledDataset build_detection_set(const LabeledDataset& human, const TextGenerator& generator,
                                          const PromptConfig& prompt_cfg,
                                          const DecodeConfig& decode_cfg, std::size_t n) {
    require(n >= 1, "detection set size must be >= 1");
    decode_cfg.validate();
    if (human.size() < n) throw InsufficientPoolError("human", n - human.size());
    std::vector<Article> out;
    out.reserve(2 * n);
    std::size_t made = 0;
    for (const auto& src : human) {
        if (made == n) break;
        require(src.label == Label::human, "detection pool item " + src.id + " is not human");
        Prompt prompt;
        try {
            prompt = make_prompt(src, prompt_cfg.mode, prompt_cfg.token_budget);
        } catch (const ShortArticleError& e) {
            spdlog::debug("skipping {}: {}", src.id, e.what());
            continue;
        }
        DecodeConfig cfg = decode_cfg;
        cfg.seed = derive_seed(decode_cfg.seed, src.id);
        const std::string continuation = generator.generate(prompt.text, cfg);

        auto joined = tokenize(prompt.article_prefix);
        const auto cont_tokens = tokenize(continuation);
        joined.insert(joined.end(), cont_tokens.begin(), cont_tokens.end());

        Article h = src;
        h.text = clip(src.text, prompt_cfg.clip_tokens);
        h.base_id = src.id;
        h.generator.reset();

        Article s;
        s.id = synthetic_id(src, generator.id());
        s.title = src.title;
        s.text = clip(detokenize(joined), prompt_cfg.clip_tokens);
        s.label = Label::synthetic;
        s.generator = generator.id();
        s.source_corpus = src.source_corpus;
        s.base_id = src.id;

        out.push_back(std::move(h));
        out.push_back(std::move(s));
        ++made;
    }
    if (made < n) {
        throw InsufficientPoolError("human", n - made, "after skipping articles shorter than the prompt");
    }
    return LabeledDataset(std::move(out));
}

enum class MixMode { in_domain, mixed_source };

inline MixMode parse_mix_mode(std::string_view s) {
    if (s == "in_domain") return MixMode::in_domain;
    if (s == "mixed_source") return MixMode::mixed_source;
    throw ValidationError("unknown mode '" + std::string(s) + "' (expected in_domain|mixed_source)");
}

inline std::string_view to_string(MixMode m) {
    return m == MixMode::in_domain ? "in_domain" : "mixed_source";
}

namespace detail {

inline std::vector<Article> draw(const LabeledDataset& pool, std::string_view name,
                                 Label expected, std::size_t n, std::uint64_t seed) {
    if (pool.size() < n) throw InsufficientPoolError(std::string(name), n - pool.size());
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, std::string("supervised/") + std::string(name)));
    shuffle(order, rng);
    std::vector<Article> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Article& a = pool[order[i]];
        require(a.label == expected, std::string(name) + " pool item " + a.id + " has label " +
                                         std::string(to_string(a.label)));
        out.push_back(a);
    }
    return out;
}

}  // namespace detail

/// Balanced supervised training set. in_domain: half synthetic, half source A.
/// mixed_source: half synthetic, a quarter each from sources A and B.
inline LabeledDataset build_supervised_set(const LabeledDataset& synthetic,
                                           const LabeledDataset& source_a,
                                           const LabeledDataset* source_b, MixMode mode,
                                           std::size_t size, std::uint64_t seed) {
    require(size > 0 && size % 2 == 0, "supervised set size must be a positive even number");
    if (mode == MixMode::mixed_source) {
        require(source_b != nullptr, "mixed_source mode needs a second human source");
        require(size % 4 == 0, "mixed_source size must be divisible by 4, got " + std::to_string(size));
    }
    std::vector<Article> items = detail::draw(synthetic, "synthetic", Label::synthetic, size / 2, seed);
    const std::size_t from_a = mode == MixMode::in_domain ? size / 2 : size / 4;
    auto a = detail::draw(source_a, "source_a", Label::human, from_a, seed);
    items.insert(items.end(), a.begin(), a.end());
    if (mode == MixMode::mixed_source) {
        auto b = detail::draw(*source_b, "source_b", Label::human, size / 4, seed);
        items.insert(items.end(), b.begin(), b.end());
    }
    Rng rng(derive_seed(seed, "supervised/order"));
    shuffle(items, rng);
    return LabeledDataset(std::move(items));
}

}  // namespace cfmd
