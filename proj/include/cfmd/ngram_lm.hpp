#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/tokenizer.hpp"

namespace cfmd {

/// Per-token log-probabilities (nats) of one text under one provider.
/// logprobs[i] conditions on BOS + tokens[0..i).
struct TokenScores {
    std::vector<Token> tokens;
    std::vector<double> logprobs;
    std::string provider_id;

    std::size_t size() const noexcept { return logprobs.size(); }

    double sum() const noexcept { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }

    double mean() const {
        require(!logprobs.empty(), "mean log-probability of an empty token list");
        return sum() / static_cast<double>(logprobs.size());
    }
};

/// Nucleus-sampling decode parameters.
struct DecodeConfig {
    double temperature = 1.0;
    double top_p = 1.0;
    std::size_t max_tokens = 120;
    std::uint64_t seed = 0;

    void validate() const {
        require(std::isfinite(temperature) && temperature > 0.0, "temperature must be > 0");
        require(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
        require(max_tokens >= 1, "max_tokens must be >= 1");
    }
};

struct TrainingMeta {
    std::string corpus_id;
    std::size_t sample_count = 0;
    std::uint64_t seed = 0;
    std::string tokenizer = "word-punct";
};

struct TrainOptions {
    int order = 4;
    /// Interpolation weights, lowest order first.
    std::vector<double> lambdas = {0.1, 0.2, 0.3, 0.4};
    std::uint64_t seed = 0;
    std::string corpus_id;
};

/// Jelinek-Mercer interpolated n-gram model with an add-1 unigram floor.
///
/// p(w | h) = sum_k W_k * ml_k(w | h_k), where ml_1 is the add-1 unigram over
/// the predictable vocabulary (word types, UNK, and EOS when it was seen) and
/// ml_k for k >= 2 is the maximum-likelihood estimate given the last k-1
/// symbols. When a context was never seen at order k its weight is handed down
/// to the highest order whose context was seen, so every conditional is a
/// proper distribution.
///
/// Immutable once built; all const members are safe to call concurrently.
class NGramLM {
public:
    using WordId = std::uint32_t;

    static constexpr WordId kUnk = 0;
    static constexpr WordId kBos = 1;
    static constexpr WordId kEos = 2;
    static constexpr int kFormatVersion = 1;

    /// One training sequence per article; EOS is appended to each.
    static NGramLM train(const std::vector<std::vector<Token>>& sequences,
                         const TrainOptions& opts) {
        require(!sequences.empty(), "cannot train a language model on an empty corpus");
        std::size_t n_tokens = 0;
        for (const auto& s : sequences) n_tokens += s.size();
        require(n_tokens > 0, "cannot train a language model on an empty corpus");
        NGramLM lm = empty(opts);
        lm.meta_.sample_count = sequences.size();
        lm.build(sequences, /*append_eos=*/true);
        return lm;
    }

    /// A single running token stream with no sentence boundaries.
    static NGramLM train_stream(std::span<const Token> stream, const TrainOptions& opts) {
        require(!stream.empty(), "cannot train a language model on an empty corpus");
        NGramLM lm = empty(opts);
        lm.meta_.sample_count = 1;
        std::vector<std::vector<Token>> one{std::vector<Token>(stream.begin(), stream.end())};
        lm.build(one, /*append_eos=*/false);
        return lm;
    }

    /// Model that has seen no data: every token maps to UNK with probability 1.
    static NGramLM untrained(const TrainOptions& opts) {
        NGramLM lm = empty(opts);
        lm.meta_.corpus_id = opts.corpus_id.empty() ? "untrained" : opts.corpus_id;
        lm.finalize();
        return lm;
    }

    int order() const noexcept { return order_; }
    const std::vector<double>& lambdas() const noexcept { return lambdas_; }
    const TrainingMeta& training_meta() const noexcept { return meta_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    std::uint64_t total_count() const noexcept { return total_; }
    bool has_eos() const noexcept { return unigram_[kEos] > 0; }

    const Token& surface(WordId id) const { return vocab_.at(id); }

    WordId id_of(std::string_view tok) const {
        auto it = index_.find(std::string(tok));
        return it == index_.end() ? kUnk : it->second;
    }

    /// True for ids that can be predicted (everything except BOS, plus EOS
    /// only when the training data contained sentence ends).
    bool in_support(WordId id) const noexcept {
        if (id == kBos) return false;
        if (id == kEos) return has_eos();
        return id < vocab_.size();
    }

    /// Number of predictable symbols (the add-1 denominator term).
    std::size_t support_size() const noexcept { return vocab_.size() - 2 + (has_eos() ? 1 : 0); }

    /// Add-1 unigram probability.
    double unigram_prob(WordId id) const noexcept {
        if (!in_support(id)) return 0.0;
        return (static_cast<double>(unigram_[id]) + 1.0) /
               static_cast<double>(total_ + support_size());
    }

    /// History for the next prediction: the last order-1 ids, BOS-padded.
    std::vector<WordId> initial_context() const {
        return std::vector<WordId>(static_cast<std::size_t>(order_ - 1), kBos);
    }

    void advance(std::vector<WordId>& context, WordId next) const {
        if (context.empty()) return;
        std::rotate(context.begin(), context.begin() + 1, context.end());
        context.back() = next;
    }

    /// p(w | context). `context` holds exactly order-1 ids, most recent last.
    double prob(WordId w, std::span<const WordId> context) const {
        const auto levels = active_levels(context);
        double p = levels.unigram_weight * unigram_prob(w);
        for (const auto& lv : levels.higher) {
            p += lv.weight * static_cast<double>(lv.node->count(w)) /
                 static_cast<double>(lv.node->total);
        }
        return p;
    }

    /// Full conditional distribution indexed by id (BOS and unseen EOS are 0).
    std::vector<double> distribution(std::span<const WordId> context) const {
        const auto levels = active_levels(context);
        std::vector<double> out(vocab_.size());
        for (WordId id = 0; id < out.size(); ++id) {
            out[id] = levels.unigram_weight * unigram_prob(id);
        }
        for (const auto& lv : levels.higher) {
            const double scale = lv.weight / static_cast<double>(lv.node->total);
            for (const auto& [id, c] : lv.node->next) out[id] += scale * static_cast<double>(c);
        }
        return out;
    }

    std::vector<WordId> encode(std::span<const Token> tokens) const {
        std::vector<WordId> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id_of(t));
        return ids;
    }

    /// Per-token log-probabilities of `text`; out-of-vocabulary tokens score as UNK.
    TokenScores logprobs(std::string_view text, std::string provider_id = {}) const {
        auto tokens = tokenize(text);
        require(!tokens.empty(), "cannot score empty text");
        return logprobs(std::move(tokens), std::move(provider_id));
    }

    TokenScores logprobs(std::vector<Token> tokens, std::string provider_id = {}) const {
        require(!tokens.empty(), "cannot score empty text");
        TokenScores out;
        out.provider_id = std::move(provider_id);
        out.logprobs.reserve(tokens.size());
        auto ctx = initial_context();
        for (const auto& tok : tokens) {
            const WordId id = id_of(tok);
            out.logprobs.push_back(std::min(0.0, std::log(prob(id, ctx))));
            advance(ctx, id);
        }
        out.tokens = std::move(tokens);
        return out;
    }

    /// Nucleus members (id, renormalized probability) for one decoding step,
    /// most probable first; ties broken by token surface. UNK is never a
    /// candidate.
    std::vector<std::pair<WordId, double>> nucleus(std::span<const WordId> context,
                                                   double temperature, double top_p) const;

    /// Samples a continuation of `prompt_tokens`. Stops at EOS or max_tokens.
    std::vector<Token> generate_tokens(std::span<const Token> prompt_tokens,
                                       const DecodeConfig& cfg) const {
        cfg.validate();
        require(support_size() > 1, "cannot generate from a model without vocabulary");
        Rng rng(derive_seed(cfg.seed, "generate"));
        auto ctx = initial_context();
        for (const auto& tok : prompt_tokens) advance(ctx, id_of(tok));

        const double inv_temp = 1.0 / cfg.temperature;
        const double base_total = tempered_unigram_total(inv_temp);
        std::vector<Token> out;
        for (std::size_t step = 0; step < cfg.max_tokens; ++step) {
            WordId next;
            if (cfg.top_p >= 1.0 && cfg.temperature == 1.0) {
                next = sample_plain(ctx, rng, /*allow_eos=*/true);
            } else {
                auto members = nucleus_impl(ctx, inv_temp, cfg.top_p, base_total);
                double mass = 0.0;
                for (const auto& m : members) mass += m.second;
                double target = uniform01(rng) * mass;
                next = members.back().first;
                for (const auto& [id, q] : members) {
                    target -= q;
                    if (target < 0.0) {
                        next = id;
                        break;
                    }
                }
            }
            if (next == kEos) break;
            out.push_back(vocab_[next]);
            advance(ctx, next);
        }
        return out;
    }

    std::string generate(std::string_view prompt, const DecodeConfig& cfg) const {
        const auto prompt_tokens = tokenize(prompt);
        return detokenize(generate_tokens(prompt_tokens, cfg));
    }

    /// Draws `n` word tokens (never UNK, BOS or EOS) following `left_context`,
    /// each conditioned on everything drawn before it.
    std::vector<Token> fill(std::span<const Token> left_context, std::size_t n, Rng& rng) const {
        require(support_size() > (has_eos() ? 2u : 1u),
                "fill model has no word vocabulary");
        auto ctx = initial_context();
        for (const auto& tok : left_context) advance(ctx, id_of(tok));
        std::vector<Token> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const WordId id = sample_plain(ctx, rng, /*allow_eos=*/false);
            out.push_back(vocab_[id]);
            advance(ctx, id);
        }
        return out;
    }

    // -- serialization ------------------------------------------------------

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "cfmd.ngram";
        j["version"] = kFormatVersion;
        j["order"] = order_;
        j["lambdas"] = lambdas_;
        j["training_meta"] = {{"corpus_id", meta_.corpus_id},
                              {"sample_count", meta_.sample_count},
                              {"seed", meta_.seed},
                              {"tokenizer", meta_.tokenizer}};
        j["vocab"] = vocab_;
        j["unigram"] = unigram_;
        nlohmann::json tables = nlohmann::json::array();
        for (int k = 2; k <= order_; ++k) {
            const auto& table = tables_[static_cast<std::size_t>(k - 2)];
            std::vector<const std::pair<const std::u32string, Node>*> entries;
            entries.reserve(table.size());
            for (const auto& e : table) entries.push_back(&e);
            std::sort(entries.begin(), entries.end(),
                      [](auto* a, auto* b) { return a->first < b->first; });
            nlohmann::json rows = nlohmann::json::array();
            for (const auto* e : entries) {
                std::vector<WordId> ctx(e->first.begin(), e->first.end());
                std::vector<std::uint64_t> flat;
                flat.reserve(e->second.next.size() * 2);
                for (const auto& [id, c] : e->second.next) {
                    flat.push_back(id);
                    flat.push_back(c);
                }
                rows.push_back(nlohmann::json::array({ctx, flat}));
            }
            tables.push_back({{"order", k}, {"contexts", std::move(rows)}});
        }
        j["tables"] = std::move(tables);
        return j;
    }

    static NGramLM from_json(const nlohmann::json& j) {
        try {
            require(j.at("format") == "cfmd.ngram", "not an n-gram model file");
            require(j.at("version").get<int>() == kFormatVersion,
                    "unsupported model version " + j.at("version").dump());
            TrainOptions opts;
            opts.order = j.at("order").get<int>();
            opts.lambdas = j.at("lambdas").get<std::vector<double>>();
            NGramLM lm = empty(opts);
            const auto& meta = j.at("training_meta");
            lm.meta_.corpus_id = meta.at("corpus_id").get<std::string>();
            lm.meta_.sample_count = meta.at("sample_count").get<std::size_t>();
            lm.meta_.seed = meta.at("seed").get<std::uint64_t>();
            lm.meta_.tokenizer = meta.at("tokenizer").get<std::string>();
            lm.vocab_ = j.at("vocab").get<std::vector<Token>>();
            lm.unigram_ = j.at("unigram").get<std::vector<std::uint64_t>>();
            require(lm.vocab_.size() >= 3 && lm.unigram_.size() == lm.vocab_.size(),
                    "model vocabulary and unigram table disagree");
            lm.total_ = std::accumulate(lm.unigram_.begin(), lm.unigram_.end(), std::uint64_t{0});
            lm.index_.clear();
            for (WordId id = 0; id < lm.vocab_.size(); ++id) lm.index_.emplace(lm.vocab_[id], id);
            for (const auto& t : j.at("tables")) {
                const int k = t.at("order").get<int>();
                require(k >= 2 && k <= lm.order_, "table order out of range");
                auto& table = lm.tables_[static_cast<std::size_t>(k - 2)];
                for (const auto& row : t.at("contexts")) {
                    const auto ctx = row.at(0).get<std::vector<WordId>>();
                    const auto flat = row.at(1).get<std::vector<std::uint64_t>>();
                    require(ctx.size() == static_cast<std::size_t>(k - 1) && flat.size() % 2 == 0,
                            "malformed context row");
                    Node node;
                    for (std::size_t i = 0; i < flat.size(); i += 2) {
                        node.next.emplace_back(static_cast<WordId>(flat[i]),
                                               static_cast<std::uint32_t>(flat[i + 1]));
                        node.total += flat[i + 1];
                    }
                    table.emplace(std::u32string(ctx.begin(), ctx.end()), std::move(node));
                }
            }
            lm.finalize();
            return lm;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("malformed model file: ") + e.what());
        }
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw RuntimeError("cannot write model file " + path);
        out << to_json().dump() << '\n';
    }

    static NGramLM load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ValidationError("cannot open model file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed model file " + path + ": " + e.what());
        }
        return from_json(j);
    }

private:
    struct Node {
        std::uint64_t total = 0;
        std::vector<std::pair<WordId, std::uint32_t>> next;  // sorted by id

        std::uint32_t count(WordId w) const {
            auto it = std::lower_bound(next.begin(), next.end(), w,
                                       [](const auto& e, WordId id) { return e.first < id; });
            return (it != next.end() && it->first == w) ? it->second : 0;
        }
    };

    struct Level {
        int order;
        double weight;
        const Node* node;
    };

    struct ActiveLevels {
        double unigram_weight = 0.0;
        std::vector<Level> higher;  // highest order first
    };

    static NGramLM empty(const TrainOptions& opts) {
        require(opts.order >= 1, "order must be >= 1");
        require(opts.lambdas.size() == static_cast<std::size_t>(opts.order),
                "expected " + std::to_string(opts.order) + " interpolation weights, got " +
                    std::to_string(opts.lambdas.size()));
        double sum = 0.0;
        for (double l : opts.lambdas) {
            require(std::isfinite(l) && l >= 0.0, "interpolation weights must be >= 0");
            sum += l;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "interpolation weights must sum to 1");
        NGramLM lm;
        lm.order_ = opts.order;
        lm.lambdas_ = opts.lambdas;
        lm.meta_.corpus_id = opts.corpus_id;
        lm.meta_.seed = opts.seed;
        lm.vocab_ = {"<unk>", "<s>", "</s>"};
        lm.unigram_.assign(3, 0);
        for (WordId id = 0; id < 3; ++id) lm.index_.emplace(lm.vocab_[id], id);
        lm.tables_.resize(static_cast<std::size_t>(std::max(0, opts.order - 1)));
        return lm;
    }

    void build(const std::vector<std::vector<Token>>& sequences, bool append_eos) {
        std::vector<Token> types;
        for (const auto& s : sequences) types.insert(types.end(), s.begin(), s.end());
        std::sort(types.begin(), types.end());
        types.erase(std::unique(types.begin(), types.end()), types.end());
        for (auto& t : types) {
            index_.emplace(t, static_cast<WordId>(vocab_.size()));
            vocab_.push_back(std::move(t));
        }
        unigram_.assign(vocab_.size(), 0);

        std::vector<std::unordered_map<std::u32string, std::map<WordId, std::uint32_t>>> raw(
            tables_.size());
        for (const auto& seq : sequences) {
            std::vector<WordId> padded(static_cast<std::size_t>(order_ - 1), kBos);
            for (const auto& t : seq) padded.push_back(index_.at(t));
            if (append_eos) padded.push_back(kEos);
            for (std::size_t pos = static_cast<std::size_t>(order_ - 1); pos < padded.size(); ++pos) {
                const WordId w = padded[pos];
                ++unigram_[w];
                ++total_;
                for (int k = 2; k <= order_; ++k) {
                    std::u32string key(padded.begin() + static_cast<std::ptrdiff_t>(pos) - (k - 1),
                                       padded.begin() + static_cast<std::ptrdiff_t>(pos));
                    ++raw[static_cast<std::size_t>(k - 2)][key][w];
                }
            }
        }
        for (std::size_t level = 0; level < raw.size(); ++level) {
            auto& table = tables_[level];
            table.reserve(raw[level].size());
            for (auto& [key, followers] : raw[level]) {
                Node node;
                node.next.reserve(followers.size());
                for (const auto& [id, c] : followers) {
                    node.next.emplace_back(id, c);
                    node.total += c;
                }
                table.emplace(key, std::move(node));
            }
        }
        finalize();
    }

    void finalize() {
        // Unigram candidates in nucleus order: probability desc, surface asc.
        unigram_rank_.clear();
        for (WordId id = 0; id < vocab_.size(); ++id) {
            if (id != kUnk && in_support(id)) unigram_rank_.push_back(id);
        }
        std::sort(unigram_rank_.begin(), unigram_rank_.end(), [this](WordId a, WordId b) {
            if (unigram_[a] != unigram_[b]) return unigram_[a] > unigram_[b];
            return vocab_[a] < vocab_[b];
        });
        unigram_cdf_.assign(vocab_.size(), 0);
        std::uint64_t acc = 0;
        for (WordId id = 0; id < vocab_.size(); ++id) {
            if (in_support(id)) acc += unigram_[id] + 1;
            unigram_cdf_[id] = acc;
        }
    }

    const Node* find(int k, std::span<const WordId> context) const {
        const auto& table = tables_[static_cast<std::size_t>(k - 2)];
        const std::u32string key(context.end() - (k - 1), context.end());
        auto it = table.find(key);
        return it == table.end() ? nullptr : &it->second;
    }

    ActiveLevels active_levels(std::span<const WordId> context) const {
        ActiveLevels out;
        double carry = 0.0;
        for (int k = order_; k >= 2; --k) {
            const Node* node = find(k, context);
            if (node == nullptr || node->total == 0) {
                carry += lambdas_[static_cast<std::size_t>(k - 1)];
                continue;
            }
            out.higher.push_back({k, lambdas_[static_cast<std::size_t>(k - 1)] + carry, node});
            carry = 0.0;
        }
        out.unigram_weight = lambdas_[0] + carry;
        return out;
    }

    double tempered_unigram_total(double inv_temp) const {
        double total = 0.0;
        for (WordId id : unigram_rank_) {
            total += inv_temp == 1.0 ? unigram_prob(id) : std::pow(unigram_prob(id), inv_temp);
        }
        return total;
    }

    /// Exact draw from p(. | context) with UNK (and optionally EOS) rejected.
    WordId sample_plain(std::span<const WordId> context, Rng& rng, bool allow_eos) const {
        const auto levels = active_levels(context);
        const std::uint64_t unigram_mass = total_ + support_size();
        auto acceptable = [&](WordId id) {
            return id != kUnk && id != kBos && (allow_eos || id != kEos);
        };
        for (int attempt = 0; attempt < 256; ++attempt) {
            double u = uniform01(rng);
            const Node* pick = nullptr;
            for (const auto& lv : levels.higher) {
                if (u < lv.weight) {
                    pick = lv.node;
                    break;
                }
                u -= lv.weight;
            }
            WordId id;
            if (pick != nullptr) {
                std::uint64_t r = uniform_index(rng, pick->total);
                id = pick->next.back().first;
                for (const auto& [w, c] : pick->next) {
                    if (r < c) {
                        id = w;
                        break;
                    }
                    r -= c;
                }
            } else {
                const std::uint64_t r = uniform_index(rng, unigram_mass);
                id = static_cast<WordId>(
                    std::upper_bound(unigram_cdf_.begin(), unigram_cdf_.end(), r) -
                    unigram_cdf_.begin());
            }
            if (acceptable(id)) return id;
        }
        // Pathological model where rejected symbols dominate: fall back to the
        // most probable acceptable symbol.
        for (WordId id : unigram_rank_) {
            if (acceptable(id)) return id;
        }
        throw RuntimeError("model has no sampleable vocabulary");
    }

    std::vector<std::pair<WordId, double>> nucleus_impl(std::span<const WordId> context,
                                                        double inv_temp, double top_p,
                                                        double base_total) const;

    int order_ = 1;
    std::vector<double> lambdas_;
    TrainingMeta meta_;
    std::vector<Token> vocab_;
    std::unordered_map<Token, WordId> index_;
    std::vector<std::uint64_t> unigram_;
    std::uint64_t total_ = 0;
    std::vector<std::unordered_map<std::u32string, Node>> tables_;  // orders 2..N
    std::vector<WordId> unigram_rank_;
    std::vector<std::uint64_t> unigram_cdf_;
};

inline std::vector<std::pair<NGramLM::WordId, double>> NGramLM::nucleus(
    std::span<const WordId> context, double temperature, double top_p) const {
    require(temperature > 0.0, "temperature must be > 0");
    require(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
    const double inv_temp = 1.0 / temperature;
    auto members = nucleus_impl(context, inv_temp, top_p, tempered_unigram_total(inv_temp));
    double mass = 0.0;
    for (const auto& m : members) mass += m.second;
    for (auto& m : members) m.second /= mass;
    return members;
}

// Candidates split into the sparse set S (followers of the seen contexts) and
// the rest, whose probabilities are the scaled unigram and therefore already
// ranked by unigram_rank_. Merging the two streams yields the global ranking;
// S is kept as a heap so only the members actually taken get ordered.
inline std::vector<std::pair<NGramLM::WordId, double>> NGramLM::nucleus_impl(
    std::span<const WordId> context, double inv_temp, double top_p, double base_total) const {
    const auto levels = active_levels(context);
    const double w1 = levels.unigram_weight;
    auto temper = [inv_temp](double p) { return inv_temp == 1.0 ? p : std::pow(p, inv_temp); };

    thread_local std::vector<double> extra;
    thread_local std::vector<char> member;
    if (extra.size() < vocab_.size()) {
        extra.resize(vocab_.size(), 0.0);
        member.resize(vocab_.size(), 0);
    }
    std::vector<std::pair<WordId, double>> sparse;  // (id, full probability)
    for (const auto& lv : levels.higher) {
        const double scale = lv.weight / static_cast<double>(lv.node->total);
        for (const auto& [id, c] : lv.node->next) {
            if (id == kUnk) continue;
            if (!member[id]) {
                member[id] = 1;
                sparse.emplace_back(id, 0.0);
            }
            extra[id] += scale * static_cast<double>(c);
        }
    }
    double z = temper(w1) * base_total;
    for (auto& [id, p] : sparse) {
        const double base = w1 * unigram_prob(id);
        p = base + extra[id];
        z += temper(p) - temper(base);
    }

    auto before = [this](const std::pair<WordId, double>& a, const std::pair<WordId, double>& b) {
        if (a.second != b.second) return a.second > b.second;
        return vocab_[a.first] < vocab_[b.first];
    };
    auto heap_cmp = [&](const auto& a, const auto& b) { return before(b, a); };
    std::make_heap(sparse.begin(), sparse.end(), heap_cmp);
    auto heap_end = sparse.end();

    std::vector<std::pair<WordId, double>> members;
    const double need = top_p * z;
    const bool take_all = top_p >= 1.0;
    double cum = 0.0;
    std::size_t bi = 0;
    while (heap_end != sparse.begin() || bi < unigram_rank_.size()) {
        while (bi < unigram_rank_.size() && member[unigram_rank_[bi]]) ++bi;
        std::pair<WordId, double> next;
        const bool have_sparse = heap_end != sparse.begin();
        if (bi >= unigram_rank_.size()) {
            if (!have_sparse) break;
            std::pop_heap(sparse.begin(), heap_end, heap_cmp);
            next = *--heap_end;
        } else {
            const std::pair<WordId, double> base{unigram_rank_[bi], w1 * unigram_prob(unigram_rank_[bi])};
            if (have_sparse && before(sparse.front(), base)) {
                std::pop_heap(sparse.begin(), heap_end, heap_cmp);
                next = *--heap_end;
            } else {
                next = base;
                ++bi;
            }
        }
        if (next.second <= 0.0) break;
        const double q = temper(next.second);
        members.emplace_back(next.first, q);
        cum += q;
        if (!take_all && cum >= need) break;
    }
    for (const auto& [id, p] : sparse) {
        member[id] = 0;
        extra[id] = 0.0;
    }
    return members;
}

}  // namespace cfmd
