#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/tokenizer.hpp"

namespace cfmd {

/// Seeded procedural generator of Italian-flavoured news articles.
///
/// Articles follow a topic: its content words, a recurring main actor and a
/// place are fixed per article, so human-side texts carry long-range
/// regularities that a short-context n-gram model cannot reproduce. Word
/// choice inside each slot class is Zipfian. Two profiles mimic a general
/// news source ("A") and a crime-news source ("B") sharing one language.
struct NewsCorpusConfig {
    std::size_t n_articles = 1250;
    std::uint64_t seed = 0;
    std::string source = "A";  // "A": general news mix, "B": crime-heavy mix
    std::size_t min_sentences = 6;
    std::size_t max_sentences = 10;
    std::string id_prefix;  // defaults to the source name
};

namespace detail {

class NewsLexicon {
public:
    static constexpr std::size_t kTopics = 8;

    struct Topic {
        std::vector<std::string> nouns, verbs_3s, verbs_pp, adjectives;
    };

    explicit NewsLexicon(std::uint64_t seed = 0x5eed1e1c0ULL) {
        Rng rng(seed);
        for (auto& t : topics_) {
            t.nouns = words(rng, 160, {"o", "a", "e", "i", "ione", "ento"});
            t.verbs_3s = words(rng, 50, {"a", "e", "isce"});
            t.verbs_pp = words(rng, 50, {"ato", "uto", "ito"});
            t.adjectives = words(rng, 60, {"ale", "ico", "oso", "ante", "ivo"});
        }
        for (std::size_t i = 0; i < 300; ++i) {
            people_.push_back(capitalize(stem(rng, 2)) + (i % 2 ? "o" : "a") + " " + capitalize(stem(rng, 3)) + "i");
        }
        places_ = words(rng, 90, {"a", "o", "e"});
        for (auto& p : places_) p = capitalize(p);
    }

    const Topic& topic(std::size_t t) const { return topics_[t]; }
    const std::vector<std::string>& people() const { return people_; }
    const std::vector<std::string>& places() const { return places_; }

private:
    static std::string capitalize(std::string s) {
        if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
        return s;
    }

    static std::string stem(Rng& rng, std::size_t syllables) {
        static constexpr std::array<std::string_view, 30> onsets = {
            "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch",
            "gh", "gl", "gn", "pr", "tr", "br", "st", "sp", "sc", "cr", "fr", "gr", "pl", "qu", ""};
        static constexpr std::array<std::string_view, 5> vowels = {"a", "e", "i", "o", "u"};
        static constexpr std::array<std::string_view, 8> codas = {"", "", "", "", "n", "r", "l", "s"};
        std::string s;
        for (std::size_t i = 0; i < syllables; ++i) {
            s += onsets[uniform_index(rng, onsets.size())];
            s += vowels[uniform_index(rng, vowels.size())];
            if (i + 1 < syllables) s += codas[uniform_index(rng, codas.size())];
        }
        return s;
    }

    static std::vector<std::string> words(Rng& rng, std::size_t n, std::initializer_list<std::string_view> endings) {
        std::vector<std::string> out;
        std::vector<std::string_view> ends(endings);
        while (out.size() < n) {
            std::string w = stem(rng, 2 + uniform_index(rng, 2));
            w += ends[uniform_index(rng, ends.size())];
            if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(std::move(w));
        }
        return out;
    }

    std::array<Topic, kTopics> topics_;
    std::vector<std::string> people_;
    std::vector<std::string> places_;
};

inline const NewsLexicon& news_lexicon() {
    static const NewsLexicon lex;
    return lex;
}

/// Zipf(1.1) rank sampler over n items.
class ZipfSampler {
public:
    explicit ZipfSampler(std::size_t n, double exponent = 1.1) : cdf_(n) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
            cdf_[r] = acc;
        }
    }

    std::size_t operator()(Rng& rng) const {
        const double u = uniform01(rng) * cdf_.back();
        return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    }

private:
    std::vector<double> cdf_;
};

class ArticleWriter {
public:
    ArticleWriter(const NewsLexicon& lex, std::size_t topic, Rng& rng)
        : lex_(lex), topic_(lex.topic(topic)), rng_(rng),
          noun_z_(topic_.nouns.size()), verb_z_(topic_.verbs_3s.size()),
          adj_z_(topic_.adjectives.size()), person_z_(lex.people().size()), place_z_(lex.places().size()) {
        actor_ = person();
        place_ = lex_.places()[place_z_(rng_)];
    }

    std::string title() {
        std::vector<std::string> t = {cap(noun()), adjective(), "a", place_, ":", actor_, verb(), det(), noun()};
        return detokenize(t);
    }

    std::string sentence() {
        std::vector<std::string> s;
        auto add = [&](std::initializer_list<std::string> parts) { s.insert(s.end(), parts); };
        switch (uniform_index(rng_, 9)) {
            case 0: add({actor(), "ha", participle(), det(), noun(), adjective(), prep(), where(), "."}); break;
            case 1: add({"Secondo", actor(), ",", det(), noun(), verb(), adverb(), prep(), det(), noun(), "."}); break;
            case 2: add({"«", cap(det()), noun(), verb(), det(), noun(), adjective(), "»", ",", "ha", say(), actor(), "."}); break;
            case 3: add({cap(prep()), where(), ",", det(), noun(), adjective(), verb(), number(), unit(), "."}); break;
            case 4: add({"Il", noun(), "di", where(), "ha", participle(), det(), noun(), ",", "e", det(), noun(), verb(), adverb(), "."}); break;
            case 5: add({actor(), "e", person(), "hanno", participle(), det(), noun(), adjective(), "."}); break;
            case 6: add({"Non", "è", adjective(), "che", det(), noun(), verb(), prep(), where(), "."}); break;
            case 7: add({cap(det()), noun(), adjective(), verb(), number(), unit(), prep(), det(), noun(), "."}); break;
            default: add({"Da", where(), actor(), verb(), "che", det(), noun(), "non", verb(), adverb(), "."}); break;
        }
        return detokenize(s);
    }

private:
    static std::string cap(std::string s) {
        if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
        return s;
    }

    template <std::size_t N>
    std::string pick(const std::array<std::string_view, N>& words) {
        return std::string(words[uniform_index(rng_, N)]);
    }

    std::string noun() { return topic_.nouns[noun_z_(rng_)]; }
    std::string verb() { return topic_.verbs_3s[verb_z_(rng_)]; }
    std::string participle() { return topic_.verbs_pp[verb_z_(rng_)]; }
    std::string adjective() { return topic_.adjectives[adj_z_(rng_)]; }
    std::string person() { return lex_.people()[person_z_(rng_)]; }
    std::string actor() { return uniform01(rng_) < 0.6 ? actor_ : person(); }
    std::string where() { return uniform01(rng_) < 0.6 ? place_ : lex_.places()[place_z_(rng_)]; }
    std::string number() { return std::to_string(2 + uniform_index(rng_, 98)); }

    std::string det() {
        static constexpr std::array<std::string_view, 8> d = {"il", "la", "un", "una", "lo", "gli", "le", "i"};
        return pick(d);
    }
    std::string prep() {
        static constexpr std::array<std::string_view, 8> p = {"a", "in", "per", "con", "su", "tra", "verso", "dopo"};
        return pick(p);
    }
    std::string adverb() {
        static constexpr std::array<std::string_view, 7> a = {"ancora", "subito", "già", "sempre", "oggi", "ieri", "spesso"};
        return pick(a);
    }
    std::string say() {
        static constexpr std::array<std::string_view, 5> s = {"detto", "dichiarato", "spiegato", "aggiunto", "ricordato"};
        return pick(s);
    }
    std::string unit() {
        static constexpr std::array<std::string_view, 5> u = {"euro", "persone", "giorni", "milioni", "per cento"};
        return pick(u);
    }

    const NewsLexicon& lex_;
    const NewsLexicon::Topic& topic_;
    Rng& rng_;
    ZipfSampler noun_z_, verb_z_, adj_z_, person_z_, place_z_;
    std::string actor_;
    std::string place_;
};

}  // namespace detail

/// Topic mixture per source: A spreads over all topics, B concentrates on crime (topic 0).
inline std::size_t draw_topic(std::string_view source, Rng& rng) {
    constexpr std::size_t k = detail::NewsLexicon::kTopics;
    if (source == "B") return uniform01(rng) < 0.7 ? 0 : 1 + uniform_index(rng, k - 1);
    return uniform_index(rng, k);
}

inline LabeledDataset make_news_corpus(const NewsCorpusConfig& cfg) {
    require(cfg.n_articles >= 1, "corpus needs at least one article");
    require(cfg.min_sentences >= 1 && cfg.min_sentences <= cfg.max_sentences, "invalid sentence range");
    const auto& lex = detail::news_lexicon();
    const std::string prefix = cfg.id_prefix.empty() ? cfg.source : cfg.id_prefix;
    std::vector<Article> items;
    items.reserve(cfg.n_articles);
    for (std::size_t i = 0; i < cfg.n_articles; ++i) {
        Rng rng(derive_seed(cfg.seed, "news/" + cfg.source, i));
        detail::ArticleWriter w(lex, draw_topic(cfg.source, rng), rng);
        Article a;
        a.id = prefix + "-" + std::to_string(i);
        a.title = w.title();
        const std::size_t n = cfg.min_sentences + uniform_index(rng, cfg.max_sentences - cfg.min_sentences + 1);
        for (std::size_t s = 0; s < n; ++s) {
            if (s) a.text += ' ';
            a.text += w.sentence();
        }
        a.label = Label::human;
        a.source_corpus = cfg.source;
        items.push_back(std::move(a));
    }
    return LabeledDataset(std::move(items));
}

}  // namespace cfmd
