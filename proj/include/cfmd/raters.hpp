#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/io.hpp"

namespace cfmd {

inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;

struct RatedItem {
    std::string item_id;
    Label label = Label::human;
    std::string survey_id;
    std::vector<int> ratings;  // 1 = certainly human-written, 5 = certainly machine-generated

    double mean_rating() const {
        double s = 0.0;
        for (int r : ratings) s += r;
        return s / static_cast<double>(ratings.size());
    }
};

/// Items x raters Likert scores. Every item carries the same number of ratings.
struct RatingMatrix {
    std::vector<RatedItem> items;
    std::size_t raters_per_item = 0;

    std::size_t rating_count() const { return items.size() * raters_per_item; }

    /// Per-survey sub-matrices, keyed and ordered by survey id.
    std::map<std::string, RatingMatrix> surveys() const {
        std::map<std::string, RatingMatrix> out;
        for (const auto& it : items) {
            auto& m = out[it.survey_id];
            m.raters_per_item = raters_per_item;
            m.items.push_back(it);
        }
        return out;
    }
};

namespace detail {

class RatingAssembler {
public:
    void add(std::size_t line, std::string item_id, Label label, std::string survey_id, int rating) {
        if (rating < kLikertMin || rating > kLikertMax) {
            throw ParseError(line, "rating " + std::to_string(rating) + " outside the " +
                                       std::to_string(kLikertMin) + ".." + std::to_string(kLikertMax) +
                                       " scale");
        }
        auto key = std::make_pair(survey_id, item_id);
        auto [it, fresh] = index_.try_emplace(key, items_.size());
        if (fresh) {
            items_.push_back({std::move(item_id), label, std::move(survey_id), {}});
        } else if (items_[it->second].label != label) {
            throw ParseError(line, "conflicting labels for item " + key.second);
        }
        items_[it->second].ratings.push_back(rating);
    }

    RatingMatrix finish() {
        require(!items_.empty(), "ratings file has no rows");
        RatingMatrix m;
        m.raters_per_item = items_.front().ratings.size();
        for (const auto& it : items_) {
            if (it.ratings.size() != m.raters_per_item) {
                throw ValidationError("non-uniform rater count: item " + it.item_id + " (survey " +
                                      it.survey_id + ") has " + std::to_string(it.ratings.size()) +
                                      " ratings, expected " + std::to_string(m.raters_per_item));
            }
        }
        m.items = std::move(items_);
        return m;
    }

private:
    std::vector<RatedItem> items_;
    std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

inline int parse_rating(const std::string& s, std::size_t line) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(line, "rating '" + s + "' is not an integer");
    }
}

}  // namespace detail

/// Long-format CSV: item_id,label,survey_id,rating with one row per rating.
inline RatingMatrix read_ratings_csv(std::istream& in) {
    const CsvTable t = read_csv(in);
    const auto ci = t.column("item_id"), cl = t.column("label"), cs = t.column("survey_id"),
               cr = t.column("rating");
    detail::RatingAssembler acc;
    std::size_t line = 1;
    for (const auto& row : t.rows) {
        ++line;
        Label label;
        try {
            label = parse_label(row[cl]);
        } catch (const ValidationError& e) {
            throw ParseError(line, e.what());
        }
        acc.add(line, row[ci], label, row[cs], detail::parse_rating(row[cr], line));
    }
    return acc.finish();
}

/// JSONL: one object per line with item_id, label, survey_id and either an
/// integer "rating" or a "ratings" array.
inline RatingMatrix read_ratings_jsonl(std::istream& in) {
    detail::RatingAssembler acc;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(text);
            const auto id = j.at("item_id").get<std::string>();
            const auto label = parse_label(j.at("label").get<std::string>());
            const auto survey = j.at("survey_id").get<std::string>();
            if (j.contains("ratings")) {
                for (int r : j.at("ratings").get<std::vector<int>>()) acc.add(line, id, label, survey, r);
            } else {
                acc.add(line, id, label, survey, j.at("rating").get<int>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line, e.what());
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(line, e.what());
        }
    }
    return acc.finish();
}

inline RatingMatrix load_ratings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    const bool jsonl = path.size() >= 6 && (path.ends_with(".jsonl") || path.ends_with(".json"));
    return jsonl ? read_ratings_jsonl(in) : read_ratings_csv(in);
}

enum class ThresholdMode { fixed_3, scaled_mean };

inline std::string_view to_string(ThresholdMode m) { return m == ThresholdMode::fixed_3 ? "fixed_3" : "scaled_mean"; }

/// Mean of every rating in the matrix.
inline double overall_mean_rating(const RatingMatrix& m) {
    require(!m.items.empty(), "empty rating matrix");
    double s = 0.0;
    for (const auto& it : m.items) {
        for (int r : it.ratings) s += r;
    }
    return s / static_cast<double>(m.rating_count());
}

/// An item is judged machine-generated when its mean rating is strictly above
/// the threshold: 3 for fixed_3, its survey's mean rating for scaled_mean.
inline double binary_accuracy(const RatingMatrix& m, ThresholdMode mode) {
    require(!m.items.empty(), "empty rating matrix");
    std::map<std::string, double> threshold;
    for (const auto& [sid, sub] : m.surveys()) {
        threshold[sid] = mode == ThresholdMode::fixed_3 ? 3.0 : overall_mean_rating(sub);
    }
    std::size_t correct = 0;
    for (const auto& it : m.items) {
        const bool machine = it.mean_rating() > threshold[it.survey_id];
        correct += machine == (it.label == Label::synthetic);
    }
    return static_cast<double>(correct) / static_cast<double>(m.items.size());
}

/// Fleiss' kappa for a fixed number of raters per item.
inline double fleiss_kappa(const RatingMatrix& m, int categories = kLikertMax) {
    require(!m.items.empty(), "empty rating matrix");
    require(categories >= 2, "kappa needs at least two categories");
    const std::size_t r = m.raters_per_item;
    require(r >= 2, "kappa needs at least two raters per item");
    const auto k = static_cast<std::size_t>(categories);
    std::vector<double> pooled(k, 0.0);
    double p_bar = 0.0;
    std::vector<std::size_t> n(k);
    for (const auto& it : m.items) {
        require(it.ratings.size() == r, "non-uniform rater count for item " + it.item_id);
        std::fill(n.begin(), n.end(), 0);
        for (int rating : it.ratings) {
            require(rating >= 1 && rating <= categories, "rating outside 1.." + std::to_string(categories));
            ++n[static_cast<std::size_t>(rating - 1)];
        }
        double agree = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const auto c = static_cast<double>(n[j]);
            agree += c * (c - 1.0);
            pooled[j] += static_cast<double>(n[j]);
        }
        p_bar += agree / static_cast<double>(r * (r - 1));
    }
    const double n_items = static_cast<double>(m.items.size());
    p_bar /= n_items;
    double p_e = 0.0;
    for (double c : pooled) {
        const double p = c / (n_items * static_cast<double>(r));
        p_e += p * p;
    }
    if (p_e >= 1.0) throw RuntimeError("kappa undefined: every rating falls in one category");
    return (p_bar - p_e) / (1.0 - p_e);
}

struct SurveySummary {
    std::string survey_id;
    std::size_t n_items = 0;
    std::size_t raters_per_item = 0;
    double accuracy_fixed_3 = 0.0;
    double accuracy_scaled_mean = 0.0;
    double scaled_threshold = 0.0;
    std::optional<double> kappa;  // absent when undefined
};

inline std::vector<SurveySummary> summarize_surveys(const RatingMatrix& m) {
    std::vector<SurveySummary> out;
    for (const auto& [sid, sub] : m.surveys()) {
        SurveySummary s;
        s.survey_id = sid;
        s.n_items = sub.items.size();
        s.raters_per_item = sub.raters_per_item;
        s.accuracy_fixed_3 = binary_accuracy(sub, ThresholdMode::fixed_3);
        s.accuracy_scaled_mean = binary_accuracy(sub, ThresholdMode::scaled_mean);
        s.scaled_threshold = overall_mean_rating(sub);
        if (sub.raters_per_item >= 2) {
            try {
                s.kappa = fleiss_kappa(sub);
            } catch (const RuntimeError&) {
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline nlohmann::json to_json(const std::vector<SurveySummary>& surveys) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : surveys) {
        arr.push_back({{"survey_id", s.survey_id},
                       {"n_items", s.n_items},
                       {"raters_per_item", s.raters_per_item},
                       {"accuracy_fixed_3", s.accuracy_fixed_3},
                       {"accuracy_scaled_mean", s.accuracy_scaled_mean},
                       {"scaled_threshold", s.scaled_threshold},
                       {"fleiss_kappa", s.kappa ? nlohmann::json(*s.kappa) : nlohmann::json(nullptr)}});
    }
    return {{"surveys", arr}};
}

}  // namespace cfmd
