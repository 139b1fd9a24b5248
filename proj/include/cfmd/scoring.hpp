#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/io.hpp"
#include "cfmd/perturb.hpp"
#include "cfmd/provider.hpp"

namespace cfmd {

enum class Method { loglik, detectgpt_raw, detectgpt_norm, ensemble_mean, ensemble_max, supervised_prob };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::loglik: return "loglik";
        case Method::detectgpt_raw: return "detectgpt_raw";
        case Method::detectgpt_norm: return "detectgpt_norm";
        case Method::ensemble_mean: return "ensemble_mean";
        case Method::ensemble_max: return "ensemble_max";
        case Method::supervised_prob: return "supervised_prob";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (Method m : {Method::loglik, Method::detectgpt_raw, Method::detectgpt_norm,
                     Method::ensemble_mean, Method::ensemble_max, Method::supervised_prob}) {
        if (to_string(m) == s) return m;
    }
    if (s == "detectgpt") return Method::detectgpt_norm;
    throw ValidationError("unknown method '" + std::string(s) + "'");
}

/// One detector output. Higher value means "more likely synthetic" for every method.
struct DetectionScore {
    std::string item_id;
    Method method = Method::loglik;
    std::string provider_id;
    double value = 0.0;
    std::optional<std::size_t> n_perturbations_used;

    bool operator==(const DetectionScore&) const = default;
};

class ZeroVarianceError : public RuntimeError {
public:
    using RuntimeError::RuntimeError;
};

/// Mean of the first `clip_tokens` log-probabilities. Remote providers may
/// tokenize differently, so the budget is applied to the list they return.
inline double clipped_mean(const TokenScores& ts, std::size_t clip_tokens) {
    const std::size_t n = std::min(ts.size(), clip_tokens);
    require(n > 0, "nothing left to score after clipping");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += ts.logprobs[i];
    return s / static_cast<double>(n);
}

inline double mean_loglik(const LikelihoodProvider& provider, std::string_view text,
                          std::size_t clip_tokens = 150) {
    const std::string clipped = clip(text, clip_tokens);
    require(!tokenize(clipped).empty(), "text is empty after clipping");
    return clipped_mean(provider.score(clipped), clip_tokens);
}

inline DetectionScore loglik_score(const LikelihoodProvider& provider, std::string_view text,
                                   std::string item_id = {}, std::size_t clip_tokens = 150) {
    require(!text.empty(), "cannot score empty text");
    return {std::move(item_id), Method::loglik, provider.id(),
            mean_loglik(provider, text, clip_tokens), std::nullopt};
}

/// Perturbation discrepancy from precomputed mean log-likelihoods.
/// raw = l(x) - mean(l(x~)); normalized additionally divides by the sample
/// (n-1) standard deviation of l(x~).
inline double detectgpt_value(double original, std::span<const double> perturbed, bool normalized) {
    if (perturbed.empty()) throw ValidationError("DetectGPT needs at least one non-degenerate perturbation");
    const double n = static_cast<double>(perturbed.size());
    const double mu = std::accumulate(perturbed.begin(), perturbed.end(), 0.0) / n;
    const double raw = original - mu;
    if (!normalized) return raw;
    if (perturbed.size() < 2) {
        throw ValidationError("normalized DetectGPT needs at least two non-degenerate perturbations");
    }
    double ss = 0.0;
    for (double v : perturbed) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw ZeroVarianceError("perturbation log-likelihoods have zero variance");
    return raw / sd;
}

/// DetectGPT on an existing perturbation set of the (already clipped) text.
/// Degenerate variants are dropped before aggregation.
inline DetectionScore detectgpt_score(const LikelihoodProvider& provider, const PerturbationSet& set,
                                      bool normalized, std::string item_id = {},
                                      std::size_t clip_tokens = 150) {
    const double original = clipped_mean(provider.score(set.original), clip_tokens);
    std::vector<double> perturbed;
    perturbed.reserve(set.variants.size());
    for (std::size_t i = 0; i < set.variants.size(); ++i) {
        if (i < set.degenerate.size() && set.degenerate[i]) continue;
        perturbed.push_back(clipped_mean(provider.score(set.variants[i]), clip_tokens));
    }
    DetectionScore s;
    s.item_id = std::move(item_id);
    s.method = normalized ? Method::detectgpt_norm : Method::detectgpt_raw;
    s.provider_id = provider.id();
    s.value = detectgpt_value(original, perturbed, normalized);
    s.n_perturbations_used = perturbed.size();
    return s;
}

inline DetectionScore detectgpt_score(const LikelihoodProvider& provider,
                                      const PerturbationSource& perturber, std::string_view text,
                                      const PerturbConfig& cfg, bool normalized,
                                      std::string item_id = {}, std::size_t clip_tokens = 150) {
    const std::string clipped = clip(text, clip_tokens);
    return detectgpt_score(provider, perturber.perturbations(clipped, cfg), normalized,
                           std::move(item_id), clip_tokens);
}

inline DetectionScore detectgpt_score(const LikelihoodProvider& provider, const FillProvider& fill_model,
                                      std::string_view text, const PerturbConfig& cfg, bool normalized,
                                      std::string item_id = {}, std::size_t clip_tokens = 150) {
    return detectgpt_score(provider, LocalPerturber(fill_model), text, cfg, normalized,
                           std::move(item_id), clip_tokens);
}

enum class Aggregation { mean, max };

inline std::string_view to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "max"; }

inline Aggregation parse_aggregation(std::string_view s) {
    if (s == "mean") return Aggregation::mean;
    if (s == "max") return Aggregation::max;
    throw ValidationError("unknown aggregation '" + std::string(s) + "' (expected mean|max)");
}

/// Combines one item's scores from several providers. The same provider may
/// appear more than once.
inline DetectionScore ensemble_score(std::span<const DetectionScore> scores, Aggregation agg) {
    require(scores.size() >= 2, "an ensemble needs at least two member scores");
    const auto& first = scores.front();
    std::string members;
    for (const auto& s : scores) {
        if (s.item_id != first.item_id) {
            throw ValidationError("ensemble members score different items: " + first.item_id +
                                  " vs " + s.item_id);
        }
        if (s.method != first.method) {
            throw ValidationError("ensemble members use different methods: " +
                                  std::string(to_string(first.method)) + " vs " +
                                  std::string(to_string(s.method)));
        }
        if (!members.empty()) members += '+';
        members += s.provider_id;
    }
    DetectionScore out;
    out.item_id = first.item_id;
    out.method = agg == Aggregation::mean ? Method::ensemble_mean : Method::ensemble_max;
    out.provider_id = std::string(to_string(agg)) + "(" + members + ")";
    if (agg == Aggregation::mean) {
        double sum = 0.0;
        for (const auto& s : scores) sum += s.value;
        out.value = sum / static_cast<double>(scores.size());
    } else {
        out.value = std::max_element(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
                        return a.value < b.value;
                    })->value;
    }
    return out;
}

// -- scores.csv ------------------------------------------------------------------

inline const std::vector<std::string>& scores_csv_header() {
    static const std::vector<std::string> h = {"item_id", "label", "method", "provider_id", "value",
                                               "n_perturbations_used"};
    return h;
}

inline void write_scores_csv(std::ostream& out, std::span<const DetectionScore> scores,
                             const std::map<std::string, Label>& labels) {
    write_csv_row(out, scores_csv_header());
    for (const auto& s : scores) {
        auto it = labels.find(s.item_id);
        write_csv_row(out, {s.item_id, it == labels.end() ? "" : std::string(to_string(it->second)),
                            std::string(to_string(s.method)), s.provider_id, format_number(s.value),
                            s.n_perturbations_used ? std::to_string(*s.n_perturbations_used) : ""});
    }
}

struct ScoreFile {
    std::vector<DetectionScore> scores;
    std::map<std::string, Label> labels;  // from the label column, where present
};

inline ScoreFile read_scores_csv(std::istream& in) {
    const CsvTable t = read_csv(in);
    const auto c_id = t.column("item_id"), c_label = t.column("label"), c_method = t.column("method"),
               c_prov = t.column("provider_id"), c_val = t.column("value"),
               c_n = t.column("n_perturbations_used");
    ScoreFile f;
    std::size_t line = 1;
    for (const auto& row : t.rows) {
        ++line;
        DetectionScore s;
        s.item_id = row[c_id];
        s.method = parse_method(row[c_method]);
        s.provider_id = row[c_prov];
        try {
            std::size_t pos = 0;
            s.value = std::stod(row[c_val], &pos);
            if (pos != row[c_val].size()) throw std::invalid_argument("trailing characters");
            if (!row[c_n].empty()) s.n_perturbations_used = std::stoul(row[c_n]);
        } catch (const std::exception&) {
            throw ParseError(line, "bad number in scores row for " + s.item_id);
        }
        if (!std::isfinite(s.value)) throw ParseError(line, "non-finite score for " + s.item_id);
        if (!row[c_label].empty()) f.labels[s.item_id] = parse_label(row[c_label]);
        f.scores.push_back(std::move(s));
    }
    return f;
}

}  // namespace cfmd
