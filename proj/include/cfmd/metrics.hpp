#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/io.hpp"
#include "cfmd/scoring.hpp"

namespace cfmd {

// Positive class throughout is Label::synthetic; a score predicts synthetic
// when it is strictly greater than the threshold.

struct RocPoint {
    double fpr;
    double tpr;
    double threshold;  // items with score >= threshold are predicted positive
};

struct RocCurve {
    std::vector<RocPoint> points;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

/// Paired (value, label) view of a score list.
struct LabeledScores {
    std::vector<double> values;
    std::vector<Label> labels;
};

inline LabeledScores join_labels(std::span<const DetectionScore> scores,
                                 const std::map<std::string, Label>& labels) {
    LabeledScores out;
    out.values.reserve(scores.size());
    out.labels.reserve(scores.size());
    for (const auto& s : scores) {
        auto it = labels.find(s.item_id);
        if (it == labels.end()) throw ValidationError("no label for item " + s.item_id);
        out.values.push_back(s.value);
        out.labels.push_back(it->second);
    }
    return out;
}

/// Threshold sweep over the distinct score values, highest first. Tied
/// scores collapse into a single point.
inline RocCurve roc_curve(std::span<const double> scores, std::span<const Label> labels) {
    require(scores.size() == labels.size(), "scores and labels differ in length");
    RocCurve c;
    for (Label l : labels) (l == Label::synthetic ? c.n_pos : c.n_neg)++;
    if (c.n_pos == 0 || c.n_neg == 0) {
        throw ValidationError("ROC needs both classes (got " + std::to_string(c.n_pos) +
                              " synthetic, " + std::to_string(c.n_neg) + " human)");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double pos = static_cast<double>(c.n_pos);
    const double neg = static_cast<double>(c.n_neg);
    c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double v = scores[order[i]];
        require(std::isfinite(v), "score values must be finite");
        for (; i < order.size() && scores[order[i]] == v; ++i) {
            (labels[order[i]] == Label::synthetic ? tp : fp)++;
        }
        c.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, v});
    }
    return c;
}

inline RocCurve roc_curve(std::span<const DetectionScore> scores, const std::map<std::string, Label>& labels) {
    const auto j = join_labels(scores, labels);
    return roc_curve(j.values, j.labels);
}

/// Trapezoidal area under the curve.
inline double area(const RocCurve& c) {
    double a = 0.0;
    for (std::size_t i = 1; i < c.points.size(); ++i) {
        const auto& p = c.points[i - 1];
        const auto& q = c.points[i];
        a += (q.fpr - p.fpr) * (p.tpr + q.tpr) * 0.5;
    }
    return a;
}

/// Equals P(score_pos > score_neg) + P(tie) / 2.
inline double auroc(std::span<const double> scores, std::span<const Label> labels) {
    return area(roc_curve(scores, labels));
}

inline double auroc(std::span<const DetectionScore> scores, const std::map<std::string, Label>& labels) {
    return area(roc_curve(scores, labels));
}

/// Fraction of items where (value > threshold) agrees with label == synthetic.
inline double accuracy_at_threshold(std::span<const double> scores, std::span<const Label> labels,
                                    double threshold) {
    require(!scores.empty() && scores.size() == labels.size(), "accuracy needs matching non-empty inputs");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += (scores[i] > threshold) == (labels[i] == Label::synthetic);
    }
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

inline double median(std::vector<double> values) {
    require(!values.empty(), "median of an empty list");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

struct ThresholdAccuracy {
    double threshold;
    double accuracy;
    bool balanced;
};

/// Calibration-free accuracy for balanced sets: threshold at the median score.
inline ThresholdAccuracy median_threshold_accuracy(std::span<const double> scores, std::span<const Label> labels) {
    require(!scores.empty(), "median-threshold accuracy of an empty score list");
    require(scores.size() == labels.size(), "scores and labels differ in length");
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::synthetic));
    const bool balanced = 2 * n_pos == labels.size();
    if (!balanced) {
        spdlog::warn("median threshold on an unbalanced set ({} synthetic of {})", n_pos, labels.size());
    }
    const double t = median(std::vector<double>(scores.begin(), scores.end()));
    return {t, accuracy_at_threshold(scores, labels, t), balanced};
}

inline ThresholdAccuracy median_threshold_accuracy(std::span<const DetectionScore> scores,
                                                   const std::map<std::string, Label>& labels) {
    const auto j = join_labels(scores, labels);
    return median_threshold_accuracy(j.values, j.labels);
}

// -- reports ------------------------------------------------------------------------

struct EvalReport {
    std::string method;
    std::string provider_id;
    double auroc = 0.0;
    double accuracy = 0.0;  // at threshold_used (median for score methods)
    double threshold_used = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

inline EvalReport evaluate(std::span<const double> scores, std::span<const Label> labels,
                           std::string method, std::string provider_id) {
    const RocCurve c = roc_curve(scores, labels);
    const auto m = median_threshold_accuracy(scores, labels);
    return {std::move(method), std::move(provider_id), area(c), m.accuracy, m.threshold, c.n_pos, c.n_neg};
}

/// One report per (method, provider) group, in first-appearance order.
inline std::vector<EvalReport> evaluate_scores(std::span<const DetectionScore> scores,
                                               const std::map<std::string, Label>& labels) {
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<DetectionScore>> groups;
    for (const auto& s : scores) {
        std::pair<std::string, std::string> key{std::string(to_string(s.method)), s.provider_id};
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) keys.push_back(key);
        it->second.push_back(s);
    }
    std::vector<EvalReport> out;
    for (const auto& key : keys) {
        const auto j = join_labels(groups[key], labels);
        out.push_back(evaluate(j.values, j.labels, key.first, key.second));
    }
    return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"method", r.method},
            {"provider_id", r.provider_id},
            {"auroc", r.auroc},
            {"accuracy", r.accuracy},
            {"threshold", r.threshold_used},
            {"n_pos", r.n_pos},
            {"n_neg", r.n_neg}};
}

inline void write_roc_csv(std::ostream& out, const RocCurve& c) {
    write_csv_row(out, {"fpr", "tpr", "threshold"});
    for (const auto& p : c.points) {
        write_csv_row(out, {format_number(p.fpr), format_number(p.tpr), format_number(p.threshold)});
    }
}

inline RocCurve read_roc_csv(std::istream& in) {
    const CsvTable t = read_csv(in);
    const auto cf = t.column("fpr"), ct = t.column("tpr"), cth = t.column("threshold");
    RocCurve c;
    for (const auto& row : t.rows) {
        try {
            c.points.push_back({std::stod(row[cf]), std::stod(row[ct]), std::stod(row[cth])});
        } catch (const std::exception&) {
            throw ValidationError("bad number in ROC row");
        }
    }
    require(!c.points.empty(), "ROC file has no points");
    return c;
}

}  // namespace cfmd
