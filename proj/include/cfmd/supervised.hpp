#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/io.hpp"
#include "cfmd/metrics.hpp"
#include "cfmd/scoring.hpp"

namespace cfmd {

struct FeatureConfig {
    std::size_t dim = std::size_t{1} << 18;  // hash collisions are accepted
    std::vector<std::size_t> ngram_sizes = {1, 2, 3};
};

/// Sparse, L2-normalized hashed character n-gram term frequencies.
struct FeatureVector {
    std::vector<std::uint32_t> indices;  // ascending, unique
    std::vector<double> values;
    std::size_t dim = 0;
    bool empty_text = false;

    double dot(std::span<const double> dense) const {
        double s = 0.0;
        for (std::size_t i = 0; i < indices.size(); ++i) s += values[i] * dense[indices[i]];
        return s;
    }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Byte offsets of UTF-8 code point starts, plus the end offset.
inline std::vector<std::size_t> codepoint_offsets(std::string_view text) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) out.push_back(i);
    }
    out.push_back(text.size());
    return out;
}

}  // namespace detail

inline FeatureVector featurize(std::string_view text, const FeatureConfig& cfg = {}) {
    require(cfg.dim >= 1 && cfg.dim <= (std::size_t{1} << 31), "feature dimension out of range");
    FeatureVector fv;
    fv.dim = cfg.dim;
    const auto offsets = detail::codepoint_offsets(text);
    const std::size_t n_chars = offsets.size() - 1;
    std::map<std::uint32_t, double> tf;
    for (std::size_t n : cfg.ngram_sizes) {
        if (n == 0 || n > n_chars) continue;
        for (std::size_t i = 0; i + n <= n_chars; ++i) {
            const auto gram = text.substr(offsets[i], offsets[i + n] - offsets[i]);
            tf[static_cast<std::uint32_t>(detail::fnv1a(gram) % cfg.dim)] += 1.0;
        }
    }
    if (tf.empty()) {
        fv.empty_text = true;
        return fv;
    }
    double norm = 0.0;
    for (const auto& [idx, v] : tf) norm += v * v;
    norm = std::sqrt(norm);
    fv.indices.reserve(tf.size());
    fv.values.reserve(tf.size());
    for (const auto& [idx, v] : tf) {
        fv.indices.push_back(idx);
        fv.values.push_back(v / norm);
    }
    return fv;
}

inline double cosine(const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.indices.size() && j < b.indices.size()) {
        if (a.indices[i] == b.indices[j]) {
            s += a.values[i++] * b.values[j++];
        } else if (a.indices[i] < b.indices[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return s;  // both sides have unit norm
}

struct FitHyper {
    std::size_t epochs = 3;
    double learning_rate = 4.0;
    double l2 = 1e-6;
    std::uint64_t seed = 0;
};

struct ClassifierMeta {
    std::string dataset_id;
    std::size_t size = 0;
    std::string mode;
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    std::vector<double> epoch_losses;  // regularized training loss after each epoch
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct LinearClassifier {
    std::vector<double> weights;
    double bias = 0.0;
    FeatureConfig features;
    ClassifierMeta meta;

    double decision(const FeatureVector& x) const { return x.dot(weights) + bias; }

    /// Probability that the text is synthetic.
    double predict_proba(const FeatureVector& x) const { return sigmoid(decision(x)); }
    double predict_proba(std::string_view text) const { return predict_proba(featurize(text, features)); }
};

/// Mean logistic loss plus (l2 / 2) * ||w||^2; the bias is not regularized.
inline double logistic_loss(const LinearClassifier& m, std::span<const FeatureVector> xs,
                            std::span<const double> ys, double l2) {
    double loss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double z = m.decision(xs[i]);
        loss += softplus(z) - ys[i] * z;
    }
    loss /= static_cast<double>(xs.size());
    double sq = 0.0;
    for (double w : m.weights) sq += w * w;
    return loss + 0.5 * l2 * sq;
}

struct Gradient {
    std::vector<double> weights;
    double bias = 0.0;
};

inline Gradient logistic_gradient(const LinearClassifier& m, std::span<const FeatureVector> xs,
                                  std::span<const double> ys, double l2) {
    Gradient g;
    g.weights.assign(m.weights.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = (sigmoid(m.decision(xs[i])) - ys[i]) * inv_n;
        for (std::size_t k = 0; k < xs[i].indices.size(); ++k) g.weights[xs[i].indices[k]] += r * xs[i].values[k];
        g.bias += r;
    }
    for (std::size_t j = 0; j < g.weights.size(); ++j) g.weights[j] += l2 * m.weights[j];
    return g;
}

inline double target_of(Label l) { return l == Label::synthetic ? 1.0 : 0.0; }

/// Seeded SGD on the logistic loss with a linearly decaying learning rate.
/// Items are reshuffled every epoch.
inline LinearClassifier fit(const LabeledDataset& train, const FitHyper& hyper,
                            const FeatureConfig& features = {}, std::string dataset_id = {},
                            std::string mode = {}) {
    require(!train.empty(), "cannot fit on an empty training set");
    const std::size_t n_pos = train.count(Label::synthetic);
    if (n_pos == 0 || n_pos == train.size()) throw ValidationError("training set has a single class");
    require(hyper.epochs >= 1, "epochs must be >= 1");
    require(hyper.learning_rate > 0.0 && hyper.l2 >= 0.0, "invalid learning rate or l2");

    std::vector<FeatureVector> xs;
    std::vector<double> ys;
    xs.reserve(train.size());
    ys.reserve(train.size());
    for (const auto& a : train) {
        xs.push_back(featurize(a.text, features));
        ys.push_back(target_of(a.label));
    }

    LinearClassifier m;
    m.features = features;
    m.weights.assign(features.dim, 0.0);
    m.meta = {std::move(dataset_id), train.size(), std::move(mode), hyper.epochs, hyper.seed, {}};

    // w = scale * v, so the dense L2 decay costs O(1) per step.
    std::vector<double> v(features.dim, 0.0);
    double scale = 1.0;
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Learning rate decays linearly to zero over all steps.
    const double total_steps = static_cast<double>(hyper.epochs * xs.size());
    double t = 0.0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng rng(derive_seed(hyper.seed, "fit/epoch", epoch));
        shuffle(order, rng);
        for (std::size_t i : order) {
            const double lr = hyper.learning_rate * (1.0 - t / total_steps);
            t += 1.0;
            const FeatureVector& x = xs[i];
            const double z = scale * x.dot(v) + m.bias;
            const double g = sigmoid(z) - ys[i];
            scale *= 1.0 - lr * hyper.l2;
            const double step = lr * g / scale;
            for (std::size_t k = 0; k < x.indices.size(); ++k) v[x.indices[k]] -= step * x.values[k];
            m.bias -= lr * g;
            if (scale < 1e-9) {
                for (double& w : v) w *= scale;
                scale = 1.0;
            }
        }
        for (std::size_t j = 0; j < v.size(); ++j) m.weights[j] = scale * v[j];
        m.meta.epoch_losses.push_back(logistic_loss(m, xs, ys, hyper.l2));
    }
    return m;
}

struct SupervisedEval {
    EvalReport report;                     // accuracy at probability threshold 0.5
    std::vector<DetectionScore> predictions;  // method supervised_prob
};

inline SupervisedEval evaluate(const LinearClassifier& model, const LabeledDataset& test,
                               std::string provider_id = "linear") {
    require(!test.empty(), "cannot evaluate on an empty test set");
    SupervisedEval out;
    std::vector<double> probs;
    std::vector<Label> labels;
    for (const auto& a : test) {
        const double p = model.predict_proba(a.text);
        probs.push_back(p);
        labels.push_back(a.label);
        out.predictions.push_back({a.id, Method::supervised_prob, provider_id, p, std::nullopt});
    }
    out.report.method = std::string(to_string(Method::supervised_prob));
    out.report.provider_id = std::move(provider_id);
    out.report.threshold_used = 0.5;
    out.report.accuracy = accuracy_at_threshold(probs, labels, 0.5);
    out.report.n_pos = test.count(Label::synthetic);
    out.report.n_neg = test.count(Label::human);
    out.report.auroc = (out.report.n_pos > 0 && out.report.n_neg > 0) ? auroc(probs, labels) : 0.5;
    return out;
}

// -- persistence ---------------------------------------------------------------------

inline nlohmann::json to_json(const LinearClassifier& m) {
    std::vector<std::uint64_t> idx;
    std::vector<double> val;
    for (std::size_t j = 0; j < m.weights.size(); ++j) {
        if (m.weights[j] != 0.0) {
            idx.push_back(j);
            val.push_back(m.weights[j]);
        }
    }
    return {{"format", "cfmd.linear"},
            {"version", 1},
            {"dim", m.features.dim},
            {"ngram_sizes", m.features.ngram_sizes},
            {"bias", m.bias},
            {"weight_indices", idx},
            {"weight_values", val},
            {"training_meta",
             {{"dataset_id", m.meta.dataset_id},
              {"size", m.meta.size},
              {"mode", m.meta.mode},
              {"epochs", m.meta.epochs},
              {"seed", m.meta.seed},
              {"epoch_losses", m.meta.epoch_losses}}}};
}

inline LinearClassifier linear_classifier_from_json(const nlohmann::json& j) {
    try {
        require(j.at("format") == "cfmd.linear" && j.at("version") == 1, "not a linear classifier file");
        LinearClassifier m;
        m.features.dim = j.at("dim").get<std::size_t>();
        m.features.ngram_sizes = j.at("ngram_sizes").get<std::vector<std::size_t>>();
        m.bias = j.at("bias").get<double>();
        m.weights.assign(m.features.dim, 0.0);
        const auto idx = j.at("weight_indices").get<std::vector<std::uint64_t>>();
        const auto val = j.at("weight_values").get<std::vector<double>>();
        require(idx.size() == val.size(), "weight index/value length mismatch");
        for (std::size_t k = 0; k < idx.size(); ++k) {
            require(idx[k] < m.weights.size(), "weight index out of range");
            m.weights[idx[k]] = val[k];
        }
        const auto& meta = j.at("training_meta");
        m.meta.dataset_id = meta.at("dataset_id").get<std::string>();
        m.meta.size = meta.at("size").get<std::size_t>();
        m.meta.mode = meta.at("mode").get<std::string>();
        m.meta.epochs = meta.at("epochs").get<std::size_t>();
        m.meta.seed = meta.at("seed").get<std::uint64_t>();
        m.meta.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed classifier file: ") + e.what());
    }
}

// -- size x mixing grid ----------------------------------------------------------------

/// Synthetic training pool and fixed test set for one generator.
struct GeneratorPool {
    std::string generator_id;
    LabeledDataset synthetic;
    LabeledDataset test;
};

struct GridRow {
    std::string generator;
    std::size_t size = 0;
    MixMode mode = MixMode::in_domain;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double auroc = 0.0;
};

inline std::vector<GridRow> run_grid(std::span<const GeneratorPool> generators, const LabeledDataset& source_a,
                                     const LabeledDataset* source_b, std::span<const std::size_t> sizes,
                                     std::span<const MixMode> modes, std::uint64_t seed,
                                     const FitHyper& hyper = {}, const FeatureConfig& features = {}) {
    std::vector<GridRow> rows;
    for (const auto& gen : generators) {
        for (MixMode mode : modes) {
            for (std::size_t size : sizes) {
                const std::string cell = gen.generator_id + "/" + std::string(to_string(mode)) + "/" +
                                         std::to_string(size);
                LabeledDataset train;
                try {
                    train = build_supervised_set(gen.synthetic, source_a, source_b, mode, size,
                                                 derive_seed(seed, "grid/data"));
                } catch (const InsufficientPoolError& e) {
                    throw InsufficientPoolError(e.pool(), e.shortfall(), "grid cell " + cell);
                }
                FitHyper h = hyper;
                h.seed = derive_seed(seed, "grid/fit");
                const auto model = fit(train, h, features, cell, std::string(to_string(mode)));
                const auto ev = evaluate(model, gen.test, gen.generator_id);
                rows.push_back({gen.generator_id, size, mode, seed, ev.report.accuracy, ev.report.auroc});
            }
        }
    }
    return rows;
}

inline void write_grid_csv(std::ostream& out, std::span<const GridRow> rows) {
    write_csv_row(out, {"generator", "size", "mode", "seed", "accuracy", "auroc"});
    for (const auto& r : rows) {
        write_csv_row(out, {r.generator, std::to_string(r.size), std::string(to_string(r.mode)),
                            std::to_string(r.seed), format_number(r.accuracy), format_number(r.auroc)});
    }
}

}  // namespace cfmd
