#include <gtest/gtest.h>

#include "cfmd/news_corpus.hpp"
#include "cfmd/supervised.hpp"

namespace {

using cfmd::Article;
using cfmd::Label;
using cfmd::LabeledDataset;

std::vector<Article> corpus_articles(std::size_t n, std::uint64_t seed, const std::string& source = "A") {
    cfmd::NewsCorpusConfig c;
    c.n_articles = n;
    c.seed = seed;
    c.source = source;
    c.id_prefix = source + std::to_string(seed);
    return cfmd::make_news_corpus(c).items();
}

// Synthetic items carry a marker token, so the set is linearly separable.
LabeledDataset marked_set(std::size_t n, std::uint64_t seed) {
    auto items = corpus_articles(n, seed);
    for (std::size_t i = 0; i < items.size(); ++i) {
        items[i].text = cfmd::clip(items[i].text, 40);
        if (i % 2) {
            items[i].label = Label::synthetic;
            items[i].generator = "marker";
            items[i].text += " QXJZ QXJZ";
        }
    }
    return LabeledDataset(std::move(items));
}

TEST(Featurize, SingleTrigramBucket) {
    cfmd::FeatureConfig c;
    c.ngram_sizes = {3};
    const auto f = cfmd::featurize("aaa", c);
    ASSERT_EQ(f.indices.size(), 1u);
    EXPECT_DOUBLE_EQ(f.values[0], 1.0);
}

TEST(Featurize, DeterministicAndUnitNorm) {
    const auto a = cfmd::featurize("Il sindaco è già qui.");
    const auto b = cfmd::featurize("Il sindaco è già qui.");
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NEAR(cfmd::cosine(a, a), 1.0, 1e-12);
    EXPECT_TRUE(cfmd::featurize("").empty_text);
}

TEST(Featurize, SmallEditsStayCloserThanOtherTexts) {
    const auto items = corpus_articles(201, 3);
    cfmd::Rng rng(4);
    for (std::size_t i = 0; i < 100; ++i) {
        const std::string x = cfmd::clip(items[i].text, 60);
        std::string edited = x;
        edited[cfmd::uniform_index(rng, edited.size())] = 'q';
        const std::string other = cfmd::clip(items[100 + i].text, 60);
        const auto fx = cfmd::featurize(x);
        EXPECT_GT(cfmd::cosine(fx, cfmd::featurize(edited)), cfmd::cosine(fx, cfmd::featurize(other))) << i;
    }
}

TEST(Logistic, GradientMatchesFiniteDifferences) {
    cfmd::FeatureConfig fc;
    fc.dim = 64;
    const auto ds = marked_set(30, 5);
    std::vector<cfmd::FeatureVector> xs;
    std::vector<double> ys;
    for (const auto& a : ds) {
        xs.push_back(cfmd::featurize(a.text, fc));
        ys.push_back(cfmd::target_of(a.label));
    }
    cfmd::LinearClassifier m;
    m.features = fc;
    cfmd::Rng rng(6);
    for (std::size_t j = 0; j < fc.dim; ++j) m.weights.push_back(cfmd::uniform01(rng) - 0.5);
    m.bias = 0.3;
    const double l2 = 0.01;
    const auto g = cfmd::logistic_gradient(m, xs, ys, l2);
    const double h = 1e-5;
    for (int k = 0; k < 20; ++k) {
        const std::size_t j = cfmd::uniform_index(rng, fc.dim);
        auto plus = m, minus = m;
        plus.weights[j] += h;
        minus.weights[j] -= h;
        const double numeric = (cfmd::logistic_loss(plus, xs, ys, l2) - cfmd::logistic_loss(minus, xs, ys, l2)) / (2 * h);
        EXPECT_NEAR(g.weights[j], numeric, 1e-5) << "coordinate " << j;
    }
    auto plus = m, minus = m;
    plus.bias += h;
    minus.bias -= h;
    EXPECT_NEAR(g.bias, (cfmd::logistic_loss(plus, xs, ys, l2) - cfmd::logistic_loss(minus, xs, ys, l2)) / (2 * h), 1e-5);
}

TEST(Fit, SeparableSetIsLearnedExactly) {
    const auto ds = marked_set(200, 7);
    const auto m = cfmd::fit(ds, {});
    EXPECT_DOUBLE_EQ(cfmd::evaluate(m, ds).report.accuracy, 1.0);
    EXPECT_LT(m.meta.epoch_losses.back(), std::log(2.0));
    EXPECT_LE(m.meta.epoch_losses.back(), m.meta.epoch_losses.front());
}

TEST(Fit, SameSeedSameWeights) {
    const auto ds = marked_set(60, 8);
    cfmd::FitHyper h;
    h.seed = 3;
    const auto a = cfmd::fit(ds, h), b = cfmd::fit(ds, h);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.bias, b.bias);
}

TEST(Fit, RejectsSingleClass) {
    LabeledDataset ds(corpus_articles(10, 9));
    EXPECT_THROW(cfmd::fit(ds, {}), cfmd::ValidationError);
}

TEST(Evaluate, ConstantHalfModelOnBalancedSet) {
    const auto ds = marked_set(40, 10);
    cfmd::LinearClassifier m;
    m.weights.assign(m.features.dim, 0.0);
    const auto ev = cfmd::evaluate(m, ds);
    EXPECT_DOUBLE_EQ(ev.report.accuracy, 0.5);
    EXPECT_DOUBLE_EQ(ev.report.auroc, 0.5);
}

TEST(Evaluate, AccuracyEqualsRecountFromPredictions) {
    const auto train = marked_set(100, 11);
    auto test_items = marked_set(60, 12).items();
    for (std::size_t i = 0; i < test_items.size(); i += 3) test_items[i].text += " QXJZ";  // some confusers
    const LabeledDataset test(test_items);
    const auto ev = cfmd::evaluate(cfmd::fit(train, {}), test);
    const auto labels = test.label_map();
    std::size_t correct = 0;
    for (const auto& p : ev.predictions) correct += (p.value > 0.5) == (labels.at(p.item_id) == Label::synthetic);
    EXPECT_DOUBLE_EQ(ev.report.accuracy, static_cast<double>(correct) / static_cast<double>(test.size()));
}

TEST(Persistence, JsonRoundTrip) {
    const auto m = cfmd::fit(marked_set(40, 13), {});
    const auto back = cfmd::linear_classifier_from_json(cfmd::to_json(m));
    EXPECT_EQ(back.weights, m.weights);
    EXPECT_EQ(back.bias, m.bias);
    EXPECT_EQ(back.meta.epoch_losses, m.meta.epoch_losses);
}

TEST(Grid, ShapeIsModesTimesSizes) {
    auto syn = marked_set(80, 14).items();
    std::erase_if(syn, [](const Article& a) { return a.label == Label::human; });
    cfmd::GeneratorPool pool{"marker", LabeledDataset(syn), marked_set(20, 15)};
    const LabeledDataset a(corpus_articles(40, 16)), b(corpus_articles(40, 17, "B"));
    const std::vector<cfmd::GeneratorPool> pools{pool};
    const std::vector<std::size_t> sizes = {8, 16, 24};
    const std::vector<cfmd::MixMode> modes = {cfmd::MixMode::in_domain, cfmd::MixMode::mixed_source};
    const auto rows = cfmd::run_grid(pools, a, &b, sizes, modes, 1);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[3].mode, cfmd::MixMode::mixed_source);
    EXPECT_EQ(rows[5].size, 24u);
}

}  // namespace
