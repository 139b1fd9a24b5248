#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "cfmd/news_corpus.hpp"
#include "cfmd/scoring.hpp"

namespace {

using cfmd::DetectionScore;
using cfmd::Method;

// Returns canned token log-probabilities per text; one token per word.
class TableProvider final : public cfmd::LikelihoodProvider {
public:
    explicit TableProvider(std::map<std::string, std::vector<double>> table, std::string id = "table")
        : table_(std::move(table)), id_(std::move(id)) {}
    const std::string& id() const override { return id_; }
    cfmd::TokenScores score(std::string_view text) const override {
        cfmd::TokenScores ts;
        ts.tokens = cfmd::tokenize(text);
        ts.logprobs = table_.at(std::string(text));
        ts.provider_id = id_;
        return ts;
    }

private:
    std::map<std::string, std::vector<double>> table_;
    std::string id_;
};

cfmd::PerturbationSet set_of(std::string original, std::vector<std::string> variants) {
    cfmd::PerturbationSet s;
    s.original = std::move(original);
    s.variants = std::move(variants);
    s.degenerate.assign(s.variants.size(), false);
    return s;
}

TEST(Loglik, MeanOfTokenLogprobs) {
    const TableProvider p({{"a b", {-1.0, -3.0}}, {"a", {0.0}}});
    EXPECT_DOUBLE_EQ(cfmd::loglik_score(p, "a b").value, -2.0);
    EXPECT_DOUBLE_EQ(cfmd::loglik_score(p, "a").value, 0.0);
    EXPECT_THROW(cfmd::loglik_score(p, ""), cfmd::ValidationError);
}

TEST(Loglik, MatchesIndependentRecomputation) {
    cfmd::NewsCorpusConfig c;
    c.n_articles = 100;
    c.seed = 21;
    const auto corpus = cfmd::make_news_corpus(c);
    std::vector<std::vector<cfmd::Token>> seqs;
    for (const auto& a : corpus) seqs.push_back(cfmd::tokenize(a.text));
    cfmd::TrainOptions o;
    o.order = 3;
    o.lambdas = {0.2, 0.3, 0.5};
    const cfmd::NGramProvider p("ng", cfmd::NGramLM::train(std::vector(seqs.begin(), seqs.begin() + 50), o));
    for (const auto& a : corpus) {
        const auto clipped = cfmd::tokenize(cfmd::clip(a.text, 150));
        double sum = 0.0;
        for (double lp : p.model().logprobs(clipped).logprobs) sum += lp;
        EXPECT_NEAR(cfmd::loglik_score(p, a.text).value, sum / static_cast<double>(clipped.size()), 1e-12);
    }
}

TEST(Loglik, ClipsToBudgetOnReturnedTokens) {
    const TableProvider p({{"a b c", {-1.0, -1.0, -7.0}}});
    cfmd::TokenScores ts = p.score("a b c");
    EXPECT_DOUBLE_EQ(cfmd::clipped_mean(ts, 2), -1.0);
}

TEST(DetectGpt, ConstantPerturbations) {
    const TableProvider p({{"x", {-2.0}}, {"y", {-2.5}}, {"z", {-2.5}}});
    const auto set = set_of("x", {"y", "z"});
    EXPECT_DOUBLE_EQ(cfmd::detectgpt_score(p, set, false).value, 0.5);
    EXPECT_THROW(cfmd::detectgpt_score(p, set, true), cfmd::ZeroVarianceError);
}

TEST(DetectGpt, IdenticalPerturbationsGiveZero) {
    const TableProvider p({{"x", {-2.0, -1.0}}});
    EXPECT_DOUBLE_EQ(cfmd::detectgpt_score(p, set_of("x", {"x", "x", "x"}), false).value, 0.0);
}

TEST(DetectGpt, HandComputedTwoPointStd) {
    const TableProvider p({{"x", {-2.0}}, {"y", {-2.0}}, {"z", {-3.0}}});
    const auto set = set_of("x", {"y", "z"});
    EXPECT_DOUBLE_EQ(cfmd::detectgpt_score(p, set, false).value, 0.5);
    // Sample std of {-2, -3} is sqrt(0.5) = 0.70711.
    EXPECT_NEAR(cfmd::detectgpt_score(p, set, true).value, 0.70711, 5e-6);
    EXPECT_EQ(cfmd::detectgpt_score(p, set, true).method, Method::detectgpt_norm);
}

TEST(DetectGpt, DegenerateVariantsAreDropped) {
    const TableProvider p({{"x", {-2.0}}, {"y", {-2.0}}, {"z", {-3.0}}, {"w", {-100.0}}});
    auto set = set_of("x", {"y", "w", "z"});
    set.degenerate = {false, true, false};
    const auto s = cfmd::detectgpt_score(p, set, false);
    EXPECT_DOUBLE_EQ(s.value, 0.5);
    EXPECT_EQ(s.n_perturbations_used, 2u);
}

TEST(DetectGpt, ValuesMatchPerVariantRescoring) {
    const TableProvider p({{"o", {-1.0, -2.0}}, {"a", {-1.5}}, {"b", {-2.5, -0.5}}, {"c", {-4.0}}});
    const auto set = set_of("o", {"a", "b", "c"});
    const auto values = cfmd::perturbation_logprobs(set, p);
    ASSERT_EQ(values.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(values[i], cfmd::loglik_score(p, set.variants[i]).value, 1e-12);
    }
    const double mu = (values[0] + values[1] + values[2]) / 3.0;
    EXPECT_NEAR(cfmd::detectgpt_score(p, set, false).value, -1.5 - mu, 1e-12);
}

TEST(Ensemble, MeanAndMax) {
    const std::vector<DetectionScore> s = {{"i", Method::loglik, "p", 2.0, {}}, {"i", Method::loglik, "q", 4.0, {}}};
    EXPECT_DOUBLE_EQ(cfmd::ensemble_score(s, cfmd::Aggregation::mean).value, 3.0);
    EXPECT_DOUBLE_EQ(cfmd::ensemble_score(s, cfmd::Aggregation::max).value, 4.0);
    EXPECT_EQ(cfmd::ensemble_score(s, cfmd::Aggregation::max).method, Method::ensemble_max);
}

TEST(Ensemble, RepeatedProviderEqualsItsScore) {
    const DetectionScore d{"i", Method::detectgpt_raw, "p", -0.37, {}};
    const std::vector<DetectionScore> s = {d, d};
    EXPECT_DOUBLE_EQ(cfmd::ensemble_score(s, cfmd::Aggregation::mean).value, d.value);
    EXPECT_DOUBLE_EQ(cfmd::ensemble_score(s, cfmd::Aggregation::max).value, d.value);
}

TEST(Ensemble, RejectsMismatchedMembers) {
    const DetectionScore a{"i", Method::loglik, "p", 1.0, {}};
    const std::vector<DetectionScore> items = {a, {"j", Method::loglik, "q", 1.0, {}}};
    const std::vector<DetectionScore> methods = {a, {"i", Method::detectgpt_raw, "q", 1.0, {}}};
    const std::vector<DetectionScore> single = {a};
    EXPECT_THROW(cfmd::ensemble_score(items, cfmd::Aggregation::mean), cfmd::ValidationError);
    EXPECT_THROW(cfmd::ensemble_score(methods, cfmd::Aggregation::mean), cfmd::ValidationError);
    EXPECT_THROW(cfmd::ensemble_score(single, cfmd::Aggregation::mean), cfmd::ValidationError);
}

TEST(ScoresCsv, RoundTrip) {
    const std::vector<DetectionScore> s = {{"a,1", Method::detectgpt_norm, "p", 0.1 + 0.2, 24},
                                           {"b", Method::loglik, "q", -3.25, {}}};
    std::stringstream ss;
    cfmd::write_scores_csv(ss, s, {{"a,1", cfmd::Label::synthetic}, {"b", cfmd::Label::human}});
    const auto back = cfmd::read_scores_csv(ss);
    EXPECT_EQ(back.scores, s);
    EXPECT_EQ(back.labels.at("a,1"), cfmd::Label::synthetic);
}

TEST(Methods, ParseNames) {
    EXPECT_EQ(cfmd::parse_method("detectgpt"), Method::detectgpt_norm);
    EXPECT_EQ(cfmd::parse_method("detectgpt_raw"), Method::detectgpt_raw);
    EXPECT_THROW(cfmd::parse_method("gptzero"), cfmd::ValidationError);
}

}  // namespace
