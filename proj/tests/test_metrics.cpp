#include <gtest/gtest.h>

#include <sstream>

#include "cfmd/common.hpp"
#include "cfmd/metrics.hpp"
#include "oracles.hpp"

namespace {

using cfmd::Label;
constexpr Label P = Label::synthetic;
constexpr Label N = Label::human;
using cfmd::oracle::pair_count_auroc;

struct Instance {
    std::vector<double> scores;
    std::vector<Label> labels;
};

Instance random_instance(cfmd::Rng& rng, std::size_t n, int levels) {
    Instance x;
    for (std::size_t i = 0; i < n; ++i) {
        x.scores.push_back(static_cast<double>(cfmd::uniform_index(rng, static_cast<std::size_t>(levels))));
        x.labels.push_back(i % 2 ? P : N);
    }
    return x;
}

TEST(Roc, PerfectSeparationPassesThroughTopLeft) {
    const auto c = cfmd::roc_curve(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<Label>{P, P, N, N});
    bool corner = false;
    for (const auto& p : c.points) corner |= p.fpr == 0.0 && p.tpr == 1.0;
    EXPECT_TRUE(corner);
}

TEST(Roc, TotalTieIsTwoEndpoints) {
    const auto c = cfmd::roc_curve(std::vector<double>{1, 1, 1, 1}, std::vector<Label>{P, N, P, N});
    ASSERT_EQ(c.points.size(), 2u);
    EXPECT_EQ(c.points.front().fpr, 0.0);
    EXPECT_EQ(c.points.back().tpr, 1.0);
    EXPECT_DOUBLE_EQ(cfmd::area(c), 0.5);
}

TEST(Roc, EndpointsAndMonotoneOnRandomInstances) {
    cfmd::Rng rng(1);
    for (int k = 0; k < 1000; ++k) {
        const auto x = random_instance(rng, 2 + cfmd::uniform_index(rng, 40), 1 + static_cast<int>(cfmd::uniform_index(rng, 10)));
        const auto c = cfmd::roc_curve(x.scores, x.labels);
        ASSERT_EQ(c.points.front().fpr, 0.0);
        ASSERT_EQ(c.points.front().tpr, 0.0);
        ASSERT_EQ(c.points.back().fpr, 1.0);
        ASSERT_EQ(c.points.back().tpr, 1.0);
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            ASSERT_GE(c.points[i].fpr, c.points[i - 1].fpr);
            ASSERT_GE(c.points[i].tpr, c.points[i - 1].tpr);
        }
    }
}

TEST(Roc, NeedsBothClasses) {
    EXPECT_THROW(cfmd::roc_curve(std::vector<double>{1, 2}, std::vector<Label>{P, P}), cfmd::ValidationError);
}

TEST(Auroc, HandExample) {
    EXPECT_DOUBLE_EQ(cfmd::auroc(std::vector<double>{0.8, 0.4, 0.6, 0.1}, std::vector<Label>{P, P, N, N}), 0.75);
    EXPECT_DOUBLE_EQ(cfmd::auroc(std::vector<double>{3, 4, 1, 2}, std::vector<Label>{P, P, N, N}), 1.0);
}

TEST(Auroc, MatchesPairCountWithTies) {
    cfmd::Rng rng(2);
    for (int k = 0; k < 300; ++k) {
        const auto x = random_instance(rng, 2 + cfmd::uniform_index(rng, 60), 1 + static_cast<int>(cfmd::uniform_index(rng, 8)));
        EXPECT_NEAR(cfmd::auroc(x.scores, x.labels), pair_count_auroc(x.scores, x.labels), 1e-12);
    }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
    cfmd::Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        auto x = random_instance(rng, 50, 20);
        const double before = cfmd::auroc(x.scores, x.labels);
        for (double& s : x.scores) s = std::exp(0.3 * s) - 7.0;
        EXPECT_NEAR(cfmd::auroc(x.scores, x.labels), before, 1e-12);
    }
}

TEST(Auroc, CoinFlipLabelsGiveHalf) {
    cfmd::Rng rng(4);
    std::vector<double> s;
    std::vector<Label> l;
    for (int i = 0; i < 10000; ++i) {
        s.push_back(cfmd::uniform01(rng));
        l.push_back(cfmd::uniform01(rng) < 0.5 ? P : N);
    }
    EXPECT_NEAR(cfmd::auroc(s, l), 0.5, 0.02);
}

TEST(MedianThreshold, SeparatedAndInverted) {
    const auto m = cfmd::median_threshold_accuracy(std::vector<double>{4, 3, 1, 2}, std::vector<Label>{P, P, N, N});
    EXPECT_DOUBLE_EQ(m.threshold, 2.5);
    EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(cfmd::median_threshold_accuracy(std::vector<double>{1, 2, 4, 3}, std::vector<Label>{P, P, N, N}).accuracy, 0.0);
}

TEST(ThresholdAccuracy, ExtremesOnBalancedSet) {
    const std::vector<double> s = {0.2, 0.4, 0.6, 0.8};
    const std::vector<Label> l = {P, N, P, N};
    EXPECT_DOUBLE_EQ(cfmd::accuracy_at_threshold(s, l, -1.0), 0.5);
    EXPECT_DOUBLE_EQ(cfmd::accuracy_at_threshold(s, l, 2.0), 0.5);
}

TEST(ThresholdAccuracy, MatchesConfusionMatrixRecount) {
    cfmd::Rng rng(5);
    for (int k = 0; k < 100; ++k) {
        const auto x = random_instance(rng, 1 + cfmd::uniform_index(rng, 50), 10);
        const double t = static_cast<double>(cfmd::uniform_index(rng, 10)) + 0.5 * static_cast<double>(cfmd::uniform_index(rng, 2));
        int tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < x.scores.size(); ++i) {
            const bool predicted = x.scores[i] > t;
            const bool actual = x.labels[i] == P;
            (predicted ? (actual ? tp : fp) : (actual ? fn : tn))++;
        }
        EXPECT_DOUBLE_EQ(cfmd::accuracy_at_threshold(x.scores, x.labels, t),
                         static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn));
    }
}

TEST(Median, OddAndEven) {
    EXPECT_DOUBLE_EQ(cfmd::median({3, 1, 2}), 2.0);
    EXPECT_DOUBLE_EQ(cfmd::median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(cfmd::median({}), cfmd::ValidationError);
}

TEST(EvaluateScores, GroupsByMethodAndProvider) {
    using cfmd::DetectionScore;
    using cfmd::Method;
    const std::vector<DetectionScore> s = {{"a", Method::loglik, "p", 1, {}}, {"b", Method::loglik, "p", 0, {}},
                                           {"a", Method::loglik, "q", 0, {}}, {"b", Method::loglik, "q", 1, {}}};
    const auto reports = cfmd::evaluate_scores(s, {{"a", P}, {"b", N}});
    ASSERT_EQ(reports.size(), 2u);
    EXPECT_EQ(reports[0].provider_id, "p");
    EXPECT_DOUBLE_EQ(reports[0].auroc, 1.0);
    EXPECT_DOUBLE_EQ(reports[1].auroc, 0.0);
}

TEST(RocCsv, RoundTrip) {
    const auto c = cfmd::roc_curve(std::vector<double>{0.3, 0.1, 0.2, 0.7}, std::vector<Label>{P, N, N, P});
    std::stringstream ss;
    cfmd::write_roc_csv(ss, c);
    const auto back = cfmd::read_roc_csv(ss);
    ASSERT_EQ(back.points.size(), c.points.size());
    EXPECT_DOUBLE_EQ(cfmd::area(back), cfmd::area(c));
}

}  // namespace
