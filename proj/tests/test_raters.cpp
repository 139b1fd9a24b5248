#include <gtest/gtest.h>

#include <sstream>

#include "cfmd/common.hpp"
#include "cfmd/raters.hpp"

namespace {

using cfmd::Label;
using cfmd::RatedItem;
using cfmd::RatingMatrix;

RatingMatrix matrix(std::vector<RatedItem> items) {
    RatingMatrix m;
    m.raters_per_item = items.front().ratings.size();
    m.items = std::move(items);
    return m;
}

TEST(Ratings, CsvLoadsItemsByRaters) {
    std::string csv = "item_id,label,survey_id,rating\n";
    std::size_t rows = 0;
    for (int i = 0; i < 400; ++i) {
        for (int r = 0; r < 5; ++r) {
            csv += "it" + std::to_string(i) + "," + (i % 2 ? "synthetic" : "human") + ",s1," + std::to_string(1 + (i + r) % 5) + "\n";
            ++rows;
        }
    }
    std::istringstream in(csv);
    const auto m = cfmd::read_ratings_csv(in);
    EXPECT_EQ(m.items.size(), 400u);
    EXPECT_EQ(m.raters_per_item, 5u);
    EXPECT_EQ(m.rating_count(), rows);
}

TEST(Ratings, OutOfScaleRejected) {
    std::istringstream in("item_id,label,survey_id,rating\na,human,s,3\na,human,s,6\n");
    try {
        cfmd::read_ratings_csv(in);
        FAIL();
    } catch (const cfmd::ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(Ratings, JsonlArraysAndNonUniformCounts) {
    std::istringstream ok(R"({"item_id":"a","label":"human","survey_id":"s","ratings":[1,2,3]})" "\n"
                          R"({"item_id":"b","label":"synthetic","survey_id":"s","ratings":[5,4,4]})" "\n");
    EXPECT_EQ(cfmd::read_ratings_jsonl(ok).raters_per_item, 3u);
    std::istringstream bad(R"({"item_id":"a","label":"human","survey_id":"s","ratings":[1,2,3]})" "\n"
                           R"({"item_id":"b","label":"human","survey_id":"s","ratings":[1,2]})" "\n");
    EXPECT_THROW(cfmd::read_ratings_jsonl(bad), cfmd::ValidationError);
}

TEST(Accuracy, FixedThresholdExamples) {
    const auto m = matrix({{"s1", Label::synthetic, "x", {5, 5, 4, 4, 3}}, {"h1", Label::human, "x", {1, 1, 1, 1, 1}}});
    EXPECT_DOUBLE_EQ(m.items[0].mean_rating(), 4.2);
    EXPECT_DOUBLE_EQ(cfmd::binary_accuracy(m, cfmd::ThresholdMode::fixed_3), 1.0);
}

TEST(Accuracy, ScaledThresholdUsesSurveyMean) {
    // Every mean is above 3, but the survey mean (3.75) still separates them.
    const auto m = matrix({{"s1", Label::synthetic, "x", {5, 4}}, {"h1", Label::human, "x", {3, 4}}});
    EXPECT_DOUBLE_EQ(cfmd::binary_accuracy(m, cfmd::ThresholdMode::fixed_3), 0.5);
    EXPECT_DOUBLE_EQ(cfmd::binary_accuracy(m, cfmd::ThresholdMode::scaled_mean), 1.0);
}

TEST(Kappa, PerfectAgreement) {
    const auto m = matrix({{"a", Label::human, "x", {1, 1, 1}}, {"b", Label::human, "x", {4, 4, 4}}, {"c", Label::human, "x", {2, 2, 2}}});
    EXPECT_DOUBLE_EQ(cfmd::fleiss_kappa(m), 1.0);
}

TEST(Kappa, HandComputedNegative) {
    // Category counts (3,0) and (2,1): P_bar = 2/3, P_e = 13/18.
    const auto m = matrix({{"a", Label::human, "x", {1, 1, 1}}, {"b", Label::human, "x", {1, 1, 2}}});
    EXPECT_NEAR(cfmd::fleiss_kappa(m, 2), -0.2, 1e-12);
}

TEST(Kappa, IndependentRandomRatingsNearZero) {
    cfmd::Rng rng(7);
    std::vector<RatedItem> items;
    for (int i = 0; i < 10000; ++i) {
        RatedItem it{"i" + std::to_string(i), Label::human, "x", {}};
        for (int r = 0; r < 5; ++r) it.ratings.push_back(1 + static_cast<int>(cfmd::uniform_index(rng, 5)));
        items.push_back(std::move(it));
    }
    EXPECT_NEAR(cfmd::fleiss_kappa(matrix(std::move(items))), 0.0, 0.02);
}

TEST(Kappa, UndefinedWhenOneCategory) {
    const auto m = matrix({{"a", Label::human, "x", {3, 3}}, {"b", Label::human, "x", {3, 3}}});
    EXPECT_THROW(cfmd::fleiss_kappa(m), cfmd::RuntimeError);
}

TEST(Surveys, SummarizedSeparately) {
    const auto m = matrix({{"a", Label::synthetic, "s1", {5, 5}}, {"b", Label::human, "s1", {1, 2}},
                           {"c", Label::synthetic, "s2", {1, 1}}, {"d", Label::human, "s2", {5, 4}}});
    const auto s = cfmd::summarize_surveys(m);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].survey_id, "s1");
    EXPECT_DOUBLE_EQ(s[0].accuracy_fixed_3, 1.0);
    EXPECT_DOUBLE_EQ(s[1].accuracy_fixed_3, 0.0);
    EXPECT_EQ(cfmd::to_json(s).at("surveys").size(), 2u);
}

}  // namespace
