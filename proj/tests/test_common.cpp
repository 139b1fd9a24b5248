#include <gtest/gtest.h>

#include <array>
#include <set>

#include "cfmd/common.hpp"
#include "cfmd/io.hpp"

namespace {

TEST(Seeds, DeriveSeedIsStableAndStreamSensitive) {
    EXPECT_EQ(cfmd::derive_seed(7, "corpus"), cfmd::derive_seed(7, "corpus"));
    EXPECT_NE(cfmd::derive_seed(7, "corpus"), cfmd::derive_seed(7, "split"));
    EXPECT_NE(cfmd::derive_seed(7, "corpus", 0), cfmd::derive_seed(7, "corpus", 1));
    EXPECT_NE(cfmd::derive_seed(7, "corpus"), cfmd::derive_seed(8, "corpus"));
}

TEST(Seeds, Mt19937_64MatchesReferenceOutput) {
    // 10000th output for the default seed, fixed by the C++ standard.
    std::mt19937_64 rng;
    rng.discard(9999);
    EXPECT_EQ(rng(), 9981545732273789042ULL);
}

TEST(Draws, UniformIndexCoversRangeEvenly) {
    cfmd::Rng rng(3);
    std::array<int, 6> counts{};
    for (int i = 0; i < 60000; ++i) ++counts[cfmd::uniform_index(rng, 6)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Draws, Uniform01InUnitInterval) {
    cfmd::Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        const double u = cfmd::uniform01(rng);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Draws, ShuffleIsAPermutation) {
    cfmd::Rng rng(5);
    std::vector<int> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i;
    cfmd::shuffle(v, rng);
    EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 100u);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_NE(v, sorted);
}

TEST(Draws, SampleWeightedSkipsZeroWeights) {
    cfmd::Rng rng(1);
    const std::vector<double> w = {0.0, 2.0, 0.0, 1.0};
    std::array<int, 4> counts{};
    for (int i = 0; i < 30000; ++i) ++counts[cfmd::sample_weighted(w, 3.0, rng)];
    EXPECT_EQ(counts[0], 0);
    EXPECT_EQ(counts[2], 0);
    EXPECT_NEAR(counts[1] / 30000.0, 2.0 / 3.0, 0.015);
}

TEST(Errors, CategoriesAndLineNumbers) {
    const cfmd::ParseError e(12, "bad field");
    EXPECT_EQ(e.category(), cfmd::ErrorCategory::validation);
    EXPECT_EQ(e.line(), 12u);
    EXPECT_STREQ(e.what(), "line 12: bad field");
    EXPECT_EQ(cfmd::RuntimeError("x").category(), cfmd::ErrorCategory::runtime);
    EXPECT_THROW(cfmd::require(false, "nope"), cfmd::ValidationError);
}

TEST(Io, Sha256KnownVector) {
    EXPECT_EQ(cfmd::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, CsvRoundTripWithQuotes) {
    std::stringstream ss;
    cfmd::write_csv_row(ss, {"a", "b,c", "say \"hi\"", "line\nbreak"});
    std::vector<std::string> row;
    ASSERT_TRUE(cfmd::read_csv_row(ss, row));
    EXPECT_EQ(row, (std::vector<std::string>{"a", "b,c", "say \"hi\"", "line\nbreak"}));
}

TEST(Io, FormatNumberRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 0.7142857142857143, 1e-300}) {
        EXPECT_EQ(std::stod(cfmd::format_number(v)), v);
    }
}

}  // namespace
