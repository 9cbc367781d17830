// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace ldag;
using namespace ldag::testing;

namespace {

/// A 4×4 mask from a 16-character string of '0'/'1'.
Mask grid(const std::string& s) {
    Mask m(4, 4);
    for (std::size_t i = 0; i < 16; ++i) m.bits[i] = s.at(i) == '1' ? 1 : 0;
    return m;
}

struct IouCase {
    const char* pred;
    const char* gt;
    double expected;  // hand-counted intersection / union
};

const IouCase kCases[] = {
    {"1111000000000000", "1111000000000000", 1.0},
    {"1111000000000000", "0000111100000000", 0.0},
    {"1111000000000000", "0011110000000000", 2.0 / 6.0},
    {"1000000000000000", "1100000000000000", 1.0 / 2.0},
    {"1111111111111111", "1000000000000000", 1.0 / 16.0},
    {"1111111111111111", "1111111111111111", 1.0},
    {"0000000000000000", "0000000000000000", 1.0},
    {"0000000000000000", "0100000000000000", 0.0},
    {"1100110000000000", "0110011000000000", 2.0 / 6.0},
    {"1110111011100000", "1100110000000000", 4.0 / 9.0},
    {"1010101010101010", "0101010101010101", 0.0},
    {"1010101010101010", "1111111100000000", 4.0 / 12.0},
    {"1111111100000000", "1111000011110000", 4.0 / 12.0},
    {"0000000000001111", "0000000000000011", 2.0 / 4.0},
    {"1000010000100001", "1000000000000001", 2.0 / 4.0},
    {"1100110000110011", "1111111100000000", 4.0 / 12.0},
    {"0110100110010110", "0110100110010110", 1.0},
    {"1110000000000000", "0111000000000000", 2.0 / 4.0},
    {"1111100000000000", "0000111110000000", 1.0 / 9.0},
    {"0000000011111111", "0000000000111111", 6.0 / 8.0},
};

EpisodeResult result(const std::string& cls, std::size_t fold, double fg, double bg = 0.5) {
    return {cls + "-ep", cls, fold, fg, bg};
}

}  // namespace

TEST(Iou, HandCountedPairs) {
    for (const auto& c : kCases) {
        EXPECT_NEAR(iou(grid(c.pred), grid(c.gt)), c.expected, 1e-15) << c.pred << " vs " << c.gt;
    }
}

TEST(Iou, SymmetricOnAllPairs) {
    for (const auto& a : kCases)
        for (const auto& b : kCases) EXPECT_EQ(iou(grid(a.pred), grid(b.gt)), iou(grid(b.gt), grid(a.pred)));
}

TEST(Iou, SelfIsOneAndValuesInUnitRange) {
    for (const auto& a : kCases) {
        EXPECT_EQ(iou(grid(a.pred), grid(a.pred)), 1.0);
        for (const auto& b : kCases) {
            const double v = iou(grid(a.pred), grid(b.gt));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Iou, EmptyConventions) {
    EXPECT_EQ(iou(Mask(3, 3), Mask(3, 3)), 1.0);
    EXPECT_EQ(iou(Mask(3, 3), mask_from(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0})), 0.0);
    EXPECT_EQ(iou(mask_from(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0}), Mask(3, 3)), 0.0);
}

TEST(Iou, ExtentMismatchThrows) { EXPECT_THROW(iou(Mask(4, 4), Mask(4, 5)), DimensionError); }

TEST(EpisodeResult, ScoresForegroundAndBackground) {
    const auto r = EpisodeResult::score("e", "c", 1, grid(kCases[2].pred), grid(kCases[2].gt));
    EXPECT_NEAR(r.fg_iou, 2.0 / 6.0, 1e-15);
    // Backgrounds: 12 and 12 pixels, 10 shared, 14 in the union.
    EXPECT_NEAR(r.bg_iou, 10.0 / 14.0, 1e-15);
    EXPECT_EQ(r.fold, 1u);
}

TEST(Aggregate, SingleEpisode) {
    const auto r = aggregate({result("a", 0, 0.8)});
    EXPECT_DOUBLE_EQ(r.miou(), 0.8);
    EXPECT_DOUBLE_EQ(r.per_class_iou.at("a"), 0.8);
    EXPECT_EQ(r.episode_count, 1u);
}

TEST(Aggregate, ClassBalancedRegardlessOfEpisodeCounts) {
    std::vector<EpisodeResult> rs;
    rs.push_back(result("a", 0, 1.0));
    for (int i = 0; i < 9; ++i) rs.push_back(result("b", 0, 0.0));
    const auto r = aggregate(rs);
    EXPECT_DOUBLE_EQ(r.miou(), 0.5);
    EXPECT_EQ(r.episode_count, 10u);
    // Swapping which class is over-represented leaves the mean unchanged.
    std::vector<EpisodeResult> swapped;
    for (int i = 0; i < 9; ++i) swapped.push_back(result("a", 0, 1.0));
    swapped.push_back(result("b", 0, 0.0));
    EXPECT_DOUBLE_EQ(aggregate(swapped).miou(), 0.5);
}

TEST(Aggregate, FbIouPerfectAndMixed) {
    EXPECT_DOUBLE_EQ(aggregate({result("a", 0, 1.0, 1.0), result("b", 0, 1.0, 1.0)}).fbiou, 1.0);
    // Mean fg 0.4, mean bg 0.8, ignoring class.
    const auto r = aggregate({result("a", 0, 0.2, 0.6), result("a", 0, 0.6, 1.0), result("b", 0, 0.4, 0.8)});
    EXPECT_NEAR(r.fbiou, (0.4 + 0.8) / 2, 1e-15);
}

TEST(Aggregate, FoldsAreAveragedSeparately) {
    const auto r = aggregate({result("a", 0, 0.2), result("b", 0, 0.4), result("c", 1, 0.9), result("d", 1, 0.7)});
    ASSERT_EQ(r.per_fold_miou.size(), 2u);
    EXPECT_NEAR(r.per_fold_miou.at(0), 0.3, 1e-15);
    EXPECT_NEAR(r.per_fold_miou.at(1), 0.8, 1e-15);
    EXPECT_NEAR(r.miou(), 0.55, 1e-15);
}

TEST(Aggregate, EmptyRejected) { EXPECT_THROW(aggregate({}), ContractError); }

TEST(Report, JsonCarriesFieldsAndConfigEcho) {
    const auto r = aggregate({result("a", 2, 0.25), result("b", 2, 0.75)}, {{"alpha", 0.5}});
    const auto j = r.to_json();
    EXPECT_DOUBLE_EQ(j.at("miou").get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(j.at("per_fold_miou").at("2").get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(j.at("per_class_iou").at("b").get<double>(), 0.75);
    EXPECT_EQ(j.at("episode_count"), 2);
    EXPECT_EQ(j.at("config").at("alpha"), 0.5);
    EXPECT_TRUE(j.contains("fbiou"));
}

TEST(Report, TotalsRecomputableFromCsvRows) {
    std::vector<EpisodeResult> rs;
    SplitMix64 rng(5);
    const char* classes[] = {"red square", "blue circle", "green triangle"};
    for (int i = 0; i < 30; ++i) {
        const std::size_t c = std::size_t(rng.uniform_int(0, 2));
        rs.push_back({"ep" + std::to_string(i), classes[c], c == 2 ? 1u : 0u, rng.uniform(), rng.uniform()});
    }
    const auto report = aggregate(rs);
    std::istringstream csv(report.to_csv());
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "episode_id,class,fold,fg_iou,bg_iou");
    std::vector<EpisodeResult> parsed;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::string id, cls, fold, fg, bg;
        std::getline(row, id, ',');
        std::getline(row, cls, ',');
        std::getline(row, fold, ',');
        std::getline(row, fg, ',');
        std::getline(row, bg, ',');
        parsed.push_back({id, cls, std::stoul(fold), std::stod(fg), std::stod(bg)});
    }
    ASSERT_EQ(parsed.size(), rs.size());
    const auto again = aggregate(parsed);
    EXPECT_EQ(again.per_class_iou, report.per_class_iou);
    EXPECT_EQ(again.per_fold_miou, report.per_fold_miou);
    EXPECT_EQ(again.fbiou, report.fbiou);
}
