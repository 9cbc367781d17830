// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace ldag;
using namespace ldag::testing;

namespace {

/// Bank with foreground e1 (plus extras) and background e2 in R^dim.
TextBank<double> axis_bank(std::size_t dim, std::size_t extra = 0) {
    TextBank<double> bank;
    Tensor<double> f({dim});
    f[0] = 1;
    bank.foreground.push_back(f);
    for (std::size_t k = 0; k < extra; ++k) bank.foreground.push_back(random_tensor<double>({dim}, 90 + k));
    bank.background = Tensor<double>({dim});
    bank.background[1] = 1;
    return bank;
}

/// Tokens whose spatial mean is `pooled`, with per-pixel spread.
Tensor<double> tokens_with_mean(const std::vector<double>& pooled, std::size_t h, std::size_t w, std::uint64_t seed) {
    const std::size_t c = pooled.size(), hw = h * w;
    auto t = random_tensor<double>({c, h, w}, seed, 0.3);
    for (std::size_t m = 0; m < c; ++m) {
        double mean = 0;
        for (std::size_t p = 0; p < hw; ++p) mean += t.data[m * hw + p];
        mean /= double(hw);
        for (std::size_t p = 0; p < hw; ++p) t.data[m * hw + p] += pooled[m] - mean;
    }
    return t;
}

}  // namespace

TEST(Scores, AlignedForegroundOrthogonalBackground) {
    const auto tokens = tokens_with_mean({1, 0, 0}, 2, 2, 1);
    const auto s = compute_scores(tokens, axis_bank(3), 1.0);
    ASSERT_EQ(s.foreground.size(), 1u);
    EXPECT_NEAR(s.foreground[0], 1.0, 1e-12);
    EXPECT_NEAR(s.background, 0.0, 1e-12);
    EXPECT_NEAR(s.softmaxed[0].first, std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-12);
    EXPECT_NEAR(s.softmaxed[0].first, 0.7310586, 1e-7);
}

TEST(Scores, EqualScoresGiveHalfHalf) {
    const auto tokens = tokens_with_mean({1, 1, 0}, 2, 2, 2);
    const auto s = compute_scores(tokens, axis_bank(3), 1.0);
    EXPECT_NEAR(s.softmaxed[0].first, 0.5, 1e-12);
    EXPECT_NEAR(s.softmaxed[0].second, 0.5, 1e-12);
}

TEST(Scores, PairsSumToOneAndLieInOpenInterval) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto tokens = random_tensor<double>({6, 3, 3}, seed);
        const auto s = compute_scores(tokens, axis_bank(6, 5), 0.7);
        ASSERT_EQ(s.softmaxed.size(), 6u);
        for (const auto& [f, b] : s.softmaxed) {
            EXPECT_NEAR(f + b, 1.0, 1e-6);
            EXPECT_GT(f, 0.0);
            EXPECT_LT(f, 1.0);
        }
    }
}

TEST(Scores, TemperatureScalesScoresAndKeepsArgmax) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto tokens = random_tensor<double>({6, 2, 2}, seed + 30);
        const auto bank = axis_bank(6, 4);
        const auto base = compute_scores(tokens, bank, 1.0);
        for (double tau : {0.5, 2.0}) {
            const auto s = compute_scores(tokens, bank, tau);
            for (std::size_t i = 0; i < base.foreground.size(); ++i) {
                EXPECT_NEAR(s.foreground[i], base.foreground[i] / tau, 1e-12);
                EXPECT_EQ(s.softmaxed[i].first > 0.5, base.softmaxed[i].first > 0.5);
            }
            EXPECT_NEAR(s.background, base.background / tau, 1e-12);
        }
    }
}

TEST(Scores, JointModeSumsToOneOverAllScores) {
    const auto tokens = random_tensor<double>({6, 2, 2}, 7);
    const auto s = compute_scores(tokens, axis_bank(6, 3), 1.0, ScoreSoftmax::joint);
    double total = s.softmaxed[0].second;
    for (const auto& [f, b] : s.softmaxed) total += f;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Scores, ZeroPooledVectorIsDegenerate) {
    Tensor<double> tokens({3, 2, 2});
    EXPECT_THROW(compute_scores(tokens, axis_bank(3), 1.0), DegenerateInputError);
    EXPECT_THROW(compute_scores(random_tensor<double>({3, 2, 2}, 1), axis_bank(3), 0.0), ContractError);
}

TEST(GradCam, GradientMatchesFiniteDifferencesOnTwoChannelGrid) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = random_tensor<float>({2, 2, 2}, 500 + seed);
        TextBank<double> bank64;
        bank64.foreground = {random_tensor<double>({2}, 600 + seed), random_tensor<double>({2}, 700 + seed)};
        bank64.background = random_tensor<double>({2}, 800 + seed);
        TextBank<float> bank32;
        for (const auto& f : bank64.foreground) bank32.foreground.push_back(f.cast<float>());
        bank32.background = bank64.background.cast<float>();
        for (std::size_t i = 0; i < 2; ++i) {
            const auto analytic = to_double(score_gradient(x, bank32, 1.0f, i));
            const auto f = [&](const Tensor<double>& t) {
                ad::Graph<double> g;
                return g.value(foreground_probability(g, g.constant(t), bank64, 1.0, i)).item();
            };
            const auto numeric = central_differences(f, x.cast<double>(), all_elements(8), 1e-3);
            EXPECT_LE(worst_ratio(analytic, numeric, 1e-4, 1e-8), 1.0) << "seed " << seed << " i " << i;
        }
    }
}

TEST(GradCam, SingleChannelConstantMapIsScaledMap) {
    const auto tokens = Tensor<double>::filled({1, 3, 3}, 2.0);
    const auto map = weighted_activation(tokens, std::vector<double>{0.5});
    EXPECT_EQ(map.shape, (Shape{3, 3}));
    for (double v : map.data) EXPECT_EQ(v, 1.0);
    EXPECT_THROW(weighted_activation(tokens, std::vector<double>{0.5, 1.0}), DimensionError);
}

TEST(GradCam, SingleChannelScoreGradientIsZero) {
    // The cosine of two 1-vectors is a sign, so its derivative vanishes and
    // every weight is zero: the map is flagged saturated and left at zero.
    TextBank<double> bank;
    bank.foreground = {Tensor<double>({1}, {1.0})};
    bank.background = Tensor<double>({1}, {-1.0});
    const auto cam = gradcam_prior(Tensor<double>::filled({1, 3, 3}, 2.0), bank, 1.0, 0);
    EXPECT_TRUE(cam.saturated);
    for (double v : cam.map.data) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, TwoChannelConstantMapIsPositiveEverywhere) {
    TextBank<double> bank;
    bank.foreground = {Tensor<double>({2}, {1.0, 0.0})};
    bank.background = Tensor<double>({2}, {0.0, 1.0});
    Tensor<double> tokens({2, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) {
        tokens.data[p] = 1.0;      // channel 0
        tokens.data[4 + p] = 1.0;  // channel 1
    }
    tokens.data[0] = 3.0;  // raise channel 0 at one pixel
    const auto cam = gradcam_prior(tokens, bank, 1.0, 0);
    ASSERT_FALSE(cam.saturated);
    EXPECT_GT(cam.weights[0], 0.0);
    EXPECT_LT(cam.weights[1], 0.0);
    for (std::size_t p = 0; p < 4; ++p) {
        const double expected = std::max(0.0, cam.weights[0] * tokens.data[p] + cam.weights[1] * tokens.data[4 + p]);
        EXPECT_NEAR(cam.map.data[p], expected, 1e-12);
    }
    EXPECT_GT(cam.map.data[0], cam.map.data[1]);
}

TEST(GradCam, NegativeActivationIsClampedToZero) {
    TextBank<double> bank;
    bank.foreground = {Tensor<double>({2}, {1.0, 0.0})};
    bank.background = Tensor<double>({2}, {0.0, 1.0});
    Tensor<double> tokens({2, 1, 2}, {2.0, -1.0, 0.5, 0.5});
    const auto cam = gradcam_prior(tokens, bank, 1.0, 0);
    EXPECT_GT(cam.map.data[0], 0.0);
    EXPECT_EQ(cam.map.data[1], 0.0);
}

TEST(GradCam, WeightsAreSpatialMeanOfScoreGradient) {
    const auto tokens = random_tensor<double>({4, 3, 2}, 12);
    const auto bank = axis_bank(4, 2);
    const auto grad = score_gradient(tokens, bank, 1.0, 1);
    const auto cam = gradcam_prior(tokens, bank, 1.0, 1);
    for (std::size_t m = 0; m < 4; ++m) {
        double s = 0;
        for (std::size_t p = 0; p < 6; ++p) s += grad.data[m * 6 + p];
        EXPECT_NEAR(cam.weights[m], s / 6.0, 1e-15);
    }
}

TEST(Refine, ConstantMapBecomesZeros) {
    const auto stack = refine_prior<double>({Tensor<double>::filled({2, 2}, 3.0)}, 2, 2);
    for (double v : stack.maps.data) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(stack.ranges[0], (std::pair<double, double>{3.0, 3.0}));
}

TEST(Refine, LinearRescaleAndIdentityResize) {
    const auto stack = refine_prior<double>({Tensor<double>({2, 2}, {0, 2, 4, 8})}, 2, 2);
    EXPECT_EQ(stack.maps.data, (std::vector<double>{0, 0.25, 0.5, 1}));
    EXPECT_EQ(stack.maps.shape, (Shape{1, 2, 2}));
}

TEST(Refine, ResizeUsesBilinearValues) {
    const auto stack = refine_prior<double>({Tensor<double>({2, 2}, {0, 1.0 / 3, 2.0 / 3, 1})}, 4, 4);
    EXPECT_NEAR(stack.maps.data[5], 0.25, 1e-12);
    EXPECT_NEAR(stack.maps.data[0], 0.0, 1e-12);
    EXPECT_NEAR(stack.maps.data[15], 1.0, 1e-12);
}

TEST(Refine, ValuesStayInUnitInterval) {
    std::vector<Tensor<float>> raw;
    for (std::uint64_t s = 0; s < 5; ++s) raw.push_back(random_tensor<float>({8, 8}, s, 10.0));
    const auto stack = refine_prior(raw, 13, 7);
    EXPECT_EQ(stack.count(), 5u);
    for (float v : stack.maps.data) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(PriorStack, HasNPlusOneMapsForEveryN) {
    ToyProviders p(7);
    SceneRenderer renderer(p);
    const auto specs = synthetic_classes();
    auto library = fixture_library(p);
    const auto scene = renderer.render(specs[0], 3);
    const auto clip = p.encode_clip(scene.image);
    for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 10u}) {
        const auto result = build_prior_stack<float>(clip, library.get(specs[0].name, n), 1.0f, 8, 8);
        EXPECT_EQ(result.stack.count(), n + 1);
        EXPECT_EQ(result.raw.size(), n + 1);
        for (const auto& m : result.raw)
            for (float v : m.data) EXPECT_GE(v, 0.0f);
    }
}

TEST(PriorStack, MassConcentratesOnTargetRegion) {
    ToyProviders p(7);
    SceneRenderer renderer(p);
    const auto specs = synthetic_classes();
    auto library = fixture_library(p);
    std::size_t wins = 0, total = 0;
    for (const auto& spec : specs) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto scene = renderer.render(spec, seed);
            const auto result = build_prior_stack<float>(p.encode_clip(scene.image), library.get(spec.name, 5), 1.0f,
                                                         64, 64);
            double in = 0, out = 0;
            std::size_t nin = 0, nout = 0;
            for (std::size_t k = 0; k < result.stack.count(); ++k) {
                for (std::size_t i = 0; i < 64 * 64; ++i) {
                    const double v = result.stack.maps.data[k * 64 * 64 + i];
                    if (scene.mask.bits[i]) {
                        in += v;
                        ++nin;
                    } else {
                        out += v;
                        ++nout;
                    }
                }
            }
            ++total;
            if (in / double(nin) > out / double(nout)) ++wins;
        }
    }
    EXPECT_EQ(wins, total);
}
