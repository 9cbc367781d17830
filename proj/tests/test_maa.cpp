// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace ldag;
using namespace ldag::testing;

namespace {

/// Per-pixel accumulation over the full-resolution mask with explicit
/// nearest-neighbour lookup, independent of map_prototypes().
std::pair<std::vector<double>, std::vector<double>> brute_force_prototypes(const Tensor<double>& f, const Mask& mask) {
    const std::size_t c = f.shape[0], h = f.shape[1], w = f.shape[2];
    std::vector<double> fg(c, 0), bg(c, 0);
    double nf = 0, nb = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sy = (2 * y + 1) * mask.height / (2 * h);
            const std::size_t sx = (2 * x + 1) * mask.width / (2 * w);
            const bool on = mask.bits[sy * mask.width + sx] != 0;
            for (std::size_t m = 0; m < c; ++m) (on ? fg : bg)[m] += f.at(m, y, x);
            (on ? nf : nb) += 1;
        }
    }
    for (auto& v : fg) v /= nf;
    for (auto& v : bg) v /= nb;
    return {fg, bg};
}

Mask random_mask(std::size_t h, std::size_t w, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Mask m(h, w);
    for (auto& b : m.bits) b = rng.uniform() < 0.4 ? 1 : 0;
    return m;
}

}  // namespace

TEST(Downsample, NearestCentreSampling) {
    // 4×4 mask with a single foreground pixel at (1,1), downsampled to 2×2:
    // cell (0,0) samples source (1,1).
    Mask m(4, 4);
    m.at(1, 1) = 1;
    const auto small = downsample_mask<float>(m, 2, 2);
    EXPECT_EQ(small.data, (std::vector<float>{1, 0, 0, 0}));
    m = Mask(4, 4);
    m.at(0, 0) = 1;
    EXPECT_EQ(downsample_mask<float>(m, 2, 2).data, (std::vector<float>{0, 0, 0, 0}));
}

TEST(Downsample, SameSizeIsIdentity) {
    const auto m = random_mask(8, 8, 3);
    const auto small = downsample_mask<double>(m, 8, 8);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(small.data[i], double(m.bits[i]));
}

TEST(Prototypes, TwoPixelMapPicksForegroundPixel) {
    Tensor<double> f({3, 1, 2}, {1, 2, 3, 4, 5, 6});
    const auto p = map_prototypes(f, Tensor<double>({1, 2}, {1, 0}));
    EXPECT_EQ(p.foreground.data, (std::vector<double>{1, 3, 5}));
    EXPECT_EQ(p.background.data, (std::vector<double>{2, 4, 6}));
    EXPECT_EQ(p.fg_pixel_count, 1u);
}

TEST(Prototypes, ConstantMapGivesEqualPrototypes) {
    Tensor<double> f({2, 2, 2}, {3, 3, 3, 3, -1, -1, -1, -1});
    const auto p = map_prototypes(f, Tensor<double>({2, 2}, {1, 0, 0, 1}));
    EXPECT_EQ(p.foreground.data, p.background.data);
    EXPECT_EQ(p.foreground.data, (std::vector<double>{3, -1}));
}

TEST(Prototypes, MatchesBruteForceOracle) {
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; checked < 50; ++seed) {
        const auto f = random_tensor<double>({16, 8, 8}, seed);
        const auto mask = random_mask(64, 64, 1000 + seed);
        if (!mask_is_two_class(mask, 8, 8)) continue;
        SamEncoding sam;
        sam.features.values = f.cast<float>();
        const auto p = map_prototypes<double>(sam, mask);
        const auto [fg, bg] = brute_force_prototypes(f.cast<float>().cast<double>(), mask);
        for (std::size_t m = 0; m < 16; ++m) {
            EXPECT_NEAR(p.foreground[m], fg[m], 1e-6);
            EXPECT_NEAR(p.background[m], bg[m], 1e-6);
        }
        ++checked;
    }
}

TEST(Prototypes, SingleClassMaskIsDegenerate) {
    const auto f = random_tensor<double>({4, 2, 2}, 1);
    EXPECT_THROW(map_prototypes(f, Tensor<double>::filled({2, 2}, 1.0)), DegenerateEpisodeError);
    EXPECT_THROW(map_prototypes(f, Tensor<double>({2, 2})), DegenerateEpisodeError);
    EXPECT_THROW(map_prototypes(f, Tensor<double>({2, 3})), DimensionError);
}

TEST(Projection, OutputWidthAndRange) {
    const auto params = ModelParameters<double>::initialize(6, 4, 3, 11);
    ad::Graph<double> g;
    const auto b = bind(g, params);
    const auto v = project_attribute(g, b, 2, g.constant(random_tensor<double>({6}, 1)));
    EXPECT_EQ(g.shape(v), (Shape{4}));
    EXPECT_THROW(project_attribute(g, b, 3, g.constant(random_tensor<double>({6}, 1))), ContractError);
    EXPECT_THROW(project_attributes(g, b, {random_tensor<double>({6}, 1)}), ContractError);
}

TEST(Projection, ZeroOutputLayerGivesZeroVector) {
    auto params = ModelParameters<double>::initialize(6, 4, 2, 11);
    params.get("mlp.1.w2") = Tensor<double>({4, 6});
    ad::Graph<double> g;
    const auto b = bind(g, params);
    const auto v = project_attribute(g, b, 1, g.constant(random_tensor<double>({6}, 2)));
    for (double x : g.value(v).data) EXPECT_EQ(x, 0.0);
}

TEST(Projection, GradientMatchesFiniteDifferencesPerTensor) {
    const auto params = ModelParameters<double>::initialize(5, 3, 2, 21);
    const auto emb = random_tensor<double>({5}, 4);
    const auto weights = random_tensor<double>({3}, 5);
    for (const std::string name : {"mlp.0.w1", "mlp.0.b1", "mlp.0.w2", "mlp.0.b2"}) {
        auto loss_at = [&](const ModelParameters<double>& p, std::vector<Tensor<double>>* grads) {
            ad::Graph<double> g;
            const auto b = bind(g, p);
            const auto y = project_attribute(g, b, 0, g.constant(emb));
            const auto l = ad::sum(g, ad::mul(g, y, g.constant(weights)));
            if (grads) {
                g.backward(l);
                *grads = collect_gradients(g, b);
            }
            return g.value(l).item();
        };
        std::vector<Tensor<double>> grads;
        loss_at(params, &grads);
        const std::size_t k = params.index_of(name);
        auto f = [&](const Tensor<double>& t) {
            auto p = params;
            p.get(name) = t;
            return loss_at(p, nullptr);
        };
        const auto numeric = central_differences(f, params.get(name), all_elements(params.get(name).size()), 1e-6);
        EXPECT_LE(worst_ratio(to_double(grads[k]), numeric, 1e-6, 1e-8), 1.0) << name;
        // MLP_1 is not reached by MLP_0's output.
        for (double v : grads[params.index_of("mlp.1.w1")].data) EXPECT_EQ(v, 0.0);
    }
}

TEST(Projection, HeadsDifferAfterATrainingStep) {
    auto params = ModelParameters<double>::initialize(6, 4, 2, 3);
    const auto emb = random_tensor<double>({6}, 12);
    ad::Graph<double> g;
    const auto b = bind(g, params);
    const auto pf = g.constant(random_tensor<double>({4}, 9));
    const auto pb = g.constant(random_tensor<double>({4}, 10));
    const auto projected = project_attributes(g, b, {emb, emb});
    g.backward(infonce(g, pf, pb, projected, 1.0));
    AdamState state;
    adam_step(params, collect_gradients(g, b), state, 1e-2);
    ad::Graph<double> h;
    const auto b2 = bind(h, params);
    const auto y0 = h.value(project_attribute(h, b2, 0, h.constant(emb)));
    const auto y1 = h.value(project_attribute(h, b2, 1, h.constant(emb)));
    EXPECT_FALSE(y0 == y1);
}

TEST(InfoNce, SymmetricLogitsGiveLnTwo) {
    ad::Graph<double> g;
    const auto pf = g.constant(Tensor<double>({3}, {1, 0, 0}));
    const auto pb = g.constant(Tensor<double>({3}, {1, 1, 0}));
    // Each projected vector has the same cosine to pf as pb does.
    const auto a = g.constant(Tensor<double>({3}, {1, 0, 1}));
    const auto c = g.constant(Tensor<double>({3}, {2, 0, -2}));
    const auto loss = g.value(infonce(g, pf, pb, {a, c, pb}, 1.0)).item();
    EXPECT_NEAR(loss, std::log(2.0), 1e-12);
    EXPECT_NEAR(loss, 0.6931472, 1e-6);
}

TEST(InfoNce, OppositeSimilaritiesClosedForm) {
    ad::Graph<double> g;
    const auto pf = g.constant(Tensor<double>({2}, {1, 0}));
    const auto pb = g.constant(Tensor<double>({2}, {-1, 0}));
    const auto fp = g.constant(Tensor<double>({2}, {3, 0}));
    const auto loss = g.value(infonce(g, pf, pb, {fp}, 1.0)).item();
    EXPECT_NEAR(loss, std::log1p(std::exp(-2.0)), 1e-12);
    EXPECT_NEAR(loss, 0.1269280, 1e-6);
}

TEST(InfoNce, DecreasesAsPositiveSimilarityGrows) {
    double previous = std::numeric_limits<double>::infinity();
    for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
        ad::Graph<double> g;
        const auto pf = g.constant(Tensor<double>({2}, {1, 0}));
        const auto pb = g.constant(Tensor<double>({2}, {0, 1}));
        const auto fp = g.constant(Tensor<double>({2}, {std::cos(angle), std::sin(angle)}));
        const double loss = g.value(infonce(g, pf, pb, {fp}, 0.5)).item();
        EXPECT_LT(loss, previous);
        EXPECT_GE(loss, 0.0);
        previous = loss;
    }
}

TEST(InfoNce, ContractErrors) {
    ad::Graph<double> g;
    const auto pf = g.constant(Tensor<double>({2}, {1, 0}));
    const auto pb = g.constant(Tensor<double>({2}, {0, 1}));
    EXPECT_THROW(infonce(g, pf, pb, {}, 1.0), ContractError);
    EXPECT_THROW(infonce(g, pf, pb, {pf}, 0.0), ContractError);
}

TEST(InfoNce, GradientFlowsOnlyIntoProjectionHeads) {
    const auto params = ModelParameters<double>::initialize(6, 4, 3, 5);
    ad::Graph<double> g;
    const auto b = bind(g, params);
    const auto pf = g.constant(random_tensor<double>({4}, 1));
    const auto pb = g.constant(random_tensor<double>({4}, 2));
    const auto projected =
        project_attributes(g, b, {random_tensor<double>({6}, 3), random_tensor<double>({6}, 4), random_tensor<double>({6}, 5)});
    g.backward(infonce(g, pf, pb, projected, 1.0));
    EXPECT_FALSE(g.requires_grad(pf));
    const auto grads = collect_gradients(g, b);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const bool head = params.tensors()[k].name.rfind("mlp.", 0) == 0;
        double norm = 0;
        for (double v : grads[k].data) norm += v * v;
        if (head && params.tensors()[k].name.find(".w") != std::string::npos) EXPECT_GT(norm, 0.0) << params.tensors()[k].name;
        if (!head) EXPECT_EQ(norm, 0.0) << params.tensors()[k].name;
    }
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
    const auto pf = random_tensor<double>({4}, 31);
    const auto pb = random_tensor<double>({4}, 32);
    const auto others = random_tensor<double>({4}, 33);
    const auto op = [&](auto& g, ad::Var x) {
        using S = typename std::decay_t<decltype(g.value(x))>::value_type;
        return infonce<S>(g, g.constant(pf.cast<S>()), g.constant(pb.cast<S>()), {x, g.constant(others.cast<S>())},
                          S(0.7));
    };
    EXPECT_LE(gradient_ratio_64(op, random_tensor<double>({4}, 34), 1), 1.0);
    EXPECT_LE(gradient_ratio_32(op, random_tensor<float>({4}, 34), 1), 1.0);
}
