// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-attribute enhancement: image-text scores, softmax, Grad-CAM priors and
// their refinement into a [0,1] prior stack.

#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "ldag/attributes.hpp"
#include "ldag/autodiff.hpp"
#include "ldag/providers.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

/// Pairwise: one two-way softmax per (S_f_i, S_b) pair. Joint: a single softmax
/// over all n+1 foreground scores and S_b.
enum class ScoreSoftmax { pairwise, joint };

/// Foreground embeddings (n attributes, then the template) and the background embedding.
template <class Scalar>
struct TextBank {
    std::vector<Tensor<Scalar>> foreground;
    Tensor<Scalar> background;

    static TextBank from(const AttributeSet& attrs) {
        TextBank bank;
        for (const auto& e : attrs.foreground) bank.foreground.push_back(e.vector.template cast<Scalar>());
        bank.background = attrs.background.vector.template cast<Scalar>();
        return bank;
    }
};

template <class Scalar>
struct ScoreSet {
    std::vector<Scalar> foreground;  // S_f_i, i = 1..n+1
    Scalar background = 0;           // S_b
    Scalar tau = 1;
    std::vector<std::pair<Scalar, Scalar>> softmaxed;  // (Ŝ_f_i, Ŝ_b) per pair
};

namespace detail {

template <class Scalar>
std::vector<ad::Var> raw_scores(ad::Graph<Scalar>& g, ad::Var pooled, const TextBank<Scalar>& bank, Scalar tau) {
    std::vector<ad::Var> scores;
    const Scalar inv_tau = Scalar{1} / tau;
    for (const auto& t : bank.foreground) {
        scores.push_back(ad::scale(g, ad::cosine(g, pooled, g.constant(t)), inv_tau));
    }
    scores.push_back(ad::scale(g, ad::cosine(g, pooled, g.constant(bank.background)), inv_tau));
    return scores;
}

}  // namespace detail

/// Ŝ_f_i as a graph node hanging off `tokens` through pooled = spatial mean.
template <class Scalar>
ad::Var foreground_probability(ad::Graph<Scalar>& g, ad::Var tokens, const TextBank<Scalar>& bank, Scalar tau,
                               std::size_t i, ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    if (i >= bank.foreground.size()) {
        throw ContractError("attribute index " + std::to_string(i) + " out of range for " +
                            std::to_string(bank.foreground.size()) + " foreground prompts");
    }
    if (!(tau > 0)) throw ContractError("temperature must be positive");
    const ad::Var pooled = ad::spatial_mean(g, tokens);
    const auto scores = detail::raw_scores(g, pooled, bank, tau);
    if (mode == ScoreSoftmax::joint) {
        return ad::select(g, ad::softmax(g, ad::stack_scalars<Scalar>(g, scores)), i);
    }
    const ad::Var pair[] = {scores[i], scores.back()};
    return ad::select(g, ad::softmax(g, ad::stack_scalars<Scalar>(g, pair)), 0);
}

template <class Scalar>
ScoreSet<Scalar> compute_scores(const Tensor<Scalar>& tokens, const TextBank<Scalar>& bank, Scalar tau,
                                ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    if (!(tau > 0)) throw ContractError("temperature must be positive");
    ad::Graph<Scalar> g;
    const ad::Var pooled = ad::spatial_mean(g, g.constant(tokens));
    const auto scores = detail::raw_scores(g, pooled, bank, tau);
    ScoreSet<Scalar> out;
    out.tau = tau;
    for (std::size_t i = 0; i + 1 < scores.size(); ++i) out.foreground.push_back(g.value(scores[i]).item());
    out.background = g.value(scores.back()).item();
    if (mode == ScoreSoftmax::joint) {
        const auto& p = g.value(ad::softmax(g, ad::stack_scalars<Scalar>(g, scores)));
        for (std::size_t i = 0; i < out.foreground.size(); ++i) out.softmaxed.emplace_back(p[i], p[p.size() - 1]);
    } else {
        for (std::size_t i = 0; i < out.foreground.size(); ++i) {
            const ad::Var pair[] = {scores[i], scores.back()};
            const auto& p = g.value(ad::softmax(g, ad::stack_scalars<Scalar>(g, pair)));
            out.softmaxed.emplace_back(p[0], p[1]);
        }
    }
    return out;
}

template <class Scalar>
ScoreSet<Scalar> compute_scores(const ClipEncoding& clip, const AttributeSet& attrs, Scalar tau,
                                ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    return compute_scores(clip.tokens.values.template cast<Scalar>(), TextBank<Scalar>::from(attrs), tau, mode);
}

/// ∂Ŝ_f_i / ∂tokens, the same shape as tokens.
template <class Scalar>
Tensor<Scalar> score_gradient(const Tensor<Scalar>& tokens, const TextBank<Scalar>& bank, Scalar tau, std::size_t i,
                              ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    ad::Graph<Scalar> g;
    const ad::Var t = g.parameter(tokens);
    g.backward(foreground_probability(g, t, bank, tau, i, mode));
    return g.grad(t);
}

template <class Scalar>
struct GradCam {
    Tensor<Scalar> map;            // H×W, elementwise >= 0
    std::vector<Scalar> weights;   // ω(m), one per channel
    bool saturated = false;        // all weights zero
};

/// relu(Σ_m ω(m) F[m]) over a C×H×W grid.
template <class Scalar>
Tensor<Scalar> weighted_activation(const Tensor<Scalar>& tokens, const std::vector<Scalar>& weights) {
    if (tokens.rank() != 3) throw DimensionError("Grad-CAM needs C×H×W tokens, got " + shape_string(tokens.shape));
    const std::size_t c = tokens.shape[0], h = tokens.shape[1], w = tokens.shape[2], hw = h * w;
    if (weights.size() != c) {
        throw DimensionError(std::to_string(weights.size()) + " Grad-CAM weights for " + std::to_string(c) +
                             " channels");
    }
    Tensor<Scalar> map({h, w});
    for (std::size_t p = 0; p < hw; ++p) {
        double s = 0;
        for (std::size_t m = 0; m < c; ++m) s += double(weights[m]) * tokens.data[m * hw + p];
        map.data[p] = static_cast<Scalar>(s > 0 ? s : 0);
    }
    return map;
}

/// ω(m) = spatial mean of ∂Ŝ_f_i/∂F[m]; map = relu(Σ_m ω(m) F[m]).
template <class Scalar>
GradCam<Scalar> gradcam_prior(const Tensor<Scalar>& tokens, const TextBank<Scalar>& bank, Scalar tau, std::size_t i,
                              ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    if (tokens.rank() != 3) throw DimensionError("Grad-CAM needs C×H×W tokens, got " + shape_string(tokens.shape));
    const auto grad = score_gradient(tokens, bank, tau, i, mode);
    const std::size_t c = tokens.shape[0], hw = tokens.shape[1] * tokens.shape[2];
    GradCam<Scalar> out;
    out.weights.resize(c);
    bool any = false;
    for (std::size_t m = 0; m < c; ++m) {
        double s = 0;
        for (std::size_t p = 0; p < hw; ++p) s += grad.data[m * hw + p];
        out.weights[m] = static_cast<Scalar>(s / static_cast<double>(hw));
        any = any || out.weights[m] != Scalar{0};
    }
    out.saturated = !any;
    out.map = out.saturated ? Tensor<Scalar>({tokens.shape[1], tokens.shape[2]}) : weighted_activation(tokens, out.weights);
    return out;
}

template <class Scalar>
struct PriorStack {
    Tensor<Scalar> maps;                            // (n+1)×Hs×Ws, values in [0,1]
    std::vector<std::pair<Scalar, Scalar>> ranges;  // per-map (min, max) before rescaling

    std::size_t count() const { return maps.shape.empty() ? 0 : maps.shape[0]; }

    static PriorStack zeros(std::size_t count, std::size_t height, std::size_t width) {
        PriorStack p;
        p.maps = Tensor<Scalar>({count, height, width});
        p.ranges.assign(count, {Scalar{0}, Scalar{0}});
        return p;
    }
};

/// Min-max rescale each map to [0,1] (constant maps become zeros), then bilinear
/// resize to out_h×out_w. Replaceable stand-in for a learned refinement.
template <class Scalar>
PriorStack<Scalar> refine_prior(const std::vector<Tensor<Scalar>>& raw, std::size_t out_h, std::size_t out_w) {
    PriorStack<Scalar> out;
    out.maps = Tensor<Scalar>({raw.size(), out_h, out_w});
    for (std::size_t k = 0; k < raw.size(); ++k) {
        const auto& m = raw[k];
        if (m.rank() != 2) throw DimensionError("prior map must be H×W, got " + shape_string(m.shape));
        const auto [lo_it, hi_it] = std::minmax_element(m.data.begin(), m.data.end());
        const Scalar lo = *lo_it, hi = *hi_it;
        out.ranges.emplace_back(lo, hi);
        Tensor<Scalar> unit({1, m.shape[0], m.shape[1]});
        if (hi > lo) {
            const double span = double(hi) - double(lo);
            for (std::size_t p = 0; p < m.size(); ++p) {
                unit.data[p] = static_cast<Scalar>(std::clamp((double(m.data[p]) - lo) / span, 0.0, 1.0));
            }
        }
        const auto resized = ad::detail::bilinear_values(unit, out_h, out_w);
        std::copy(resized.data.begin(), resized.data.end(),
                  out.maps.data.begin() + static_cast<std::ptrdiff_t>(k * out_h * out_w));
    }
    return out;
}

template <class Scalar>
struct PriorResult {
    ScoreSet<Scalar> scores;
    std::vector<Tensor<Scalar>> raw;  // pre-normalization G_i
    std::vector<bool> saturated;
    PriorStack<Scalar> stack;
};

/// The full MaE path for one query: scores, n+1 Grad-CAM maps, refinement to the
/// segmentation-feature extents.
template <class Scalar>
PriorResult<Scalar> build_prior_stack(const ClipEncoding& clip, const AttributeSet& attrs, Scalar tau,
                                      std::size_t out_h, std::size_t out_w,
                                      ScoreSoftmax mode = ScoreSoftmax::pairwise) {
    const auto tokens = clip.tokens.values.template cast<Scalar>();
    const auto bank = TextBank<Scalar>::from(attrs);
    PriorResult<Scalar> out;
    out.scores = compute_scores(tokens, bank, tau, mode);
    for (std::size_t i = 0; i < bank.foreground.size(); ++i) {
        auto cam = gradcam_prior(tokens, bank, tau, i, mode);
        out.raw.push_back(std::move(cam.map));
        out.saturated.push_back(cam.saturated);
    }
    out.stack = refine_prior(out.raw, out_h, out_w);
    return out;
}

}  // namespace ldag
