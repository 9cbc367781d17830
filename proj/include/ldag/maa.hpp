// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-modal attribute alignment: masked-average prototypes, per-attribute
// projection MLPs and the InfoNCE alignment loss.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ldag/autodiff.hpp"
#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/parameters.hpp"
#include "ldag/providers.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

/// Nearest-neighbour downsample: target cell (y, x) copies source pixel
/// (floor((y+0.5)·H/Hs), floor((x+0.5)·W/Ws)). Output is Hs×Ws of 0/1.
template <class Scalar>
Tensor<Scalar> downsample_mask(const Mask& mask, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0 || mask.height == 0 || mask.width == 0) {
        throw DimensionError("cannot downsample a " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                             " mask to " + std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    Tensor<Scalar> out({out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto sy = static_cast<std::size_t>((double(y) + 0.5) * double(mask.height) / double(out_h));
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto sx = static_cast<std::size_t>((double(x) + 0.5) * double(mask.width) / double(out_w));
            out.data[y * out_w + x] = mask.at(sy, sx) ? Scalar{1} : Scalar{0};
        }
    }
    return out;
}

template <class Scalar>
struct PrototypePair {
    Tensor<Scalar> foreground;  // Ds
    Tensor<Scalar> background;  // Ds
    std::size_t fg_pixel_count = 0;
    std::size_t bg_pixel_count = 0;
};

/// Masked average pooling of a Ds×Hs×Ws grid under an Hs×Ws 0/1 mask.
template <class Scalar>
PrototypePair<Scalar> map_prototypes(const Tensor<Scalar>& features, const Tensor<Scalar>& small_mask) {
    if (features.rank() != 3) throw DimensionError("prototype features must be C×H×W, got " + shape_string(features.shape));
    const std::size_t c = features.shape[0], hw = features.shape[1] * features.shape[2];
    if (small_mask.shape != Shape{features.shape[1], features.shape[2]}) {
        throw DimensionError("mask " + shape_string(small_mask.shape) + " does not match features " +
                             shape_string(features.shape));
    }
    PrototypePair<Scalar> out;
    std::vector<double> fg(c, 0.0), bg(c, 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
        const bool on = small_mask.data[p] != Scalar{0};
        (on ? out.fg_pixel_count : out.bg_pixel_count) += 1;
        auto& acc = on ? fg : bg;
        for (std::size_t m = 0; m < c; ++m) acc[m] += features.data[m * hw + p];
    }
    if (out.fg_pixel_count == 0 || out.bg_pixel_count == 0) {
        throw DegenerateEpisodeError("support mask at feature resolution has " + std::to_string(out.fg_pixel_count) +
                                     " foreground and " + std::to_string(out.bg_pixel_count) + " background cells");
    }
    out.foreground = Tensor<Scalar>({c});
    out.background = Tensor<Scalar>({c});
    for (std::size_t m = 0; m < c; ++m) {
        out.foreground.data[m] = static_cast<Scalar>(fg[m] / double(out.fg_pixel_count));
        out.background.data[m] = static_cast<Scalar>(bg[m] / double(out.bg_pixel_count));
    }
    return out;
}

template <class Scalar>
PrototypePair<Scalar> map_prototypes(const SamEncoding& feat, const Mask& mask) {
    const auto f = feat.features.values.template cast<Scalar>();
    if (f.rank() != 3) throw DimensionError("SAM features must be C×H×W");
    return map_prototypes(f, downsample_mask<Scalar>(mask, f.shape[1], f.shape[2]));
}

/// Zero prototypes for runs with the support branch removed.
template <class Scalar>
PrototypePair<Scalar> zero_prototypes(std::size_t dim) {
    return {Tensor<Scalar>({dim}), Tensor<Scalar>({dim}), 0, 0};
}

/// Two dense layers on a vector: w2·relu(w1·x + b1) + b2.
template <class Scalar>
ad::Var two_layer_vector(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p, const TwoLayerNames& names, ad::Var x) {
    const std::size_t d = g.shape(x).at(0);
    ad::Var col = ad::reshape(g, x, {d, 1});
    const std::size_t hidden = g.shape(p[names.b1]).at(0);
    const std::size_t out = g.shape(p[names.b2]).at(0);
    ad::Var h = ad::relu(g, ad::add(g, ad::matmul(g, p[names.w1], col), ad::reshape(g, p[names.b1], {hidden, 1})));
    ad::Var y = ad::add(g, ad::matmul(g, p[names.w2], h), ad::reshape(g, p[names.b2], {out, 1}));
    return ad::reshape(g, y, {out});
}

/// F'_i = MLP_i(embedding), i zero-based over the n attribute prompts.
template <class Scalar>
ad::Var project_attribute(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p, std::size_t i, ad::Var embedding) {
    if (i >= p.source->attributes) {
        throw ContractError("attribute index " + std::to_string(i) + " out of range for " +
                            std::to_string(p.source->attributes) + " projection MLPs");
    }
    return two_layer_vector(g, p, mlp_names(i), embedding);
}

template <class Scalar>
std::vector<ad::Var> project_attributes(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p,
                                        const std::vector<Tensor<Scalar>>& embeddings) {
    if (embeddings.size() != p.source->attributes) {
        throw ContractError(std::to_string(embeddings.size()) + " attribute embeddings for " +
                            std::to_string(p.source->attributes) + " projection MLPs");
    }
    std::vector<ad::Var> out;
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        out.push_back(project_attribute(g, p, i, g.constant(embeddings[i])));
    return out;
}

/// L = (1/n) Σ_i -log(e^{s_i/τ1} / (e^{s_i/τ1} + e^{s_b/τ1})) with s_i = cos(P_f, F'_i)
/// and s_b = cos(P_f, P_b), evaluated as softplus((s_b - s_i)/τ1).
template <class Scalar>
ad::Var infonce(ad::Graph<Scalar>& g, ad::Var proto_fg, ad::Var proto_bg, const std::vector<ad::Var>& projected,
                Scalar tau1) {
    if (projected.empty()) throw ContractError("InfoNCE needs at least one projected attribute");
    if (!(tau1 > 0)) throw ContractError("InfoNCE temperature must be positive");
    const Scalar inv_tau = Scalar{1} / tau1;
    const ad::Var negative = ad::cosine(g, proto_fg, proto_bg);
    std::vector<ad::Var> terms;
    for (ad::Var v : projected) {
        terms.push_back(ad::softplus(g, ad::scale(g, ad::sub(g, negative, ad::cosine(g, proto_fg, v)), inv_tau)));
    }
    return ad::scale(g, ad::sum(g, ad::stack_scalars<Scalar>(g, terms)),
                     static_cast<Scalar>(1.0 / static_cast<double>(projected.size())));
}

}  // namespace ldag
