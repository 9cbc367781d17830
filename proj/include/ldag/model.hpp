// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Support fusion, query decoding through the frozen decoder, and k-shot
// aggregation of predictions.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ldag/autodiff.hpp"
#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/maa.hpp"
#include "ldag/mae.hpp"
#include "ldag/parameters.hpp"
#include "ldag/rng.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

/// Weight scale of the frozen per-cell decoder. Large enough that the
/// upstream heads can move logits meaningfully at lr 1e-4.
inline constexpr double kDecoderWeightScale = 4.0;

/// Seeded linear map Ds→1 per grid cell (no bias), then bilinear upsample to H×W.
template <class Scalar>
struct FrozenDecoder {
    Tensor<Scalar> weights;  // 1×Ds
    std::size_t out_h = 64;
    std::size_t out_w = 64;
    std::uint64_t seed = 0;

    static FrozenDecoder create(std::size_t feature_dim, std::uint64_t seed, std::size_t out_h = 64, std::size_t out_w = 64) {
        FrozenDecoder d;
        d.weights = gaussian_matrix<Scalar>(1, feature_dim, kDecoderWeightScale, derive_seed(seed, "decoder"));
        d.out_h = out_h;
        d.out_w = out_w;
        d.seed = seed;
        return d;
    }

    std::uint64_t checksum() const { return ldag::checksum(weights, fnv1a64("ldag-decoder")); }

    template <class Other>
    FrozenDecoder<Other> cast() const {
        return {weights.template cast<Other>(), out_h, out_w, seed};
    }

    /// Ds×Hs×Ws → logits 1×H×W.
    ad::Var apply(ad::Graph<Scalar>& g, ad::Var grid) const {
        const ad::Var w = g.constant(weights);
        const ad::Var b = g.constant(Tensor<Scalar>({1}));
        return ad::bilinear_resize(g, ad::conv1x1(g, w, b, grid), out_h, out_w);
    }
};

/// w2 ∗ relu(w1 ∗ x + b1) + b2 with 1×1 kernels.
template <class Scalar>
ad::Var two_layer_grid(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p, const TwoLayerNames& names, ad::Var x) {
    const ad::Var h = ad::relu(g, ad::conv1x1(g, p[names.w1], p[names.b1], x));
    return ad::conv1x1(g, p[names.w2], p[names.b2], h);
}

/// How projected attributes enter support fusion: one averaged block, or one
/// fused grid per attribute averaged after F1.
enum class FusionMode { mean_attribute, per_attribute };

/// F1([F_s ‖ attr ‖ P_f]) with attr and P_f broadcast over the grid. An empty
/// `projected` list gives a zero attribute block.
template <class Scalar>
ad::Var fuse_support(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p, ad::Var support_features,
                     const std::vector<ad::Var>& projected, ad::Var proto_fg,
                     FusionMode mode = FusionMode::mean_attribute) {
    const Shape& fs = g.shape(support_features);
    if (fs.size() != 3) throw DimensionError("support features must be C×H×W, got " + shape_string(fs));
    const std::size_t ds = fs[0], h = fs[1], w = fs[2];
    if (g.shape(proto_fg) != Shape{ds}) {
        throw DimensionError("prototype " + shape_string(g.shape(proto_fg)) + " does not match " + std::to_string(ds) +
                             " feature channels");
    }
    for (ad::Var v : projected) {
        if (g.shape(v) != Shape{ds}) {
            throw DimensionError("projected attribute " + shape_string(g.shape(v)) + " does not match " +
                                 std::to_string(ds) + " feature channels");
        }
    }
    const ad::Var proto_grid = ad::broadcast_spatial(g, proto_fg, h, w);
    auto fuse_with = [&](ad::Var attr) {
        const ad::Var parts[] = {support_features, ad::broadcast_spatial(g, attr, h, w), proto_grid};
        return two_layer_grid(g, p, fusion_support_names(), ad::concat_channels<Scalar>(g, parts));
    };
    if (projected.empty()) return fuse_with(g.constant(Tensor<Scalar>({ds})));
    if (mode == FusionMode::per_attribute) {
        std::vector<ad::Var> fused;
        for (ad::Var v : projected) fused.push_back(fuse_with(v));
        ad::Var acc = fused[0];
        for (std::size_t i = 1; i < fused.size(); ++i) acc = ad::add(g, acc, fused[i]);
        return ad::scale(g, acc, static_cast<Scalar>(1.0 / double(fused.size())));
    }
    ad::Var acc = projected[0];
    for (std::size_t i = 1; i < projected.size(); ++i) acc = ad::add(g, acc, projected[i]);
    return fuse_with(ad::scale(g, acc, static_cast<Scalar>(1.0 / double(projected.size()))));
}

/// Decoder(F2([fused ‖ F_q ‖ Ĝ])) → logits 1×H×W.
template <class Scalar>
ad::Var predict_query_logits(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p, ad::Var fused,
                             ad::Var query_features, ad::Var prior, const FrozenDecoder<Scalar>& decoder) {
    const Shape& fs = g.shape(fused);
    const Shape& qs = g.shape(query_features);
    const Shape& ps = g.shape(prior);
    if (fs.size() != 3 || qs.size() != 3 || ps.size() != 3) throw DimensionError("fusion inputs must be C×H×W grids");
    const std::size_t expected_maps = p.source->attributes + 1;
    if (ps[0] != expected_maps) {
        throw ContractError("prior stack has " + std::to_string(ps[0]) + " maps, expected " +
                            std::to_string(expected_maps));
    }
    if (fs[1] != qs[1] || fs[2] != qs[2] || ps[1] != qs[1] || ps[2] != qs[2]) {
        throw DimensionError("grid extents disagree: fused " + shape_string(fs) + ", query " + shape_string(qs) +
                             ", prior " + shape_string(ps));
    }
    const ad::Var parts[] = {fused, query_features, prior};
    const ad::Var mixed = two_layer_grid(g, p, fusion_query_names(), ad::concat_channels<Scalar>(g, parts));
    return decoder.apply(g, mixed);
}

/// Logits, probabilities and the thresholded mask (p ≥ 0.5 is foreground).
template <class Scalar>
struct Prediction {
    Tensor<Scalar> logits;         // H×W
    Tensor<Scalar> probabilities;  // H×W
    Mask mask;

    static Prediction from_logits(const Tensor<Scalar>& logits) {
        if (logits.rank() != 2 && !(logits.rank() == 3 && logits.shape[0] == 1)) {
            throw DimensionError("prediction logits must be H×W, got " + shape_string(logits.shape));
        }
        const std::size_t h = logits.shape[logits.rank() - 2], w = logits.shape[logits.rank() - 1];
        Prediction out;
        out.logits = Tensor<Scalar>({h, w}, logits.data);
        out.probabilities = Tensor<Scalar>({h, w});
        out.mask = Mask(h, w);
        for (std::size_t i = 0; i < h * w; ++i) {
            const double z = logits.data[i];
            const double prob = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            out.probabilities.data[i] = static_cast<Scalar>(prob);
            out.mask.bits[i] = out.probabilities.data[i] >= Scalar(0.5) ? 1 : 0;
        }
        return out;
    }
};

/// Mean of the k probability maps; logits are logit(mean). Pixels where every
/// member agrees keep the shared logit so k identical supports reproduce the
/// single-support prediction exactly.
template <class Scalar>
Prediction<Scalar> kshot_aggregate(const std::vector<Prediction<Scalar>>& preds) {
    if (preds.empty()) throw ContractError("k-shot aggregation over zero predictions");
    if (preds.size() == 1) return preds.front();
    const Shape shape = preds.front().probabilities.shape;
    for (const auto& p : preds) {
        if (p.probabilities.shape != shape) {
            throw DimensionError("k-shot predictions disagree on extents: " + shape_string(shape) + " vs " +
                                 shape_string(p.probabilities.shape));
        }
    }
    Prediction<Scalar> out;
    out.logits = Tensor<Scalar>(shape);
    out.probabilities = Tensor<Scalar>(shape);
    out.mask = Mask(shape[0], shape[1]);
    const double k = static_cast<double>(preds.size());
    for (std::size_t i = 0; i < out.probabilities.size(); ++i) {
        bool same = true;
        double sum = 0;
        for (const auto& p : preds) {
            sum += p.probabilities.data[i];
            same = same && p.logits.data[i] == preds.front().logits.data[i];
        }
        if (same) {
            out.logits.data[i] = preds.front().logits.data[i];
            out.probabilities.data[i] = preds.front().probabilities.data[i];
        } else {
            const double mean = sum / k;
            const double clamped = std::clamp(mean, 1e-12, 1.0 - 1e-12);
            out.probabilities.data[i] = static_cast<Scalar>(mean);
            out.logits.data[i] = static_cast<Scalar>(std::log(clamped) - std::log1p(-clamped));
        }
        out.mask.bits[i] = out.probabilities.data[i] >= Scalar(0.5) ? 1 : 0;
    }
    return out;
}

}  // namespace ldag
