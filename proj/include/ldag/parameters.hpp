// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable head weights: n attribute projection MLPs and the two fusion nets.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ldag/autodiff.hpp"
#include "ldag/errors.hpp"
#include "ldag/rng.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

/// Two 1×1 layers (or two dense layers for vectors): in → hidden, relu, hidden → out.
struct TwoLayerNames {
    std::string w1, b1, w2, b2;

    static TwoLayerNames with_prefix(const std::string& prefix) {
        return {prefix + ".w1", prefix + ".b1", prefix + ".w2", prefix + ".b2"};
    }
};

inline TwoLayerNames mlp_names(std::size_t i) { return TwoLayerNames::with_prefix("mlp." + std::to_string(i)); }
inline TwoLayerNames fusion_support_names() { return TwoLayerNames::with_prefix("f1"); }
inline TwoLayerNames fusion_query_names() { return TwoLayerNames::with_prefix("f2"); }

template <class Scalar>
struct NamedTensor {
    std::string name;
    Tensor<Scalar> value;
};

/// Every tensor here is trainable. Order is fixed by construction and is the
/// order used for checksums, optimizer state and checkpoints.
template <class Scalar>
class ModelParameters {
public:
    std::uint64_t seed = 0;
    std::size_t text_dim = 0;      // D
    std::size_t feature_dim = 0;   // Ds
    std::size_t attributes = 0;    // n

    ModelParameters() = default;

    /// Gaussian weights with scale 1/√fan_in, zero biases, each tensor seeded
    /// from (seed, name).
    static ModelParameters initialize(std::size_t text_dim, std::size_t feature_dim, std::size_t n, std::uint64_t seed) {
        if (text_dim < 1 || feature_dim < 1) throw ContractError("parameter widths must be positive");
        ModelParameters p;
        p.seed = seed;
        p.text_dim = text_dim;
        p.feature_dim = feature_dim;
        p.attributes = n;
        const std::size_t d = text_dim, ds = feature_dim;
        for (std::size_t i = 0; i < n; ++i) p.add_two_layer(mlp_names(i), d, d, ds);
        p.add_two_layer(fusion_support_names(), 3 * ds, ds, ds);
        p.add_two_layer(fusion_query_names(), 2 * ds + n + 1, ds, ds);
        return p;
    }

    std::vector<NamedTensor<Scalar>>& tensors() { return tensors_; }
    const std::vector<NamedTensor<Scalar>>& tensors() const { return tensors_; }
    std::size_t size() const { return tensors_.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < tensors_.size(); ++i)
            if (tensors_[i].name == name) return i;
        throw NotFoundError("no parameter tensor named '" + name + "'");
    }
    Tensor<Scalar>& get(const std::string& name) { return tensors_[index_of(name)].value; }
    const Tensor<Scalar>& get(const std::string& name) const { return tensors_[index_of(name)].value; }

    void add(std::string name, Tensor<Scalar> value) { tensors_.push_back({std::move(name), std::move(value)}); }

    std::size_t scalar_count() const {
        std::size_t total = 0;
        for (const auto& t : tensors_) total += t.value.size();
        return total;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a64("ldag-parameters");
        for (const auto& t : tensors_) {
            h = fnv1a64(t.name.data(), t.name.size(), h);
            h = ldag::checksum(t.value, h);
        }
        return h;
    }

    template <class Other>
    ModelParameters<Other> cast() const {
        ModelParameters<Other> out;
        out.seed = seed;
        out.text_dim = text_dim;
        out.feature_dim = feature_dim;
        out.attributes = attributes;
        for (const auto& t : tensors_) out.add(t.name, t.value.template cast<Other>());
        return out;
    }

private:
    void add_two_layer(const TwoLayerNames& names, std::size_t in, std::size_t hidden, std::size_t out) {
        add(names.w1, gaussian_matrix<Scalar>(hidden, in, 1.0 / std::sqrt(double(in)), derive_seed(seed, names.w1)));
        add(names.b1, Tensor<Scalar>({hidden}));
        add(names.w2, gaussian_matrix<Scalar>(out, hidden, 1.0 / std::sqrt(double(hidden)), derive_seed(seed, names.w2)));
        add(names.b2, Tensor<Scalar>({out}));
    }

    std::vector<NamedTensor<Scalar>> tensors_;
};

/// Parameters placed into one graph, indexed like ModelParameters::tensors().
template <class Scalar>
struct BoundParameters {
    const ModelParameters<Scalar>* source = nullptr;
    std::vector<ad::Var> vars;

    ad::Var operator[](const std::string& name) const { return vars[source->index_of(name)]; }
};

template <class Scalar>
BoundParameters<Scalar> bind(ad::Graph<Scalar>& g, const ModelParameters<Scalar>& params, bool trainable = true) {
    BoundParameters<Scalar> b;
    b.source = &params;
    for (const auto& t : params.tensors()) b.vars.push_back(trainable ? g.parameter(t.value) : g.constant(t.value));
    return b;
}

/// Gradients of every parameter in the same order, zeros where unreached.
template <class Scalar>
std::vector<Tensor<Scalar>> collect_gradients(const ad::Graph<Scalar>& g, const BoundParameters<Scalar>& b) {
    std::vector<Tensor<Scalar>> out;
    out.reserve(b.vars.size());
    for (auto v : b.vars) out.push_back(g.grad(v));
    return out;
}

}  // namespace ldag
