// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor value type.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ldag/errors.hpp"

namespace ldag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

/// Row-major dense tensor. `Scalar` is float on the training path and double in
/// gradient-verification builds of the same code.
template <class Scalar>
struct Tensor {
    using value_type = Scalar;

    Shape shape;
    std::vector<Scalar> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), Scalar{0}) {}

    Tensor(Shape s, std::vector<Scalar> values) : shape(std::move(s)), data(std::move(values)) {
        if (numel(shape) != data.size()) {
            throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
    }

    static Tensor filled(Shape s, Scalar value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t extent(std::size_t axis) const { return shape.at(axis); }
    bool is_scalar() const noexcept { return data.size() == 1; }

    Scalar& operator[](std::size_t i) { return data[i]; }
    const Scalar& operator[](std::size_t i) const { return data[i]; }

    /// Element of a rank-3 C×H×W tensor.
    Scalar& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    const Scalar& at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * shape[1] + y) * shape[2] + x];
    }

    Scalar item() const {
        if (data.size() != 1) {
            throw ContractError("item() on tensor of shape " + shape_string(shape));
        }
        return data[0];
    }

    template <class Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    bool all_finite() const {
        for (Scalar v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape == b.shape &&
               (a.data.empty() ||
                std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(Scalar)) == 0);
    }
};

inline std::uint64_t fnv1a64(const void* bytes, std::size_t length,
                             std::uint64_t hash = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < length; ++i) {
        hash ^= p[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline std::uint64_t fnv1a64(std::string_view text) { return fnv1a64(text.data(), text.size()); }

/// FNV-1a over shape and raw bytes; chains through `hash` so several tensors fold
/// into one checksum.
template <class Scalar>
std::uint64_t checksum(const Tensor<Scalar>& t, std::uint64_t hash = 0xcbf29ce484222325ULL) {
    for (std::size_t e : t.shape) {
        const auto extent = static_cast<std::uint64_t>(e);
        hash = fnv1a64(&extent, sizeof(extent), hash);
    }
    return fnv1a64(t.data.data(), t.data.size() * sizeof(Scalar), hash);
}

}  // namespace ldag
