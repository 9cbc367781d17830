// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "ldag/tensor.hpp"

namespace ldag {

/// splitmix64 stream with a Box-Muller Gaussian sampler.
///
/// The sampler is fixed so that any implementation seeded identically draws the
/// same values: u1 = ((x >> 11) + 1) * 2^-53 from one draw, u2 = (x >> 11) * 2^-53
/// from the next, r = sqrt(-2 ln u1); the pair (r cos 2πu2, r sin 2πu2) is
/// returned cosine first.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next() % span);
    }

    double gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Independent stream seed for a named purpose ("clip", "sam", "decoder", ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept {
    SplitMix64 mix(seed ^ fnv1a64(label));
    return mix.next();
}

/// rows×cols matrix of N(0, 1) * scale, filled row-major from one stream.
template <class Scalar>
Tensor<Scalar> gaussian_matrix(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Tensor<Scalar> m({rows, cols});
    for (auto& v : m.data) v = static_cast<Scalar>(rng.gaussian() * scale);
    return m;
}

}  // namespace ldag
