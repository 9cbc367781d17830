// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen encoder outputs: seeded toy stand-ins for the image-text encoder, the
// segmentation image encoder and the text encoder, plus the types that imported
// features share with them.

#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/rng.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

inline constexpr std::size_t kPatchSize = 8;
inline constexpr std::size_t kPatchDim = 3 * kPatchSize * kPatchSize;  // 192
inline constexpr std::size_t kEmbedDim = 64;

enum class Source { toy, imported };

inline std::string to_string(Source s) { return s == Source::toy ? "toy" : "imported"; }

inline Source source_from_string(std::string_view s) {
    if (s == "toy") return Source::toy;
    if (s == "imported") return Source::imported;
    throw ContractError("unknown feature source '" + std::string(s) + "'");
}

/// C×H×W dense feature map with provenance.
struct FeatureGrid {
    Tensor<float> values;
    Source source = Source::toy;

    std::size_t channels() const { return values.shape.at(0); }
    std::size_t height() const { return values.shape.at(1); }
    std::size_t width() const { return values.shape.at(2); }
};

/// Image-text encoder output: patch tokens (no class token) and their spatial mean.
struct ClipEncoding {
    FeatureGrid tokens;
    Tensor<float> pooled;
    Source source = Source::toy;
};

struct SamEncoding {
    FeatureGrid features;
    Source source = Source::toy;
};

enum class TextRole { foreground_attribute, foreground_template, background };

inline std::string to_string(TextRole r) {
    switch (r) {
        case TextRole::foreground_attribute: return "foreground-attribute";
        case TextRole::foreground_template: return "foreground-template";
        case TextRole::background: return "background";
    }
    return "?";
}

inline TextRole text_role_from_string(std::string_view s) {
    if (s == "foreground-attribute") return TextRole::foreground_attribute;
    if (s == "foreground-template") return TextRole::foreground_template;
    if (s == "background") return TextRole::background;
    throw ContractError("unknown text role '" + std::string(s) + "'");
}

struct TextEmbedding {
    Tensor<float> vector;
    std::string prompt;
    TextRole role = TextRole::foreground_attribute;
    Source source = Source::toy;
};

/// Mean over H×W of a C×H×W grid, accumulated in double.
template <class Scalar>
Tensor<Scalar> spatial_mean(const Tensor<Scalar>& grid) {
    if (grid.rank() != 3) throw DimensionError("spatial_mean needs C×H×W, got " + shape_string(grid.shape));
    const std::size_t c = grid.shape[0], hw = grid.shape[1] * grid.shape[2];
    Tensor<Scalar> out({c});
    for (std::size_t k = 0; k < c; ++k) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += grid.data[k * hw + i];
        out[k] = static_cast<Scalar>(s / static_cast<double>(hw));
    }
    return out;
}

/// Non-overlapping 8×8 patch embedding by a fixed Gaussian matrix.
///
/// Each patch flattens channel-major (c, dy, dx) into 192 values and is mapped by
/// a 64×192 matrix with N(0, 1/192) entries drawn once from the stream seed.
class ToyImageEncoder {
public:
    ToyImageEncoder(std::uint64_t seed, std::string_view stream)
        : matrix_(gaussian_matrix<float>(kEmbedDim, kPatchDim, 1.0 / std::sqrt(double(kPatchDim)),
                                         derive_seed(seed, stream))) {}

    const Tensor<float>& matrix() const noexcept { return matrix_; }
    std::uint64_t checksum() const { return ldag::checksum(matrix_); }

    /// 64 × (H/8) × (W/8) token grid.
    Tensor<float> encode(const Image& image) const {
        if (image.height == 0 || image.width == 0 || image.height % kPatchSize != 0 ||
            image.width % kPatchSize != 0 || image.pixels.size() != 3 * image.height * image.width) {
            throw DimensionError("toy image encoder needs a 3×H×W image with H, W multiples of 8; got " +
                                 std::to_string(image.height) + "×" + std::to_string(image.width));
        }
        const std::size_t gh = image.height / kPatchSize, gw = image.width / kPatchSize;
        Tensor<float> out({kEmbedDim, gh, gw});
        std::array<double, kPatchDim> patch{};
        for (std::size_t gy = 0; gy < gh; ++gy) {
            for (std::size_t gx = 0; gx < gw; ++gx) {
                extract_patch(image, gy, gx, patch);
                for (std::size_t d = 0; d < kEmbedDim; ++d) {
                    const float* row = &matrix_.data[d * kPatchDim];
                    double s = 0;
                    for (std::size_t j = 0; j < kPatchDim; ++j) s += row[j] * patch[j];
                    out.at(d, gy, gx) = static_cast<float>(s);
                }
            }
        }
        return out;
    }

    static void extract_patch(const Image& image, std::size_t gy, std::size_t gx,
                              std::array<double, kPatchDim>& patch) {
        std::size_t j = 0;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t dy = 0; dy < kPatchSize; ++dy)
                for (std::size_t dx = 0; dx < kPatchSize; ++dx)
                    patch[j++] = image.at(c, gy * kPatchSize + dy, gx * kPatchSize + dx);
    }

private:
    Tensor<float> matrix_;
};

/// Bag-of-words text encoder.
///
/// Prompts are lowercased and split on non-alphanumerics; stopwords are dropped.
/// Each remaining token maps to a unit Gaussian vector seeded by
/// FNV-1a(token) XOR seed, and the prompt embedding is the L2-normalized signed
/// sum. Tokens following a negation word ("without", "no", "not") count with a
/// negative sign until the end of the clause, so "a photo without X" points away
/// from X.
class ToyTextEncoder {
public:
    struct Token {
        std::string text;
        int sign = 1;
    };

    explicit ToyTextEncoder(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    static bool is_stopword(std::string_view w) {
        static constexpr std::array<std::string_view, 24> kStop = {
            "a",  "an", "the", "of", "it",  "is",   "and", "with", "in", "on",  "to",  "its",
            "this", "that", "has", "have", "are", "for", "as",  "by",   "at", "or", "be", "into"};
        for (auto s : kStop)
            if (s == w) return true;
        return false;
    }

    static bool is_negation(std::string_view w) { return w == "without" || w == "no" || w == "not"; }

    static std::vector<Token> tokenize(std::string_view prompt) {
        std::vector<Token> tokens;
        std::string current;
        int sign = 1;
        auto flush = [&] {
            if (current.empty()) return;
            if (is_negation(current)) {
                sign = -1;
            } else if (!is_stopword(current)) {
                tokens.push_back({current, sign});
            }
            current.clear();
        };
        for (char ch : prompt) {
            const auto u = static_cast<unsigned char>(ch);
            if (std::isalnum(u)) {
                current.push_back(static_cast<char>(std::tolower(u)));
            } else {
                flush();
                if (ch == '.' || ch == ',' || ch == ';' || ch == '!' || ch == '?') sign = 1;
            }
        }
        flush();
        return tokens;
    }

    /// Unit vector for one token.
    Tensor<float> token_vector(std::string_view token) const {
        SplitMix64 rng(fnv1a64(token) ^ seed_);
        std::vector<double> v(kEmbedDim);
        double norm = 0;
        for (auto& x : v) {
            x = rng.gaussian();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        Tensor<float> out({kEmbedDim});
        for (std::size_t i = 0; i < kEmbedDim; ++i) out[i] = static_cast<float>(v[i] / norm);
        return out;
    }

    TextEmbedding encode(std::string_view prompt, TextRole role = TextRole::foreground_attribute) const {
        bool blank = true;
        for (char ch : prompt) blank = blank && std::isspace(static_cast<unsigned char>(ch));
        if (blank) throw DegenerateInputError("empty prompt");
        const auto tokens = tokenize(prompt);
        if (tokens.empty()) {
            throw DegenerateInputError("prompt '" + std::string(prompt) + "' has no content words");
        }
        std::vector<double> sum(kEmbedDim, 0.0);
        for (const auto& t : tokens) {
            const auto v = token_vector(t.text);
            for (std::size_t i = 0; i < kEmbedDim; ++i) sum[i] += t.sign * double(v[i]);
        }
        double norm = 0;
        for (double x : sum) norm += x * x;
        norm = std::sqrt(norm);
        if (!(norm > 1e-9)) {
            throw DegenerateInputError("prompt '" + std::string(prompt) + "' cancels to a zero embedding");
        }
        TextEmbedding e;
        e.vector = Tensor<float>({kEmbedDim});
        for (std::size_t i = 0; i < kEmbedDim; ++i) e.vector[i] = static_cast<float>(sum[i] / norm);
        e.prompt = std::string(prompt);
        e.role = role;
        e.source = Source::toy;
        return e;
    }

private:
    std::uint64_t seed_;
};

/// The three toy encoders behind one seed. Matrices are built once and never
/// written afterwards.
class ToyProviders {
public:
    explicit ToyProviders(std::uint64_t seed)
        : seed_(seed), clip_(seed, "clip-image"), sam_(seed, "sam-image"), text_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    const ToyImageEncoder& clip() const noexcept { return clip_; }
    const ToyImageEncoder& sam() const noexcept { return sam_; }
    const ToyTextEncoder& text() const noexcept { return text_; }

    ClipEncoding encode_clip(const Image& image) const {
        ClipEncoding e;
        e.tokens.values = clip_.encode(image);
        e.tokens.source = Source::toy;
        e.pooled = spatial_mean(e.tokens.values);
        e.source = Source::toy;
        return e;
    }

    SamEncoding encode_sam(const Image& image) const {
        SamEncoding e;
        e.features.values = sam_.encode(image);
        e.features.source = Source::toy;
        e.source = Source::toy;
        return e;
    }

    TextEmbedding encode_text(std::string_view prompt, TextRole role = TextRole::foreground_attribute) const {
        return text_.encode(prompt, role);
    }

    /// Checksum of both frozen image matrices.
    std::uint64_t checksum() const { return ldag::checksum(sam_.matrix(), clip_.checksum()); }

private:
    std::uint64_t seed_;
    ToyImageEncoder clip_;
    ToyImageEncoder sam_;
    ToyTextEncoder text_;
};

inline ClipEncoding toy_encode_image_clip(const Image& image, std::uint64_t seed) {
    ClipEncoding e;
    e.tokens.values = ToyImageEncoder(seed, "clip-image").encode(image);
    e.pooled = spatial_mean(e.tokens.values);
    return e;
}

inline SamEncoding toy_encode_image_sam(const Image& image, std::uint64_t seed) {
    SamEncoding e;
    e.features.values = ToyImageEncoder(seed, "sam-image").encode(image);
    return e;
}

inline TextEmbedding toy_encode_text(std::string_view prompt, std::uint64_t seed,
                                     TextRole role = TextRole::foreground_attribute) {
    return ToyTextEncoder(seed).encode(prompt, role);
}

}  // namespace ldag
