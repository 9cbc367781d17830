// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic classes and scenes, fold splits, episode sampling, and the
// on-disk dataset/episode layout.
//
// Episode directory layout (one directory per episode id):
//
//   <root>/manifest.json                 dataset manifest
//   <root>/episodes/<id>/episode.json    {episode_id, class, class_id, fold, shots, seed}
//   <root>/episodes/<id>/support_<j>.ppm, support_<j>_mask.pgm   j = 0..k-1
//   <root>/episodes/<id>/query.ppm, query_mask.pgm
//   <root>/episodes/<id>/features/       optional imported features:
//       support_<j>_sam.ldag, query_clip.ldag, query_sam.ldag
//   <root>/episodes/<id>/attributes.json optional attribute fixture
//
// The primary reads images/masks only as PPM/PGM. When features/ is present
// the imported tensors are used instead of the toy encoders.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldag/attributes.hpp"
#include "ldag/autodiff.hpp"
#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/maa.hpp"
#include "ldag/providers.hpp"
#include "ldag/rng.hpp"
#include "ldag/tensor_file.hpp"

namespace ldag {

enum class ShapeKind { square, circle, triangle, ring };

inline std::string to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::square: return "square";
        case ShapeKind::circle: return "circle";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::ring: return "ring";
    }
    return "square";
}

inline ShapeKind shape_from_string(std::string_view s) {
    if (s == "square") return ShapeKind::square;
    if (s == "circle") return ShapeKind::circle;
    if (s == "triangle") return ShapeKind::triangle;
    if (s == "ring") return ShapeKind::ring;
    throw FormatError("unknown shape '" + std::string(s) + "'", 0);
}

struct SyntheticClassSpec {
    std::string name;         // "<color> <shape>"
    std::string color_word;
    ShapeKind shape = ShapeKind::square;
    std::array<float, 3> color{};
    int size_min = 28;        // side / diameter in pixels
    int size_max = 44;
    std::vector<std::string> attributes;

    nlohmann::json to_json() const {
        return {{"name", name},          {"color_word", color_word}, {"shape", to_string(shape)},
                {"color", color},        {"size_min", size_min},     {"size_max", size_max},
                {"attributes", attributes}};
    }

    static SyntheticClassSpec from_json(const nlohmann::json& j) {
        SyntheticClassSpec s;
        try {
            s.name = j.at("name").get<std::string>();
            s.color_word = j.at("color_word").get<std::string>();
            s.shape = shape_from_string(j.at("shape").get<std::string>());
            s.color = j.at("color").get<std::array<float, 3>>();
            s.size_min = j.at("size_min").get<int>();
            s.size_max = j.at("size_max").get<int>();
            s.attributes = j.at("attributes").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("class spec: ") + e.what(), 0);
        }
        return s;
    }
};

/// Ten attribute descriptions built from the color and shape keywords.
inline std::vector<std::string> synthetic_attributes(const std::string& color, const std::string& shape) {
    const std::string p = attribute_prefix(color + " " + shape);
    return {
        p + "is " + color + " all over.",
        p + "has a " + shape + " outline.",
        p + "shows a " + color + " " + shape + " surface.",
        p + "is folded into a " + shape + ".",
        p + "has " + color + " paper texture.",
        p + "looks like a " + color + " " + shape + ".",
        p + "is colored " + color + ".",
        p + "keeps a crisp " + shape + " form.",
        p + "is a bright " + color + " " + shape + " shape.",
        p + "has a flat " + shape + " silhouette.",
    };
}

inline constexpr const char* kSyntheticDataset = "synthetic";

/// Eight classes, two per fold, in fold order.
inline std::vector<SyntheticClassSpec> synthetic_classes() {
    struct Row {
        const char* color;
        ShapeKind shape;
        std::array<float, 3> rgb;
    };
    const Row rows[] = {
        {"red", ShapeKind::square, {0.75f, 0.30f, 0.30f}},   {"blue", ShapeKind::circle, {0.30f, 0.35f, 0.75f}},
        {"green", ShapeKind::triangle, {0.30f, 0.70f, 0.35f}}, {"yellow", ShapeKind::ring, {0.75f, 0.70f, 0.30f}},
        {"purple", ShapeKind::circle, {0.60f, 0.30f, 0.70f}}, {"orange", ShapeKind::square, {0.80f, 0.50f, 0.25f}},
        {"cyan", ShapeKind::ring, {0.30f, 0.70f, 0.70f}},     {"pink", ShapeKind::triangle, {0.80f, 0.45f, 0.60f}},
    };
    std::vector<SyntheticClassSpec> out;
    for (const auto& r : rows) {
        SyntheticClassSpec s;
        s.color_word = r.color;
        s.shape = r.shape;
        s.name = s.color_word + " " + to_string(r.shape);
        s.color = r.rgb;
        s.attributes = synthetic_attributes(s.color_word, to_string(r.shape));
        out.push_back(std::move(s));
    }
    return out;
}

inline ClassCatalog catalog_of(const std::vector<SyntheticClassSpec>& specs, std::string dataset = kSyntheticDataset) {
    ClassCatalog c;
    c.dataset_name = std::move(dataset);
    for (const auto& s : specs) c.classes.push_back(s.name);
    return c;
}

struct DatasetSplit {
    ClassCatalog catalog;
    std::size_t fold_count = 4;
    std::size_t fold_id = 0;
    std::vector<std::string> train_classes;
    std::vector<std::string> test_classes;
};

/// Test classes are the fold_id-th contiguous block of M / fold_count classes.
inline DatasetSplit split_folds(const ClassCatalog& catalog, std::size_t fold_count, std::size_t fold_id) {
    catalog.validate();
    if (fold_count == 0 || catalog.size() % fold_count != 0) {
        throw ContractError(std::to_string(catalog.size()) + " classes cannot be split into " +
                            std::to_string(fold_count) + " equal folds");
    }
    if (fold_id >= fold_count) {
        throw ContractError("fold " + std::to_string(fold_id) + " out of range for " + std::to_string(fold_count) +
                            " folds");
    }
    DatasetSplit s;
    s.catalog = catalog;
    s.fold_count = fold_count;
    s.fold_id = fold_id;
    const std::size_t per = catalog.size() / fold_count;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        (i / per == fold_id ? s.test_classes : s.train_classes).push_back(catalog.classes[i]);
    }
    return s;
}

struct Scene {
    Image image;
    Mask mask;
};

struct ScenePlacement {
    int size = 0;
    int x = 0;  // left edge
    int y = 0;  // top edge
};

/// Renders synthetic scenes on the 8-pixel patch grid.
///
/// Shape coverage per grid cell is measured by 4×4 supersampling per pixel. A
/// cell's pixels blend the class tile and the background by that coverage; the
/// mask is the bilinear upsample of the coverage grid thresholded at 0.5. The
/// class tile is the base color plus a small pattern chosen so the toy image
/// encoder maps it toward the class's color and shape word vectors.
class SceneRenderer {
public:
    static constexpr int kSupersample = 4;
    static constexpr double kTileAmplitude = 0.22;
    static constexpr double kRingThickness = 10.0;

    SceneRenderer(const ToyProviders& providers, std::size_t height = 64, std::size_t width = 64)
        : providers_(&providers), height_(height), width_(width) {
        if (height % kPatchSize != 0 || width % kPatchSize != 0 || height == 0 || width == 0) {
            throw DimensionError("scene extents must be positive multiples of 8");
        }
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }

    /// 3×8×8 patch in (c, dy, dx) order.
    std::array<float, kPatchDim> tile(const SyntheticClassSpec& spec) const {
        const auto& text = providers_->text();
        const auto a = text.token_vector(spec.color_word);
        const auto b = text.token_vector(to_string(spec.shape));
        std::array<double, kEmbedDim> dir{};
        double norm = 0;
        for (std::size_t i = 0; i < kEmbedDim; ++i) {
            dir[i] = double(a[i]) + double(b[i]);
            norm += dir[i] * dir[i];
        }
        norm = std::sqrt(norm);
        const auto& w = providers_->clip().matrix();  // 64×192
        std::array<double, kPatchDim> pattern{};
        double peak = 0;
        for (std::size_t j = 0; j < kPatchDim; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < kEmbedDim; ++i) s += double(w.data[i * kPatchDim + j]) * dir[i] / norm;
            pattern[j] = s;
            peak = std::max(peak, std::abs(s));
        }
        std::array<float, kPatchDim> out{};
        const std::size_t per_channel = kPatchSize * kPatchSize;
        for (std::size_t j = 0; j < kPatchDim; ++j) {
            const double v = spec.color[j / per_channel] + kTileAmplitude * pattern[j] / peak;
            out[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        return out;
    }

    ScenePlacement place(const SyntheticClassSpec& spec, SplitMix64& rng) const {
        const int limit = static_cast<int>(std::min(height_, width_));
        const int hi = std::min(spec.size_max, limit);
        const int lo = std::min(spec.size_min, hi);
        ScenePlacement p;
        p.size = static_cast<int>(rng.uniform_int(lo, hi));
        p.x = static_cast<int>(rng.uniform_int(0, static_cast<int>(width_) - p.size));
        p.y = static_cast<int>(rng.uniform_int(0, static_cast<int>(height_) - p.size));
        return p;
    }

    static bool inside(ShapeKind shape, const ScenePlacement& p, double yy, double xx) {
        const double s = p.size, r = s / 2;
        const double cy = p.y + r, cx = p.x + r;
        const double d2 = (yy - cy) * (yy - cy) + (xx - cx) * (xx - cx);
        switch (shape) {
            case ShapeKind::square: return yy >= p.y && yy < p.y + s && xx >= p.x && xx < p.x + s;
            case ShapeKind::circle: return d2 <= r * r;
            case ShapeKind::ring: {
                const double inner = std::max(0.0, r - kRingThickness);
                return d2 <= r * r && d2 >= inner * inner;
            }
            case ShapeKind::triangle:
                return yy >= p.y && yy < p.y + s && std::abs(xx - cx) <= (yy - p.y) / 2;
        }
        return false;
    }

    /// Fraction of each grid cell covered by the ideal shape, (H/8)×(W/8).
    Tensor<double> coverage(ShapeKind shape, const ScenePlacement& p) const {
        const std::size_t gh = height_ / kPatchSize, gw = width_ / kPatchSize;
        Tensor<double> c({gh, gw});
        const double per_cell = double(kPatchSize * kPatchSize * kSupersample * kSupersample);
        for (std::size_t y = 0; y < height_ * kSupersample; ++y) {
            const double yy = (double(y) + 0.5) / kSupersample;
            for (std::size_t x = 0; x < width_ * kSupersample; ++x) {
                const double xx = (double(x) + 0.5) / kSupersample;
                if (inside(shape, p, yy, xx)) c.data[(y / (kPatchSize * kSupersample)) * gw + x / (kPatchSize * kSupersample)] += 1;
            }
        }
        for (auto& v : c.data) v /= per_cell;
        return c;
    }

    /// Deterministic per (spec, seed). Pixels are multiples of 1/255 so scenes
    /// survive a PPM round trip unchanged.
    Scene render(const SyntheticClassSpec& spec, std::uint64_t seed) const {
        SplitMix64 rng(derive_seed(seed, "scene:" + spec.name));
        const ScenePlacement p = place(spec, rng);
        const auto cov = coverage(spec.shape, p);
        const std::size_t gh = cov.shape[0], gw = cov.shape[1];

        Tensor<double> cov3({1, gh, gw}, cov.data);
        const auto up = ad::detail::bilinear_values(cov3, height_, width_);
        Scene scene;
        scene.mask = Mask(height_, width_);
        for (std::size_t i = 0; i < height_ * width_; ++i) scene.mask.bits[i] = up.data[i] >= 0.5 ? 1 : 0;

        const double base = 0.35 + 0.25 * rng.uniform();
        const auto t = tile(spec);
        scene.image = Image(height_, width_);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < height_; ++y)
                for (std::size_t x = 0; x < width_; ++x) {
                    const double bg = base + rng.uniform(-0.04, 0.04);
                    const double a = cov.data[(y / kPatchSize) * gw + x / kPatchSize];
                    const double fg = t[(c * kPatchSize + y % kPatchSize) * kPatchSize + x % kPatchSize];
                    scene.image.at(c, y, x) = static_cast<float>(quantize_unit(a * fg + (1 - a) * bg)) / 255.0f;
                }
        return scene;
    }

    /// Placement only, for position statistics.
    ScenePlacement placement(const SyntheticClassSpec& spec, std::uint64_t seed) const {
        SplitMix64 rng(derive_seed(seed, "scene:" + spec.name));
        return place(spec, rng);
    }

private:
    const ToyProviders* providers_;
    std::size_t height_;
    std::size_t width_;
};

/// Features supplied on disk instead of computed by the toy encoders.
struct ImportedFeatures {
    std::vector<SamEncoding> support_sam;
    ClipEncoding query_clip;
    SamEncoding query_sam;
};

struct Episode {
    std::vector<Scene> supports;
    Scene query;
    std::string class_name;
    std::size_t class_id = 0;
    std::size_t fold_id = 0;
    std::string episode_id;
    std::uint64_t seed = 0;
    std::optional<ImportedFeatures> imported;
    std::optional<AttributeFixture> attributes;

    std::size_t shots() const noexcept { return supports.size(); }
};

/// True iff the mask has both classes after nearest downsampling to the grid.
inline bool mask_is_two_class(const Mask& mask, std::size_t grid_h, std::size_t grid_w) {
    const auto small = downsample_mask<float>(mask, grid_h, grid_w);
    std::size_t on = 0;
    for (float v : small.data) on += v != 0.0f;
    return on > 0 && on < small.size();
}

inline constexpr int kSceneRetryBudget = 16;

/// k supports and one query of one class from independent sub-seeds. Scenes
/// whose grid-resolution mask is single-class are redrawn up to the retry budget.
inline Episode sample_episode(const DatasetSplit& split, const std::vector<SyntheticClassSpec>& specs,
                              const SceneRenderer& renderer, std::string_view class_name, std::size_t shots,
                              std::uint64_t seed, std::string episode_id = {}) {
    if (shots < 1) throw ContractError("an episode needs at least one support");
    const auto class_id = split.catalog.index_of(class_name);
    if (!class_id) throw NotFoundError("class '" + std::string(class_name) + "' is not in the catalog");
    const SyntheticClassSpec* spec = nullptr;
    for (const auto& s : specs)
        if (s.name == class_name) spec = &s;
    if (!spec) throw NotFoundError("no synthetic spec for class '" + std::string(class_name) + "'");

    const std::size_t gh = renderer.height() / kPatchSize, gw = renderer.width() / kPatchSize;
    auto draw = [&](const std::string& role) {
        for (int attempt = 0; attempt < kSceneRetryBudget; ++attempt) {
            Scene s = renderer.render(*spec, derive_seed(seed, role + "#" + std::to_string(attempt)));
            if (mask_is_two_class(s.mask, gh, gw)) return s;
        }
        throw DegenerateEpisodeError("no two-class " + role + " scene for '" + spec->name + "' within " +
                                     std::to_string(kSceneRetryBudget) + " draws");
    };
    Episode e;
    for (std::size_t j = 0; j < shots; ++j) e.supports.push_back(draw("support-" + std::to_string(j)));
    e.query = draw("query");
    e.class_name = spec->name;
    e.class_id = *class_id;
    e.fold_id = split.fold_id;
    e.seed = seed;
    e.episode_id = episode_id.empty() ? spec->name + "-" + std::to_string(seed) : std::move(episode_id);
    return e;
}

/// Writes one fixture per (class, n) from the specs' attribute strings, under
/// the given model id. Returns the written paths.
inline std::vector<std::filesystem::path> write_synthetic_fixtures(const FixtureStore& store,
                                                                   const std::vector<SyntheticClassSpec>& specs,
                                                                   const std::vector<std::size_t>& ns,
                                                                   const std::string& model = "synthetic-fixture",
                                                                   const std::string& dataset = kSyntheticDataset) {
    std::vector<std::filesystem::path> paths;
    for (const auto& s : specs) {
        for (std::size_t n : ns) {
            if (n > s.attributes.size()) {
                throw ContractError("class '" + s.name + "' has only " + std::to_string(s.attributes.size()) +
                                    " attribute strings, asked for " + std::to_string(n));
            }
            AttributeFixture f{dataset, s.name, n, model,
                               std::vector<std::string>(s.attributes.begin(), s.attributes.begin() + std::ptrdiff_t(n))};
            store.save(f);
            paths.push_back(store.path_for({dataset, s.name, n}, model));
        }
    }
    return paths;
}

/// Manifest {dataset, seed, fold_count, height, width, classes:[spec...]}.
struct DatasetManifest {
    std::string dataset = kSyntheticDataset;
    std::uint64_t seed = 0;
    std::size_t fold_count = 4;
    std::size_t height = 64;
    std::size_t width = 64;
    std::vector<SyntheticClassSpec> classes;

    nlohmann::json to_json() const {
        nlohmann::json specs = nlohmann::json::array();
        for (const auto& s : classes) specs.push_back(s.to_json());
        return {{"dataset", dataset}, {"seed", seed},   {"fold_count", fold_count},
                {"height", height},   {"width", width}, {"classes", specs}};
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest m;
        try {
            m.dataset = j.at("dataset").get<std::string>();
            m.seed = j.at("seed").get<std::uint64_t>();
            m.fold_count = j.value("fold_count", std::size_t{4});
            m.height = j.value("height", std::size_t{64});
            m.width = j.value("width", std::size_t{64});
            for (const auto& s : j.at("classes")) m.classes.push_back(SyntheticClassSpec::from_json(s));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("dataset manifest: ") + e.what(), 0);
        }
        return m;
    }

    ClassCatalog catalog() const { return catalog_of(classes, dataset); }
};

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what(), 0);
    }
}

}  // namespace detail

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    detail::write_text_atomic(path, m.to_json().dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    return DatasetManifest::from_json(detail::read_json_file(path));
}

/// Writes one episode directory; imported features and attributes are written
/// when present.
inline void write_episode_dir(const std::filesystem::path& dir, const Episode& e) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta = {{"episode_id", e.episode_id}, {"class", e.class_name}, {"class_id", e.class_id},
                           {"fold", e.fold_id},          {"shots", e.shots()},   {"seed", e.seed}};
    detail::write_text_atomic(dir / "episode.json", meta.dump(2) + "\n");
    for (std::size_t j = 0; j < e.shots(); ++j) {
        write_ppm(dir / ("support_" + std::to_string(j) + ".ppm"), e.supports[j].image);
        write_mask(dir / ("support_" + std::to_string(j) + "_mask.pgm"), e.supports[j].mask);
    }
    write_ppm(dir / "query.ppm", e.query.image);
    write_mask(dir / "query_mask.pgm", e.query.mask);
    if (e.imported) {
        const auto fdir = dir / "features";
        std::filesystem::create_directories(fdir);
        for (std::size_t j = 0; j < e.imported->support_sam.size(); ++j)
            save_feature_file(e.imported->support_sam[j], fdir / ("support_" + std::to_string(j) + "_sam.ldag"));
        save_feature_file(e.imported->query_clip, fdir / "query_clip.ldag");
        save_feature_file(e.imported->query_sam, fdir / "query_sam.ldag");
    }
    if (e.attributes) detail::write_text_atomic(dir / "attributes.json", e.attributes->to_json().dump(2) + "\n");
}

inline Episode read_episode_dir(const std::filesystem::path& dir) {
    const auto meta = detail::read_json_file(dir / "episode.json");
    Episode e;
    std::size_t shots = 0;
    try {
        e.episode_id = meta.at("episode_id").get<std::string>();
        e.class_name = meta.at("class").get<std::string>();
        e.class_id = meta.at("class_id").get<std::size_t>();
        e.fold_id = meta.at("fold").get<std::size_t>();
        shots = meta.at("shots").get<std::size_t>();
        e.seed = meta.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError((dir / "episode.json").string() + ": " + ex.what(), 0);
    }
    for (std::size_t j = 0; j < shots; ++j) {
        Scene s;
        s.image = read_ppm(dir / ("support_" + std::to_string(j) + ".ppm"));
        s.mask = read_mask(dir / ("support_" + std::to_string(j) + "_mask.pgm"));
        e.supports.push_back(std::move(s));
    }
    e.query.image = read_ppm(dir / "query.ppm");
    e.query.mask = read_mask(dir / "query_mask.pgm");
    const auto fdir = dir / "features";
    if (std::filesystem::exists(fdir)) {
        ImportedFeatures f;
        for (std::size_t j = 0; j < shots; ++j)
            f.support_sam.push_back(load_feature_as<SamEncoding>(fdir / ("support_" + std::to_string(j) + "_sam.ldag")));
        f.query_clip = load_feature_as<ClipEncoding>(fdir / "query_clip.ldag");
        f.query_sam = load_feature_as<SamEncoding>(fdir / "query_sam.ldag");
        e.imported = std::move(f);
    }
    if (std::filesystem::exists(dir / "attributes.json")) {
        e.attributes = AttributeFixture::from_json(detail::read_json_file(dir / "attributes.json"));
    }
    return e;
}

}  // namespace ldag
