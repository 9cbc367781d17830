// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// ldag command-line tool: fixture generation, attributes, priors, training,
// evaluation, ablation sweeps and single-episode prediction.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldag/chat_client.hpp"
#include "ldag/ldag.hpp"

#ifndef LDAG_DEFAULT_FIXTURE_DIR
#define LDAG_DEFAULT_FIXTURE_DIR "fixtures/synthetic"
#endif

namespace fs = std::filesystem;
using namespace ldag;

namespace {

/// Bad arguments detected after parsing; exits with 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::optional<std::string> config;
    std::optional<std::size_t> fold, shots, n, epochs, threads;
    std::optional<double> alpha, tau, tau1, lr;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> provider, out, data, fixtures;
    bool offline = false;
    bool online = false;
    bool force = false;
};

void add_common_flags(CLI::App& app, Flags& f) {
    app.add_option("--config", f.config, "key=value config file");
    app.add_option("--fold", f.fold, "test fold (0-3)");
    app.add_option("--shots", f.shots, "supports per episode");
    app.add_option("--alpha", f.alpha, "InfoNCE weight");
    app.add_option("--n", f.n, "attribute prompts per class");
    app.add_option("--tau", f.tau, "score temperature");
    app.add_option("--tau1", f.tau1, "InfoNCE temperature");
    app.add_option("--lr", f.lr, "Adam learning rate");
    app.add_option("--epochs", f.epochs, "training epochs");
    app.add_option("--seed", f.seed, "run seed");
    app.add_option("--provider", f.provider, "toy | files");
    app.add_option("--data", f.data, "dataset root for --provider files");
    app.add_option("--fixtures", f.fixtures, "attribute fixture directory");
    app.add_flag("--offline", f.offline, "use fixtures only (default)");
    app.add_flag("--online", f.online, "allow the chat endpoint (LDAG_LLM_URL)");
    app.add_option("--threads", f.threads, "worker threads");
    app.add_option("--out", f.out, "output directory");
    app.add_flag("--force", f.force, "overwrite existing outputs");
}

RunConfig resolve_config(const Flags& f) {
    RunConfig cfg;
    cfg.fixtures = LDAG_DEFAULT_FIXTURE_DIR;
    try {
        if (f.config) load_config_file(*f.config, cfg);
        auto& t = cfg.train;
        if (f.fold) t.fold = *f.fold;
        if (f.shots) t.shots = *f.shots;
        if (f.alpha) t.alpha = *f.alpha;
        if (f.n) t.n = *f.n;
        if (f.tau) t.tau = *f.tau;
        if (f.tau1) t.tau1 = *f.tau1;
        if (f.lr) t.lr = *f.lr;
        if (f.epochs) t.epochs = *f.epochs;
        if (f.seed) t.seed = *f.seed;
        if (f.threads) t.threads = *f.threads;
        if (f.provider) cfg.set("provider", *f.provider);
        if (f.data) cfg.data = *f.data;
        if (f.fixtures) cfg.fixtures = *f.fixtures;
        if (f.out) cfg.out = *f.out;
        if (f.offline) cfg.offline = true;
        if (f.online) cfg.offline = false;
        if (t.fold >= 4) throw ContractError("fold must be 0-3");
        cfg.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    } catch (const NotFoundError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Dataset view shared by the subcommands: synthetic scenes from the seed, or
/// episode directories under --data.
struct Workspace {
    RunConfig cfg;
    ToyProviders providers;
    std::vector<SyntheticClassSpec> specs;
    ClassCatalog catalog;
    SceneRenderer renderer;
    DatasetSplit split;
    std::unique_ptr<AttributeLibrary> attributes;
    std::vector<Episode> disk_episodes;

    explicit Workspace(RunConfig c)
        : cfg(std::move(c)),
          providers(cfg.train.seed),
          specs(load_specs(cfg)),
          catalog(catalog_of(specs)),
          renderer(providers),
          split(split_folds(catalog, 4, cfg.train.fold)) {
        ChatTransport transport = cfg.offline ? ChatTransport{} : ChatTransport(http_chat_complete);
        const auto& prov = providers;
        attributes = std::make_unique<AttributeLibrary>(
            catalog, FixtureStore(cfg.fixtures),
            [&prov](std::string_view p, TextRole role) { return prov.encode_text(p, role); }, cfg.offline,
            ChatEndpointConfig::from_env(), transport);
        if (cfg.provider == ProviderKind::files) {
            const auto root = cfg.data / "episodes";
            if (!fs::exists(root)) throw NotFoundError("no episodes directory under " + cfg.data.string());
            std::vector<fs::path> dirs;
            for (const auto& entry : fs::directory_iterator(root))
                if (entry.is_directory()) dirs.push_back(entry.path());
            std::sort(dirs.begin(), dirs.end());
            for (const auto& d : dirs) disk_episodes.push_back(read_episode_dir(d));
        }
    }

    static std::vector<SyntheticClassSpec> load_specs(const RunConfig& cfg) {
        if (cfg.provider == ProviderKind::files && fs::exists(cfg.data / "manifest.json")) {
            return read_manifest(cfg.data / "manifest.json").classes;
        }
        return synthetic_classes();
    }

    RunContext context() { return {&providers, attributes.get()}; }

    bool in(const std::vector<std::string>& classes, const std::string& name) const {
        return std::find(classes.begin(), classes.end(), name) != classes.end();
    }

    EpisodeSource train_source() {
        if (cfg.provider == ProviderKind::files) {
            std::vector<Episode> eps;
            for (const auto& e : disk_episodes)
                if (in(split.train_classes, e.class_name)) eps.push_back(e);
            if (eps.empty()) throw NotFoundError("no training episodes for fold " + std::to_string(split.fold_id));
            return fixed_source(std::move(eps));
        }
        return synthetic_train_source(split, specs, renderer, cfg.train.shots, cfg.train.seed,
                                      cfg.train.episodes_per_epoch);
    }

    std::vector<Episode> test_episodes() {
        if (cfg.provider == ProviderKind::files) {
            std::vector<Episode> eps;
            for (const auto& e : disk_episodes)
                if (in(split.test_classes, e.class_name)) eps.push_back(e);
            if (eps.empty()) throw NotFoundError("no test episodes for fold " + std::to_string(split.fold_id));
            return eps;
        }
        return synthetic_test_episodes(split, specs, renderer, cfg.train.shots, cfg.train.seed,
                                       cfg.eval_episodes_per_class);
    }

    const SyntheticClassSpec& spec(const std::string& name) const {
        for (const auto& s : specs)
            if (s.name == name) return s;
        throw UsageError("unknown class '" + name + "'");
    }
};

void require_fresh(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw Error(path.string() + " already exists; pass --force to overwrite");
    }
}

void save_report(const fs::path& dir, const EvalReport& report) {
    fs::create_directories(dir);
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(dir / "episodes.csv", report.to_csv());
}

// gen-fixtures ---------------------------------------------------------------

int cmd_gen_fixtures(const Flags& f) {
    auto cfg = resolve_config(f);
    const fs::path out = cfg.out;
    require_fresh(out / "manifest.json", f.force);
    Workspace ws(cfg);
    DatasetManifest manifest;
    manifest.seed = cfg.train.seed;
    manifest.classes = ws.specs;
    fs::create_directories(out);
    write_manifest(out / "manifest.json", manifest);
    const auto paths = write_synthetic_fixtures(FixtureStore(out / "fixtures"), ws.specs,
                                                {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    std::size_t episodes = 0;
    for (std::size_t fold = 0; fold < 4; ++fold) {
        const auto split = split_folds(ws.catalog, 4, fold);
        for (auto& e : synthetic_test_episodes(split, ws.specs, ws.renderer, cfg.train.shots, cfg.train.seed,
                                               cfg.eval_episodes_per_class)) {
            e.episode_id = "fold" + std::to_string(fold) + "-" + FixtureStore::slug(e.episode_id);
            write_episode_dir(out / "episodes" / e.episode_id, e);
            ++episodes;
        }
    }
    std::cout << "wrote manifest (" << ws.specs.size() << " classes), " << paths.size() << " attribute fixtures, "
              << episodes << " episodes to " << out.string() << "\n";
    return 0;
}

// attributes -----------------------------------------------------------------

int cmd_attributes(const Flags& f, const std::string& class_name) {
    auto cfg = resolve_config(f);
    Workspace ws(cfg);
    if (!ws.catalog.index_of(class_name)) throw UsageError("unknown class '" + class_name + "'");
    const auto set = ws.attributes->get(class_name, cfg.train.n);
    std::cout << "# class: " << set.class_name << "\n# provenance: " << set.provenance << "\n";
    for (const auto& p : set.attribute_prompts) std::cout << "foreground: " << p << "\n";
    std::cout << "foreground: " << set.template_text << "\n";
    std::cout << "background: " << set.background_text << "\n";
    return 0;
}

// prior ----------------------------------------------------------------------

int cmd_prior(const Flags& f, const std::string& class_name, const std::string& episode_dir) {
    auto cfg = resolve_config(f);
    Workspace ws(cfg);
    Episode e;
    if (!episode_dir.empty()) {
        e = read_episode_dir(episode_dir);
    } else {
        if (class_name.empty()) throw UsageError("prior needs --class or --episode");
        if (!ws.catalog.index_of(class_name)) throw UsageError("unknown class '" + class_name + "'");
        const auto split = split_folds(ws.catalog, 4, *ws.catalog.index_of(class_name) / 2);
        e = sample_episode(split, ws.specs, ws.renderer, class_name, 1, derive_seed(cfg.train.seed, "prior"));
    }
    const auto set = e.attributes ? ws.attributes->from_fixture(*e.attributes, cfg.train.n)
                                  : ws.attributes->get(e.class_name, cfg.train.n);
    const auto clip = e.imported ? e.imported->query_clip : ws.providers.encode_clip(e.query.image);
    const auto result = build_prior_stack<float>(clip, set, static_cast<float>(cfg.train.tau),
                                                 clip.tokens.values.shape[1], clip.tokens.values.shape[2],
                                                 cfg.train.score_softmax);
    const auto display = refine_prior(result.raw, e.query.image.height, e.query.image.width);
    const fs::path out = cfg.out;
    fs::create_directories(out);
    nlohmann::json scores = {{"class", e.class_name},
                             {"episode_id", e.episode_id},
                             {"tau", result.scores.tau},
                             {"s_b", result.scores.background},
                             {"maps", nlohmann::json::array()}};
    const std::size_t h = e.query.image.height, w = e.query.image.width;
    for (std::size_t i = 0; i < display.count(); ++i) {
        const GrayImage img = gray_from_unit(h, w, display.maps.data.data() + i * h * w);
        const std::string file = "prior_" + std::to_string(i) + ".pgm";
        write_pgm(out / file, img);
        const bool is_template = i + 1 == display.count();
        scores["maps"].push_back({{"file", file},
                                  {"prompt", is_template ? set.template_text : set.attribute_prompts[i]},
                                  {"s_f", result.scores.foreground[i]},
                                  {"softmax_f", result.scores.softmaxed[i].first},
                                  {"softmax_b", result.scores.softmaxed[i].second},
                                  {"raw_min", display.ranges[i].first},
                                  {"raw_max", display.ranges[i].second},
                                  {"saturated", bool(result.saturated[i])}});
    }
    write_ppm(out / "query.ppm", e.query.image);
    write_mask(out / "query_mask.pgm", e.query.mask);
    write_text(out / "scores.json", scores.dump(2) + "\n");
    std::cout << "wrote " << display.count() << " prior maps to " << out.string() << "\n";
    return 0;
}

// train / eval ---------------------------------------------------------------

int cmd_train(const Flags& f) {
    auto cfg = resolve_config(f);
    const fs::path out = cfg.out;
    require_fresh(out / "checkpoint" / "manifest.json", f.force);
    Workspace ws(cfg);
    const auto result = train(cfg.train, ws.train_source(), ws.context(), std::nullopt,
                              {[](const EpochMetrics& m) { std::cout << m.to_json().dump() << std::endl; }});
    fs::create_directories(out);
    write_metrics_log(out / "metrics.jsonl", result.log);
    save_checkpoint(out / "checkpoint", result.params,
                    FrozenDecoder<float>::create(result.params.feature_dim, cfg.train.seed), cfg.to_json());
    std::cout << "steps " << result.steps << ", skipped episodes " << result.skipped << ", parameter checksum "
              << hex64(result.params.checksum()) << "\n";
    return 0;
}

int cmd_eval(const Flags& f, const std::string& checkpoint) {
    auto cfg = resolve_config(f);
    Workspace ws(cfg);
    ModelParameters<float> params;
    nlohmann::json source = nullptr;
    if (!checkpoint.empty()) {
        auto c = load_checkpoint(checkpoint);
        if (c.params.attributes != cfg.train.n) {
            throw UsageError("checkpoint was trained with n=" + std::to_string(c.params.attributes) + ", run has n=" +
                             std::to_string(cfg.train.n));
        }
        params = std::move(c.params);
        source = hex64(params.checksum());
    } else {
        params = ModelParameters<float>::initialize(kEmbedDim, kEmbedDim, cfg.train.n, cfg.train.seed);
    }
    auto report = evaluate(cfg.train, params, ws.test_episodes(), ws.context());
    report.config["checkpoint"] = source;
    save_report(cfg.out, report);
    std::cout << "fold " << cfg.train.fold << " mIoU " << report.miou() << " FB-IoU " << report.fbiou << " over "
              << report.episode_count << " episodes\n";
    return 0;
}

// ablate ---------------------------------------------------------------------

struct Cell {
    std::string name;
    RunConfig cfg;
};

std::vector<Cell> sweep_cells(const RunConfig& base, const std::string& sweep) {
    std::vector<Cell> cells;
    auto label = [](double v) {
        std::ostringstream s;
        s << v;
        return s.str();
    };
    if (sweep == "alpha" || sweep == "all") {
        for (double a : {0.0, 0.3, 0.5, 0.8, 1.0}) {
            Cell c{"alpha/" + label(a), base};
            c.cfg.train.alpha = a;
            cells.push_back(c);
        }
    }
    if (sweep == "n" || sweep == "all") {
        for (std::size_t n : {0, 1, 2, 3, 4, 5, 10}) {
            Cell c{"n/" + std::to_string(n), base};
            c.cfg.train.n = n;
            cells.push_back(c);
        }
    }
    if (sweep == "toggles" || sweep == "all") {
        struct T {
            const char* name;
            Toggles t;
        };
        for (T t : {T{"mae_off", {false, false, true}}, T{"mae", {true, false, true}}, T{"mae_maa", {true, true, true}},
                    T{"no_support", {true, true, false}}}) {
            Cell c{std::string("toggles/") + t.name, base};
            c.cfg.train.toggles = t.t;
            cells.push_back(c);
        }
    }
    if (cells.empty()) throw UsageError("unknown sweep '" + sweep + "' (alpha | n | toggles | all)");
    return cells;
}

int cmd_ablate(const Flags& f, const std::string& sweep) {
    auto base = resolve_config(f);
    const fs::path out = base.out;
    const auto cells = sweep_cells(base, sweep);
    require_fresh(out / "summary.csv", f.force);
    std::string summary = "cell,alpha,n,mae_on,maa_on,use_support,miou,fbiou,episodes\n";
    for (const auto& cell : cells) {
        Workspace ws(cell.cfg);
        const auto trained = train(cell.cfg.train, ws.train_source(), ws.context());
        auto report = evaluate(cell.cfg.train, trained.params, ws.test_episodes(), ws.context());
        report.config["cell"] = cell.name;
        save_report(out / cell.name, report);
        const auto& t = cell.cfg.train;
        std::ostringstream row;
        row.precision(17);
        row << cell.name << ',' << t.alpha << ',' << t.n << ',' << t.toggles.mae_on << ',' << t.toggles.maa_on << ','
            << t.toggles.use_support << ',' << report.miou() << ',' << report.fbiou << ',' << report.episode_count
            << '\n';
        summary += row.str();
        std::cout << cell.name << " mIoU " << report.miou() << std::endl;
    }
    write_text(out / "summary.csv", summary);
    return 0;
}

// predict --------------------------------------------------------------------

int cmd_predict(const Flags& f, const std::string& checkpoint, const std::string& episode_dir,
                const std::string& class_name) {
    auto cfg = resolve_config(f);
    Workspace ws(cfg);
    Episode e;
    if (!episode_dir.empty()) {
        e = read_episode_dir(episode_dir);
    } else {
        if (class_name.empty()) throw UsageError("predict needs --episode or --class");
        if (!ws.catalog.index_of(class_name)) throw UsageError("unknown class '" + class_name + "'");
        const auto split = split_folds(ws.catalog, 4, *ws.catalog.index_of(class_name) / 2);
        e = sample_episode(split, ws.specs, ws.renderer, class_name, cfg.train.shots,
                           derive_seed(cfg.train.seed, "predict"));
    }
    ModelParameters<float> params =
        checkpoint.empty() ? ModelParameters<float>::initialize(kEmbedDim, kEmbedDim, cfg.train.n, cfg.train.seed)
                           : load_checkpoint(checkpoint).params;
    std::vector<Prediction<float>> preds;
    const auto report = evaluate(cfg.train, params, {e}, ws.context(), &preds);
    const auto& pred = preds.at(0);
    const fs::path out = cfg.out;
    fs::create_directories(out);
    write_pgm(out / "probability.pgm",
              gray_from_unit(pred.probabilities.shape[0], pred.probabilities.shape[1], pred.probabilities.data.data()));
    write_mask(out / "mask.pgm", pred.mask);
    const nlohmann::json meta = {{"episode_id", e.episode_id},
                                 {"class", e.class_name},
                                 {"fold", e.fold_id},
                                 {"iou", report.episodes.at(0).fg_iou}};
    write_text(out / "prediction.json", meta.dump(2) + "\n");
    std::cout << meta.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ldag: few-shot segmentation with attribute-guided priors"};
    app.require_subcommand(1);
    Flags flags;
    std::string class_name, episode_dir, checkpoint, sweep = "all";

    auto* gen = app.add_subcommand("gen-fixtures", "write the synthetic dataset manifest, fixtures and episodes");
    auto* attrs = app.add_subcommand("attributes", "print the attribute prompts of a class");
    auto* prior = app.add_subcommand("prior", "write the n+1 prior maps and scores of one query");
    auto* tr = app.add_subcommand("train", "train on the fold's training classes");
    auto* ev = app.add_subcommand("eval", "evaluate on the fold's test classes");
    auto* ab = app.add_subcommand("ablate", "alpha / n / toggle sweeps, one report per cell");
    auto* pr = app.add_subcommand("predict", "predict one episode");
    for (auto* sub : {gen, attrs, prior, tr, ev, ab, pr}) add_common_flags(*sub, flags);
    attrs->add_option("--class", class_name, "class name")->required();
    prior->add_option("--class", class_name, "class name");
    prior->add_option("--episode", episode_dir, "episode directory");
    ev->add_option("--checkpoint", checkpoint, "checkpoint directory (untrained weights when omitted)");
    ab->add_option("--sweep", sweep, "alpha | n | toggles | all");
    pr->add_option("--checkpoint", checkpoint, "checkpoint directory");
    pr->add_option("--episode", episode_dir, "episode directory");
    pr->add_option("--class", class_name, "class name (synthetic episode)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        if (*gen) return cmd_gen_fixtures(flags);
        if (*attrs) return cmd_attributes(flags, class_name);
        if (*prior) return cmd_prior(flags, class_name, episode_dir);
        if (*tr) return cmd_train(flags);
        if (*ev) return cmd_eval(flags, checkpoint);
        if (*ab) return cmd_ablate(flags, sweep);
        if (*pr) return cmd_predict(flags, checkpoint, episode_dir, class_name);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
