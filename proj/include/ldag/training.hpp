// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Losses, Adam, per-episode forward pass, the training loop and evaluation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ldag/attributes.hpp"
#include "ldag/autodiff.hpp"
#include "ldag/episodes.hpp"
#include "ldag/errors.hpp"
#include "ldag/maa.hpp"
#include "ldag/mae.hpp"
#include "ldag/metrics.hpp"
#include "ldag/model.hpp"
#include "ldag/parameters.hpp"
#include "ldag/providers.hpp"

namespace ldag {

struct Toggles {
    bool mae_on = true;
    bool maa_on = true;
    bool use_support = true;
};

struct TrainConfig {
    double alpha = 0.5;
    std::size_t n = 5;
    double tau = 1.0;
    double tau1 = 1.0;
    double lr = 1e-4;
    std::size_t epochs = 8;
    std::size_t batch_size = 8;
    std::size_t episodes_per_epoch = 200;
    std::uint64_t seed = 7;
    std::size_t shots = 1;
    std::size_t fold = 0;
    Toggles toggles;
    ScoreSoftmax score_softmax = ScoreSoftmax::pairwise;
    FusionMode fusion = FusionMode::mean_attribute;
    std::size_t threads = 1;

    void validate() const {
        if (!(alpha >= 0)) throw ContractError("alpha must be >= 0");
        if (!(lr > 0)) throw ContractError("learning rate must be > 0");
        if (shots < 1) throw ContractError("shots must be >= 1");
        if (!(tau > 0) || !(tau1 > 0)) throw ContractError("temperatures must be > 0");
        if (batch_size < 1) throw ContractError("batch size must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"alpha", alpha},
                {"n", n},
                {"tau", tau},
                {"tau1", tau1},
                {"lr", lr},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"episodes_per_epoch", episodes_per_epoch},
                {"seed", seed},
                {"shots", shots},
                {"fold", fold},
                {"mae_on", toggles.mae_on},
                {"maa_on", toggles.maa_on},
                {"use_support", toggles.use_support},
                {"score_softmax", score_softmax == ScoreSoftmax::joint ? "joint" : "pairwise"},
                {"fusion", fusion == FusionMode::per_attribute ? "per_attribute" : "mean_attribute"}};
    }

    /// True when L_Inf takes part in the loss.
    bool alignment_active() const { return toggles.maa_on && toggles.use_support && n > 0; }
};

struct LossBreakdown {
    double pre = 0;
    double inf = 0;
    double alpha = 0;
    double total = 0;
};

/// L = L_pre + α·L_Inf in the storage precision, the same operations the graph uses.
template <class Scalar>
LossBreakdown total_loss(Scalar pre, Scalar inf, Scalar alpha) {
    if (!(alpha >= 0)) throw ContractError("alpha must be >= 0");
    const Scalar weighted = alpha * inf;
    const Scalar total = pre + weighted;
    return {double(pre), double(inf), double(alpha), double(total)};
}

/// Mean stable BCE of a prediction's logits against a mask.
template <class Scalar>
double bce_loss(const Prediction<Scalar>& pred, const Mask& gt) {
    if (pred.logits.shape != Shape{gt.height, gt.width}) {
        throw DimensionError("bce: prediction " + shape_string(pred.logits.shape) + " vs mask " +
                             std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    ad::Graph<Scalar> g;
    Tensor<Scalar> target({gt.height, gt.width});
    for (std::size_t i = 0; i < gt.bits.size(); ++i) target.data[i] = gt.bits[i] ? Scalar{1} : Scalar{0};
    return double(g.value(ad::bce_with_logits(g, g.constant(pred.logits), target)).item());
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter tensor, computed in double.
/// A non-finite gradient aborts before anything is written.
template <class Scalar>
void adam_step(ModelParameters<Scalar>& params, const std::vector<Tensor<Scalar>>& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {}) {
    auto& ts = params.tensors();
    if (grads.size() != ts.size()) {
        throw ContractError(std::to_string(grads.size()) + " gradients for " + std::to_string(ts.size()) +
                            " parameter tensors");
    }
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (grads[k].shape != ts[k].value.shape) {
            throw DimensionError("gradient " + shape_string(grads[k].shape) + " for parameter '" + ts[k].name + "' " +
                                 shape_string(ts[k].value.shape));
        }
        for (std::size_t i = 0; i < grads[k].size(); ++i) {
            if (!std::isfinite(double(grads[k].data[i]))) {
                throw NumericError("non-finite gradient in parameter '" + ts[k].name + "' at element " +
                                   std::to_string(i));
            }
        }
    }
    if (state.m.size() != ts.size()) {
        state.m.assign(ts.size(), {});
        state.v.assign(ts.size(), {});
        for (std::size_t k = 0; k < ts.size(); ++k) {
            state.m[k].assign(ts[k].value.size(), 0.0);
            state.v[k].assign(ts[k].value.size(), 0.0);
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (std::size_t k = 0; k < ts.size(); ++k) {
        auto& w = ts[k].value.data;
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grads[k].data[i];
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
            const double mh = m[i] / c1, vh = v[i] / c2;
            w[i] = static_cast<Scalar>(double(w[i]) - lr * mh / (std::sqrt(vh) + cfg.eps));
        }
    }
}

/// Everything a forward pass needs that does not depend on trainable weights.
template <class Scalar>
struct PreparedEpisode {
    std::string episode_id;
    std::string class_name;
    std::size_t fold = 0;
    std::vector<Tensor<Scalar>> support_features;   // Ds×Hs×Ws each
    std::vector<PrototypePair<Scalar>> prototypes;  // one per support
    Tensor<Scalar> query_features;                  // Ds×Hs×Ws
    Tensor<Scalar> prior;                           // (n+1)×Hs×Ws
    std::vector<Tensor<Scalar>> attribute_embeddings;  // n
    Tensor<Scalar> target;                          // H×W of 0/1
    Mask query_mask;

    template <class Other>
    PreparedEpisode<Other> cast() const {
        PreparedEpisode<Other> o;
        o.episode_id = episode_id;
        o.class_name = class_name;
        o.fold = fold;
        for (const auto& t : support_features) o.support_features.push_back(t.template cast<Other>());
        for (const auto& p : prototypes)
            o.prototypes.push_back({p.foreground.template cast<Other>(), p.background.template cast<Other>(),
                                    p.fg_pixel_count, p.bg_pixel_count});
        o.query_features = query_features.template cast<Other>();
        o.prior = prior.template cast<Other>();
        for (const auto& t : attribute_embeddings) o.attribute_embeddings.push_back(t.template cast<Other>());
        o.target = target.template cast<Other>();
        o.query_mask = query_mask;
        return o;
    }
};

/// Resolves attribute sets per class from fixtures (or a chat endpoint) and
/// encodes them. Results are cached per (class, n).
class AttributeLibrary {
public:
    AttributeLibrary(ClassCatalog catalog, FixtureStore store, TextEncoderFn encode, bool offline = true,
                     ChatEndpointConfig endpoint = {}, ChatTransport transport = {})
        : catalog_(std::move(catalog)),
          store_(std::move(store)),
          encode_(std::move(encode)),
          offline_(offline),
          endpoint_(std::move(endpoint)),
          transport_(std::move(transport)) {}

    AttributeSet get(const std::string& class_name, std::size_t n) {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto key = std::make_pair(class_name, n);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        std::vector<std::string> prompts;
        std::string provenance = "template-only";
        if (n > 0) {
            if (!catalog_.index_of(class_name)) throw NotFoundError("class '" + class_name + "' is not in the catalog");
            const auto instruction = build_llm_instruction(catalog_, class_name, n);
            auto fetched = fetch_attributes(instruction, {catalog_.dataset_name, class_name, n}, endpoint_, store_,
                                            offline_, transport_);
            prompts = std::move(fetched.prompts);
            provenance = fetched.provenance;
        }
        auto set = assemble(prompts, class_name, encode_, provenance);
        cache_.emplace(key, set);
        return set;
    }

    /// An episode-supplied fixture overrides the library for that episode.
    AttributeSet from_fixture(const AttributeFixture& f, std::size_t n) const {
        if (f.prompts.size() < n) {
            throw ContractError("episode attribute fixture has " + std::to_string(f.prompts.size()) +
                                " prompts, need " + std::to_string(n));
        }
        std::vector<std::string> prompts(f.prompts.begin(), f.prompts.begin() + static_cast<std::ptrdiff_t>(n));
        return assemble(prompts, f.class_name, encode_, "episode-fixture");
    }

private:
    ClassCatalog catalog_;
    FixtureStore store_;
    TextEncoderFn encode_;
    bool offline_;
    ChatEndpointConfig endpoint_;
    ChatTransport transport_;
    std::mutex mutex_;
    std::map<std::pair<std::string, std::size_t>, AttributeSet> cache_;
};

/// Encodes an episode (toy encoders unless it carries imported features),
/// builds priors and prototypes, and applies the MaE / support toggles.
inline PreparedEpisode<float> prepare_episode(const Episode& e, const ToyProviders& providers, AttributeLibrary& attrs,
                                              const TrainConfig& cfg) {
    PreparedEpisode<float> p;
    p.episode_id = e.episode_id;
    p.class_name = e.class_name;
    p.fold = e.fold_id;
    const AttributeSet set = e.attributes ? attrs.from_fixture(*e.attributes, cfg.n) : attrs.get(e.class_name, cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) p.attribute_embeddings.push_back(set.foreground[i].vector);

    std::vector<SamEncoding> support_sam;
    ClipEncoding query_clip;
    SamEncoding query_sam;
    if (e.imported) {
        support_sam = e.imported->support_sam;
        query_clip = e.imported->query_clip;
        query_sam = e.imported->query_sam;
        if (support_sam.size() != e.shots()) {
            throw ContractError("episode '" + e.episode_id + "' has " + std::to_string(e.shots()) + " supports but " +
                                std::to_string(support_sam.size()) + " imported support features");
        }
    } else {
        for (const auto& s : e.supports) support_sam.push_back(providers.encode_sam(s.image));
        query_clip = providers.encode_clip(e.query.image);
        query_sam = providers.encode_sam(e.query.image);
    }
    p.query_features = query_sam.features.values;
    const std::size_t ds = p.query_features.shape.at(0), hs = p.query_features.shape.at(1),
                      ws = p.query_features.shape.at(2);
    for (std::size_t j = 0; j < e.shots(); ++j) {
        if (cfg.toggles.use_support) {
            p.prototypes.push_back(map_prototypes<float>(support_sam[j], e.supports[j].mask));
            p.support_features.push_back(support_sam[j].features.values);
        } else {
            p.prototypes.push_back(zero_prototypes<float>(ds));
            p.support_features.push_back(Tensor<float>({ds, hs, ws}));
        }
        if (p.support_features.back().shape != p.query_features.shape) {
            throw DimensionError("support features " + shape_string(p.support_features.back().shape) +
                                 " vs query features " + shape_string(p.query_features.shape));
        }
    }
    if (cfg.toggles.mae_on) {
        p.prior = build_prior_stack<float>(query_clip, set, static_cast<float>(cfg.tau), hs, ws, cfg.score_softmax)
                      .stack.maps;
    } else {
        p.prior = PriorStack<float>::zeros(cfg.n + 1, hs, ws).maps;
    }
    p.query_mask = e.query.mask;
    p.target = Tensor<float>({e.query.mask.height, e.query.mask.width});
    for (std::size_t i = 0; i < e.query.mask.bits.size(); ++i) p.target.data[i] = e.query.mask.bits[i] ? 1.0f : 0.0f;
    return p;
}

struct ForwardResult {
    std::vector<ad::Var> logits;  // 1×H×W per support
    ad::Var pre;
    ad::Var inf;
    ad::Var total;
};

/// Per support: F1 fusion, F2 + frozen decoder, BCE and InfoNCE; losses are
/// averaged over supports and combined as pre + α·inf.
template <class Scalar>
ForwardResult episode_forward(ad::Graph<Scalar>& g, const BoundParameters<Scalar>& p,
                              const FrozenDecoder<Scalar>& decoder, const PreparedEpisode<Scalar>& e,
                              const TrainConfig& cfg) {
    const std::size_t k = e.support_features.size();
    if (k == 0) throw ContractError("episode '" + e.episode_id + "' has no supports");
    if (e.attribute_embeddings.size() != p.source->attributes) {
        throw ContractError("episode prepared for n=" + std::to_string(e.attribute_embeddings.size()) +
                            " but parameters hold " + std::to_string(p.source->attributes) + " projection MLPs");
    }
    const bool use_attrs = cfg.toggles.maa_on && !e.attribute_embeddings.empty();
    const bool align = cfg.alignment_active() && use_attrs;
    std::vector<ad::Var> projected;
    if (use_attrs) projected = project_attributes(g, p, e.attribute_embeddings);
    const ad::Var query = g.constant(e.query_features);
    const ad::Var prior = g.constant(e.prior);
    const std::size_t h = e.target.shape.at(0), w = e.target.shape.at(1);

    ForwardResult r;
    std::vector<ad::Var> pres, infs;
    for (std::size_t j = 0; j < k; ++j) {
        const ad::Var pf = g.constant(e.prototypes[j].foreground);
        const ad::Var fused = fuse_support(g, p, g.constant(e.support_features[j]), projected, pf, cfg.fusion);
        const ad::Var logits = predict_query_logits(g, p, fused, query, prior, decoder);
        r.logits.push_back(logits);
        pres.push_back(ad::bce_with_logits(g, ad::reshape(g, logits, {h, w}), e.target));
        if (align) {
            infs.push_back(infonce(g, pf, g.constant(e.prototypes[j].background), projected,
                                   static_cast<Scalar>(cfg.tau1)));
        }
    }
    const auto mean_of = [&](const std::vector<ad::Var>& xs) {
        if (xs.size() == 1) return xs[0];
        return ad::scale(g, ad::sum(g, ad::stack_scalars<Scalar>(g, xs)), static_cast<Scalar>(1.0 / double(xs.size())));
    };
    r.pre = mean_of(pres);
    r.inf = align ? mean_of(infs) : g.constant(Tensor<Scalar>({1}));
    r.total = ad::add(g, r.pre, ad::scale(g, r.inf, static_cast<Scalar>(cfg.alpha)));
    return r;
}

/// Single-support predictions aggregated over the k supports.
template <class Scalar>
Prediction<Scalar> predict_episode(const ModelParameters<Scalar>& params, const FrozenDecoder<Scalar>& decoder,
                                   const PreparedEpisode<Scalar>& e, const TrainConfig& cfg) {
    ad::Graph<Scalar> g;
    const auto p = bind(g, params, false);
    const auto fwd = episode_forward(g, p, decoder, e, cfg);
    std::vector<Prediction<Scalar>> preds;
    for (auto v : fwd.logits) preds.push_back(Prediction<Scalar>::from_logits(g.value(v)));
    return kshot_aggregate(preds);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    std::vector<std::exception_ptr> errors(count);
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Episodes for training: `per_epoch` per epoch, produced by index. A fixed
/// source returns the same episodes every epoch, so they are prepared once.
struct EpisodeSource {
    std::size_t per_epoch = 0;
    std::function<Episode(std::size_t epoch, std::size_t index)> episode;
    bool fixed = false;
};

inline EpisodeSource fixed_source(std::vector<Episode> episodes) {
    auto shared = std::make_shared<std::vector<Episode>>(std::move(episodes));
    EpisodeSource s;
    s.per_epoch = shared->size();
    s.fixed = true;
    s.episode = [shared](std::size_t, std::size_t index) { return (*shared)[index]; };
    return s;
}

/// Fresh episodes of the split's training classes, a class drawn uniformly per episode.
inline EpisodeSource synthetic_train_source(const DatasetSplit& split, std::vector<SyntheticClassSpec> specs,
                                            const SceneRenderer& renderer, std::size_t shots, std::uint64_t seed,
                                            std::size_t per_epoch) {
    auto shared_specs = std::make_shared<std::vector<SyntheticClassSpec>>(std::move(specs));
    EpisodeSource s;
    s.per_epoch = per_epoch;
    s.episode = [split, shared_specs, &renderer, shots, seed](std::size_t epoch, std::size_t index) {
        const std::string tag = "train:" + std::to_string(epoch) + ":" + std::to_string(index);
        SplitMix64 rng(derive_seed(seed, tag));
        const auto& classes = split.train_classes;
        const auto& name = classes[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(classes.size()) - 1))];
        return sample_episode(split, *shared_specs, renderer, name, shots, rng.next(), tag);
    };
    return s;
}

/// A deterministic evaluation set: `per_class` episodes of every test class.
inline std::vector<Episode> synthetic_test_episodes(const DatasetSplit& split,
                                                    const std::vector<SyntheticClassSpec>& specs,
                                                    const SceneRenderer& renderer, std::size_t shots,
                                                    std::uint64_t seed, std::size_t per_class) {
    std::vector<Episode> out;
    for (const auto& name : split.test_classes) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::string tag = "test:" + name + ":" + std::to_string(i);
            out.push_back(sample_episode(split, specs, renderer, name, shots, derive_seed(seed, tag), tag));
        }
    }
    return out;
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss_pre = 0;
    double loss_inf = 0;
    double loss_total = 0;
    double train_miou = 0;
    std::size_t episodes = 0;
    std::size_t skipped = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},       {"loss_pre", loss_pre}, {"loss_inf", loss_inf}, {"loss_total", loss_total},
                {"train_miou", train_miou}, {"episodes", episodes}, {"skipped", skipped}};
    }
};

struct TrainResult {
    ModelParameters<float> params;
    std::vector<EpochMetrics> log;
    std::vector<double> step_losses;  // mean total loss of each optimizer step
    std::size_t steps = 0;
    std::size_t skipped = 0;
    std::vector<std::string> skip_reasons;
};

/// Everything train/evaluate need besides the config.
struct RunContext {
    const ToyProviders* providers = nullptr;
    AttributeLibrary* attributes = nullptr;
};

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
};

namespace detail {

struct EpisodeOutcome {
    bool ok = false;
    std::string error;
    std::vector<Tensor<float>> grads;
    LossBreakdown loss;
    EpisodeResult result;
};

inline EpisodeOutcome run_training_episode(const ModelParameters<float>& params, const FrozenDecoder<float>& decoder,
                                           const PreparedEpisode<float>& e, const TrainConfig& cfg) {
    EpisodeOutcome out;
    ad::Graph<float> g;
    const auto p = bind(g, params, true);
    const auto fwd = episode_forward(g, p, decoder, e, cfg);
    g.backward(fwd.total);
    out.grads = collect_gradients(g, p);
    out.loss = total_loss<float>(g.value(fwd.pre).item(), g.value(fwd.inf).item(), static_cast<float>(cfg.alpha));
    std::vector<Prediction<float>> preds;
    for (auto v : fwd.logits) preds.push_back(Prediction<float>::from_logits(g.value(v)));
    const auto pred = kshot_aggregate(preds);
    out.result = EpisodeResult::score(e.episode_id, e.class_name, e.fold, pred.mask, e.query_mask);
    out.ok = true;
    return out;
}

}  // namespace detail

/// Gradient accumulation over each batch (mean of per-episode gradients, summed
/// in episode order), then one Adam step. Degenerate episodes are counted and
/// skipped. Deterministic for a fixed seed and any thread count.
inline TrainResult train(const TrainConfig& cfg, const EpisodeSource& source, RunContext ctx,
                         std::optional<ModelParameters<float>> init = std::nullopt, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (!ctx.providers || !ctx.attributes) throw ContractError("training needs providers and an attribute library");
    TrainResult result;
    result.params = init ? std::move(*init) : ModelParameters<float>::initialize(kEmbedDim, kEmbedDim, cfg.n, cfg.seed);
    const auto decoder = FrozenDecoder<float>::create(result.params.feature_dim, cfg.seed);
    AdamState adam;

    std::vector<std::optional<PreparedEpisode<float>>> cache;
    std::vector<std::string> cache_errors;
    auto prepare_all = [&](std::size_t epoch) {
        std::vector<std::optional<PreparedEpisode<float>>> prepared(source.per_epoch);
        std::vector<std::string> errors(source.per_epoch);
        parallel_for(source.per_epoch, cfg.threads, [&](std::size_t i) {
            try {
                prepared[i] = prepare_episode(source.episode(epoch, i), *ctx.providers, *ctx.attributes, cfg);
            } catch (const DegenerateEpisodeError& ex) {
                errors[i] = ex.what();
            } catch (const DegenerateInputError& ex) {
                errors[i] = ex.what();
            }
        });
        return std::make_pair(std::move(prepared), std::move(errors));
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::optional<PreparedEpisode<float>>> fresh;
        std::vector<std::string> fresh_errors;
        if (!source.fixed || epoch == 0) {
            auto [prepared, errors] = prepare_all(epoch);
            if (source.fixed) {
                cache = std::move(prepared);
                cache_errors = std::move(errors);
            } else {
                fresh = std::move(prepared);
                fresh_errors = std::move(errors);
            }
        }
        const auto& episodes = source.fixed ? cache : fresh;
        const auto& errors = source.fixed ? cache_errors : fresh_errors;

        EpochMetrics m;
        m.epoch = epoch;
        std::vector<EpisodeResult> epoch_results;
        double pre_sum = 0, inf_sum = 0, total_sum = 0;
        for (std::size_t start = 0; start < episodes.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, episodes.size());
            std::vector<detail::EpisodeOutcome> outcomes(end - start);
            parallel_for(end - start, cfg.threads, [&](std::size_t b) {
                const auto& e = episodes[start + b];
                if (!e) return;
                outcomes[b] = detail::run_training_episode(result.params, decoder, *e, cfg);
            });
            std::vector<std::vector<double>> acc;
            std::size_t used = 0;
            double step_total = 0;
            for (std::size_t b = 0; b < outcomes.size(); ++b) {
                const auto& o = outcomes[b];
                if (!o.ok) {
                    ++m.skipped;
                    result.skip_reasons.push_back(errors[start + b]);
                    continue;
                }
                if (acc.empty()) {
                    for (const auto& gt : o.grads) acc.emplace_back(gt.size(), 0.0);
                }
                for (std::size_t k = 0; k < o.grads.size(); ++k)
                    for (std::size_t i = 0; i < o.grads[k].size(); ++i) acc[k][i] += o.grads[k].data[i];
                ++used;
                pre_sum += o.loss.pre;
                inf_sum += o.loss.inf;
                total_sum += o.loss.total;
                step_total += o.loss.total;
                epoch_results.push_back(o.result);
            }
            if (used == 0) continue;
            std::vector<Tensor<float>> grads;
            const auto& ts = result.params.tensors();
            for (std::size_t k = 0; k < ts.size(); ++k) {
                Tensor<float> gk(ts[k].value.shape);
                for (std::size_t i = 0; i < gk.size(); ++i) gk.data[i] = static_cast<float>(acc[k][i] / double(used));
                grads.push_back(std::move(gk));
            }
            adam_step(result.params, grads, adam, cfg.lr);
            result.step_losses.push_back(step_total / double(used));
            ++result.steps;
        }
        m.episodes = epoch_results.size();
        if (m.episodes > 0) {
            const double n = double(m.episodes);
            m.loss_pre = pre_sum / n;
            m.loss_inf = inf_sum / n;
            m.loss_total = total_sum / n;
            m.train_miou = aggregate(epoch_results).miou();
        }
        result.skipped += m.skipped;
        result.log.push_back(m);
        if (hooks.on_epoch) hooks.on_epoch(m);
    }
    return result;
}

/// k-shot predictions for every episode, scored and aggregated. Degenerate
/// episodes are counted in the report config echo, not averaged.
inline EvalReport evaluate(const TrainConfig& cfg, const ModelParameters<float>& params,
                           const std::vector<Episode>& episodes, RunContext ctx,
                           std::vector<Prediction<float>>* predictions = nullptr) {
    if (!ctx.providers || !ctx.attributes) throw ContractError("evaluation needs providers and an attribute library");
    const auto decoder = FrozenDecoder<float>::create(params.feature_dim, cfg.seed);
    std::vector<std::optional<EpisodeResult>> results(episodes.size());
    std::vector<std::optional<Prediction<float>>> preds(episodes.size());
    std::vector<std::string> errors(episodes.size());
    parallel_for(episodes.size(), cfg.threads, [&](std::size_t i) {
        try {
            const auto prepared = prepare_episode(episodes[i], *ctx.providers, *ctx.attributes, cfg);
            auto pred = predict_episode(params, decoder, prepared, cfg);
            results[i] = EpisodeResult::score(prepared.episode_id, prepared.class_name, prepared.fold, pred.mask,
                                              prepared.query_mask);
            preds[i] = std::move(pred);
        } catch (const DegenerateEpisodeError& ex) {
            errors[i] = ex.what();
        } catch (const DegenerateInputError& ex) {
            errors[i] = ex.what();
        }
    });
    std::vector<EpisodeResult> ok;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i]) {
            ok.push_back(*results[i]);
            if (predictions) predictions->push_back(std::move(*preds[i]));
        } else {
            ++skipped;
        }
    }
    if (ok.empty()) throw DegenerateEpisodeError("every evaluation episode was degenerate");
    auto echo = cfg.to_json();
    echo["skipped_episodes"] = skipped;
    return aggregate(ok, echo);
}

inline void write_metrics_log(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
    std::string text;
    for (const auto& m : log) text += m.to_json().dump() + "\n";
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace ldag
