// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// IoU, class-balanced fold mIoU, FB-IoU and report output.

#pragma once

#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldag/errors.hpp"
#include "ldag/image.hpp"

namespace ldag {

/// |pred ∩ gt| / |pred ∪ gt|; 1.0 when both are empty.
inline double iou(const Mask& pred, const Mask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw DimensionError("iou of " + std::to_string(pred.height) + "x" + std::to_string(pred.width) + " and " +
                             std::to_string(gt.height) + "x" + std::to_string(gt.width) + " masks");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct EpisodeResult {
    std::string episode_id;
    std::string class_name;
    std::size_t fold = 0;
    double fg_iou = 0;
    double bg_iou = 0;

    static EpisodeResult score(std::string episode_id, std::string class_name, std::size_t fold, const Mask& pred,
                               const Mask& gt) {
        return {std::move(episode_id), std::move(class_name), fold, iou(pred, gt), iou(pred.inverted(), gt.inverted())};
    }
};

struct EvalReport {
    std::map<std::string, double> per_class_iou;
    std::map<std::size_t, double> per_fold_miou;
    double fbiou = 0;
    std::size_t episode_count = 0;
    nlohmann::json config = nlohmann::json::object();
    std::vector<EpisodeResult> episodes;

    /// mIoU of the single fold in the report, or the mean over folds.
    double miou() const {
        if (per_fold_miou.empty()) return 0;
        double s = 0;
        for (const auto& [fold, v] : per_fold_miou) s += v;
        return s / static_cast<double>(per_fold_miou.size());
    }

    nlohmann::json to_json() const {
        nlohmann::json folds = nlohmann::json::object();
        for (const auto& [fold, v] : per_fold_miou) folds[std::to_string(fold)] = v;
        return {{"per_class_iou", per_class_iou}, {"per_fold_miou", folds}, {"miou", miou()},
                {"fbiou", fbiou},                 {"episode_count", episode_count}, {"config", config}};
    }

    /// One row per episode: episode_id,class,fold,fg_iou,bg_iou.
    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "episode_id,class,fold,fg_iou,bg_iou\n";
        for (const auto& e : episodes)
            out << e.episode_id << ',' << e.class_name << ',' << e.fold << ',' << e.fg_iou << ',' << e.bg_iou << '\n';
        return out.str();
    }
};

/// Per-class IoU = mean fg IoU over the class's episodes; fold mIoU = mean over
/// the fold's classes; FB-IoU = (mean fg IoU + mean bg IoU) / 2 over all episodes.
inline EvalReport aggregate(const std::vector<EpisodeResult>& results, nlohmann::json config = nlohmann::json::object()) {
    if (results.empty()) throw ContractError("cannot aggregate zero episode results");
    EvalReport r;
    r.config = std::move(config);
    r.episodes = results;
    r.episode_count = results.size();
    std::map<std::string, std::pair<double, std::size_t>> per_class;
    std::map<std::size_t, std::map<std::string, bool>> fold_classes;
    double fg = 0, bg = 0;
    for (const auto& e : results) {
        auto& acc = per_class[e.class_name];
        acc.first += e.fg_iou;
        acc.second += 1;
        fold_classes[e.fold][e.class_name] = true;
        fg += e.fg_iou;
        bg += e.bg_iou;
    }
    for (const auto& [name, acc] : per_class) r.per_class_iou[name] = acc.first / static_cast<double>(acc.second);
    for (const auto& [fold, classes] : fold_classes) {
        double s = 0;
        for (const auto& [name, _] : classes) s += r.per_class_iou[name];
        r.per_fold_miou[fold] = s / static_cast<double>(classes.size());
    }
    const double n = static_cast<double>(results.size());
    r.fbiou = (fg / n + bg / n) / 2;
    return r;
}

}  // namespace ldag
