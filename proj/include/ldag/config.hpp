// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value run configuration. '#' starts a comment; blank lines are ignored.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ldag/errors.hpp"
#include "ldag/training.hpp"

namespace ldag {

enum class ProviderKind { toy, files };

struct RunConfig {
    TrainConfig train;
    ProviderKind provider = ProviderKind::toy;
    std::filesystem::path data;                     // dataset root for the files provider
    std::filesystem::path out = "out";
    std::filesystem::path fixtures = "fixtures/synthetic";
    bool offline = true;
    std::size_t eval_episodes_per_class = 20;

    void validate() const {
        train.validate();
        if (provider == ProviderKind::files && data.empty()) {
            throw ContractError("provider=files needs a data path");
        }
    }

    /// Applies one key; unknown keys and malformed values are contract errors.
    void set(const std::string& key, const std::string& value) {
        auto as_double = [&] {
            try {
                std::size_t used = 0;
                const double v = std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
                return v;
            } catch (const std::exception&) {
                throw ContractError("config key '" + key + "' expects a number, got '" + value + "'");
            }
        };
        auto as_count = [&] {
            std::uint64_t v = 0;
            const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc{} || ptr != value.data() + value.size()) {
                throw ContractError("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
            }
            return v;
        };
        auto as_bool = [&] {
            if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
            if (value == "false" || value == "0" || value == "off" || value == "no") return false;
            throw ContractError("config key '" + key + "' expects a boolean, got '" + value + "'");
        };
        auto& t = train;
        if (key == "alpha") t.alpha = as_double();
        else if (key == "n") t.n = as_count();
        else if (key == "tau") t.tau = as_double();
        else if (key == "tau1") t.tau1 = as_double();
        else if (key == "lr") t.lr = as_double();
        else if (key == "epochs") t.epochs = as_count();
        else if (key == "batch_size") t.batch_size = as_count();
        else if (key == "episodes_per_epoch") t.episodes_per_epoch = as_count();
        else if (key == "seed") t.seed = as_count();
        else if (key == "shots") t.shots = as_count();
        else if (key == "fold") t.fold = as_count();
        else if (key == "threads") t.threads = as_count();
        else if (key == "mae_on") t.toggles.mae_on = as_bool();
        else if (key == "maa_on") t.toggles.maa_on = as_bool();
        else if (key == "use_support") t.toggles.use_support = as_bool();
        else if (key == "score_softmax") {
            if (value == "pairwise") t.score_softmax = ScoreSoftmax::pairwise;
            else if (value == "joint") t.score_softmax = ScoreSoftmax::joint;
            else throw ContractError("score_softmax must be pairwise or joint");
        } else if (key == "fusion") {
            if (value == "mean_attribute") t.fusion = FusionMode::mean_attribute;
            else if (value == "per_attribute") t.fusion = FusionMode::per_attribute;
            else throw ContractError("fusion must be mean_attribute or per_attribute");
        } else if (key == "provider") {
            if (value == "toy") provider = ProviderKind::toy;
            else if (value == "files") provider = ProviderKind::files;
            else throw ContractError("provider must be toy or files");
        } else if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "fixtures") fixtures = value;
        else if (key == "offline") offline = as_bool();
        else if (key == "eval_episodes_per_class") eval_episodes_per_class = as_count();
        else throw ContractError("unknown config key '" + key + "'");
    }

    nlohmann::json to_json() const {
        auto j = train.to_json();
        j["provider"] = provider == ProviderKind::toy ? "toy" : "files";
        j["offline"] = offline;
        j["eval_episodes_per_class"] = eval_episodes_per_class;
        return j;
    }
};

inline std::string trim_config(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Parses key=value text into `cfg`. Errors name the line number.
inline void parse_config_text(const std::string& text, RunConfig& cfg) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim_config(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ContractError("config line " + std::to_string(number) + ": expected key=value");
        const auto key = trim_config(line.substr(0, eq));
        const auto value = trim_config(line.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const ContractError& e) {
            throw ContractError("config line " + std::to_string(number) + ": " + e.what());
        }
    }
}

inline void load_config_file(const std::filesystem::path& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    parse_config_text(text.str(), cfg);
}

}  // namespace ldag
