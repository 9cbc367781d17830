// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory: one LDAGTNSR file per parameter tensor plus manifest.json
// {format, version, seed, text_dim, feature_dim, attributes, parameter_checksum,
//  decoder_checksum, tensors:[{name, file}], config}.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ldag/errors.hpp"
#include "ldag/model.hpp"
#include "ldag/parameters.hpp"
#include "ldag/tensor_file.hpp"

namespace ldag {

inline constexpr const char* kCheckpointFormat = "ldag-checkpoint";

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParameters<float>& params,
                            const FrozenDecoder<float>& decoder, const nlohmann::json& config = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : params.tensors()) {
        const std::string file = t.name + ".ldag";
        write_tensor_file(dir / file, {t.value, {{"kind", "parameter"}, {"name", t.name}, {"source", "toy"}}});
        tensors.push_back({{"name", t.name}, {"file", file}});
    }
    nlohmann::json manifest = {{"format", kCheckpointFormat},
                               {"version", 1},
                               {"seed", params.seed},
                               {"text_dim", params.text_dim},
                               {"feature_dim", params.feature_dim},
                               {"attributes", params.attributes},
                               {"parameter_checksum", hex64(params.checksum())},
                               {"decoder_checksum", hex64(decoder.checksum())},
                               {"tensors", tensors},
                               {"config", config}};
    const auto text = manifest.dump(2) + "\n";
    write_file_atomic(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct Checkpoint {
    ModelParameters<float> params;
    nlohmann::json manifest;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw NotFoundError("no checkpoint manifest in " + dir.string());
    Checkpoint c;
    try {
        c.manifest = nlohmann::json::parse(in);
        if (c.manifest.at("format").get<std::string>() != kCheckpointFormat) {
            throw FormatError("not an ldag checkpoint: " + dir.string(), 0);
        }
        c.params.seed = c.manifest.at("seed").get<std::uint64_t>();
        c.params.text_dim = c.manifest.at("text_dim").get<std::size_t>();
        c.params.feature_dim = c.manifest.at("feature_dim").get<std::size_t>();
        c.params.attributes = c.manifest.at("attributes").get<std::size_t>();
        for (const auto& t : c.manifest.at("tensors")) {
            auto record = read_tensor_file(dir / t.at("file").get<std::string>());
            c.params.add(t.at("name").get<std::string>(), std::move(record.tensor));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest: " + std::string(e.what()), 0);
    }
    const auto expected = ModelParameters<float>::initialize(c.params.text_dim, c.params.feature_dim,
                                                             c.params.attributes, c.params.seed);
    for (const auto& t : expected.tensors()) {
        if (c.params.get(t.name).shape != t.value.shape) {
            throw FormatError("checkpoint tensor '" + t.name + "' has shape " + shape_string(c.params.get(t.name).shape) +
                                  ", expected " + shape_string(t.value.shape),
                              0);
        }
    }
    if (c.manifest.contains("parameter_checksum") &&
        c.manifest["parameter_checksum"].get<std::string>() != hex64(c.params.checksum())) {
        throw FormatError("checkpoint parameter checksum mismatch in " + dir.string(), 0);
    }
    return c;
}

}  // namespace ldag
