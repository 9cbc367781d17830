// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attribute prompts: the LLM instruction, reply parsing, the on-disk fixture
// cache, and assembly of the foreground/background prompt set with embeddings.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ldag/errors.hpp"
#include "ldag/providers.hpp"
#include "ldag/tensor_file.hpp"

namespace ldag {

struct ClassCatalog {
    std::string dataset_name;
    std::vector<std::string> classes;

    void validate() const {
        if (classes.size() < 2) throw ContractError("a catalog needs at least two classes");
        std::set<std::string> seen;
        for (const auto& c : classes) {
            if (c.empty()) throw ContractError("empty class name in catalog");
            if (!seen.insert(c).second) throw ContractError("duplicate class name '" + c + "'");
        }
    }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == name) return i;
        return std::nullopt;
    }

    std::size_t size() const noexcept { return classes.size(); }
};

inline std::string attribute_prefix(std::string_view class_name) {
    return "a clean origami " + std::string(class_name) + ". It ";
}

inline std::string template_prompt(std::string_view class_name) {
    return "a photo of " + std::string(class_name);
}

inline std::string background_prompt(std::string_view class_name) {
    return "a photo without " + std::string(class_name);
}

/// The question put to the chat model. Byte-stable for fixed inputs.
inline std::string build_llm_instruction(const ClassCatalog& catalog, std::string_view target, std::size_t n) {
    if (!catalog.index_of(target)) {
        throw NotFoundError("class '" + std::string(target) + "' is not in catalog " + catalog.dataset_name);
    }
    if (n < 1) throw ContractError("the instruction needs n >= 1");
    std::ostringstream out;
    out << "There are " << catalog.size() << " classes in a dataset: ";
    for (std::size_t i = 0; i < catalog.size(); ++i) out << (i ? ", " : "") << catalog.classes[i];
    out << ", List " << n << (n == 1 ? " description" : " descriptions")
        << " with key properties to describe the " << target
        << " in terms of appearance, color, shape, size, or material, etc. These descriptions will help "
           "visually distinguish the "
        << target << " from other classes in the dataset. Each description should follow the format: "
        << "'a clean origami " << target << ". It + descriptive contexts'. "
        << "Do not have any content output other than the given format. "
           "And try not to include any other class names in the description.";
    return out.str();
}

struct ReplyParse {
    std::vector<std::string> accepted;
    std::vector<std::string> rejected;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

/// Removes bullets ("-", "*", "•"), enumerators ("3.", "3)", "(3)") and wrapping
/// quotes or backticks.
inline std::string strip_list_marker(std::string line) {
    line = trim(line);
    if (line.rfind("\xE2\x80\xA2", 0) == 0) line = trim(line.substr(3));  // •
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) line = trim(line.substr(1));
    std::size_t i = line.size() > 0 && line[0] == '(' ? 1 : 0;
    std::size_t digits = i;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > i && digits < line.size() && (line[digits] == '.' || line[digits] == ')' || line[digits] == ':')) {
        line = trim(line.substr(digits + 1));
    }
    auto strip_pair = [&](std::string_view open, std::string_view close) {
        if (line.size() >= open.size() + close.size() && line.rfind(open, 0) == 0 &&
            line.compare(line.size() - close.size(), close.size(), close) == 0) {
            line = trim(line.substr(open.size(), line.size() - open.size() - close.size()));
        }
    };
    strip_pair("\"", "\"");
    strip_pair("'", "'");
    strip_pair("`", "`");
    strip_pair("\xE2\x80\x9C", "\xE2\x80\x9D");  // “ ”
    return line;
}

}  // namespace detail

/// Splits a chat reply into lines that follow "a clean origami {class}. It ..."
/// (case-insensitive, after list markers and quotes are stripped) and the rest.
/// Lines that mention other class names are kept.
inline ReplyParse parse_attribute_reply(std::string_view reply, std::string_view class_name) {
    ReplyParse out;
    const std::string prefix = attribute_prefix(class_name);
    std::istringstream lines{std::string(reply)};
    std::string line;
    while (std::getline(lines, line)) {
        std::string cleaned = detail::strip_list_marker(line);
        if (cleaned.empty()) continue;
        if (detail::starts_with_ci(cleaned, prefix) && cleaned.size() > prefix.size()) {
            out.accepted.push_back(prefix + cleaned.substr(prefix.size()));
        } else {
            out.rejected.push_back(detail::trim(line));
        }
    }
    return out;
}

struct ChatEndpointConfig {
    std::string url;
    std::string model = "synthetic-fixture";
    std::string key;
    int retries = 3;
    int timeout_seconds = 60;

    /// LDAG_LLM_URL / LDAG_LLM_MODEL / LDAG_LLM_KEY; unset variables keep defaults.
    static ChatEndpointConfig from_env() {
        ChatEndpointConfig c;
        if (const char* v = std::getenv("LDAG_LLM_URL")) c.url = v;
        if (const char* v = std::getenv("LDAG_LLM_MODEL")) c.model = v;
        if (const char* v = std::getenv("LDAG_LLM_KEY")) c.key = v;
        return c;
    }
};

struct AttributeRequest {
    std::string dataset;
    std::string class_name;
    std::size_t n = 5;
};

struct AttributeFixture {
    std::string dataset;
    std::string class_name;
    std::size_t n = 0;
    std::string model;
    std::vector<std::string> prompts;

    nlohmann::json to_json() const {
        return {{"dataset", dataset}, {"class", class_name}, {"n", n}, {"model", model}, {"prompts", prompts}};
    }

    static AttributeFixture from_json(const nlohmann::json& j) {
        AttributeFixture f;
        try {
            f.dataset = j.at("dataset").get<std::string>();
            f.class_name = j.at("class").get<std::string>();
            f.n = j.at("n").get<std::size_t>();
            f.model = j.at("model").get<std::string>();
            f.prompts = j.at("prompts").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("attribute fixture: ") + e.what(), 0);
        }
        if (f.prompts.size() != f.n) {
            throw FormatError("attribute fixture lists " + std::to_string(f.prompts.size()) + " prompts for n=" +
                                  std::to_string(f.n),
                              0);
        }
        return f;
    }
};

/// Directory of fixture JSON files keyed by (dataset, class, n, model).
class FixtureStore {
public:
    explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& directory() const noexcept { return dir_; }

    std::filesystem::path path_for(const AttributeRequest& req, std::string_view model) const {
        return dir_ / (slug(req.dataset) + "__" + slug(req.class_name) + "__n" + std::to_string(req.n) + "__" +
                       slug(model) + ".json");
    }

    std::optional<AttributeFixture> load(const AttributeRequest& req, std::string_view model) const {
        const auto path = path_for(req, model);
        if (!std::filesystem::exists(path)) return std::nullopt;
        std::ifstream in(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what(), 0);
        }
        return AttributeFixture::from_json(j);
    }

    void save(const AttributeFixture& fixture) const {
        const auto text = fixture.to_json().dump(2) + "\n";
        write_file_atomic(path_for({fixture.dataset, fixture.class_name, fixture.n}, fixture.model),
                          std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

    static std::string slug(std::string_view s) {
        std::string out;
        for (char ch : s) {
            const auto u = static_cast<unsigned char>(ch);
            out.push_back(std::isalnum(u) || ch == '-' || ch == '.' ? static_cast<char>(std::tolower(u)) : '_');
        }
        return out;
    }

private:
    std::filesystem::path dir_;
};

/// Sends one instruction and returns the reply text. Throws TransportError on
/// network failure; a ProtocolError counts as a non-conforming reply.
using ChatTransport = std::function<std::string(const ChatEndpointConfig&, const std::string& instruction)>;

struct FetchResult {
    std::vector<std::string> prompts;
    std::string provenance;
    bool from_cache = false;
    std::size_t attempts = 0;
    std::size_t rejected_lines = 0;
};

/// Cache first; otherwise ask the endpoint up to 1 + retries times until a reply
/// carries n conforming lines (extra conforming lines are dropped), then cache it.
inline FetchResult fetch_attributes(const std::string& instruction, const AttributeRequest& request,
                                    const ChatEndpointConfig& endpoint, const FixtureStore& store, bool offline,
                                    const ChatTransport& transport) {
    FetchResult result;
    if (auto cached = store.load(request, endpoint.model)) {
        result.prompts = std::move(cached->prompts);
        result.provenance = "fixture:" + store.path_for(request, endpoint.model).string();
        result.from_cache = true;
        return result;
    }
    if (request.n == 0) {
        result.provenance = "empty";
        return result;
    }
    if (offline) {
        throw TransportError("offline mode and no fixture at " + store.path_for(request, endpoint.model).string());
    }
    if (endpoint.url.empty() || !transport) {
        throw TransportError("no chat endpoint configured (LDAG_LLM_URL) and no fixture for class '" +
                             request.class_name + "'");
    }
    std::string last_reply;
    std::string last_transport_error;
    bool any_reply = false;
    const int attempts = 1 + std::max(0, endpoint.retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        ++result.attempts;
        std::string reply;
        try {
            reply = transport(endpoint, instruction);
        } catch (const ProtocolError& e) {
            any_reply = true;
            last_reply = e.raw_reply();
            continue;
        } catch (const TransportError& e) {
            last_transport_error = e.what();
            continue;
        }
        any_reply = true;
        last_reply = reply;
        auto parsed = parse_attribute_reply(reply, request.class_name);
        result.rejected_lines += parsed.rejected.size();
        if (parsed.accepted.size() >= request.n) {
            parsed.accepted.resize(request.n);
            result.prompts = std::move(parsed.accepted);
            result.provenance = "llm:" + endpoint.model;
            store.save({request.dataset, request.class_name, request.n, endpoint.model, result.prompts});
            return result;
        }
    }
    if (!any_reply) throw TransportError("chat endpoint unreachable: " + last_transport_error);
    throw ProtocolError("no reply carried " + std::to_string(request.n) + " lines of the form '" +
                            attribute_prefix(request.class_name) + "...' after " + std::to_string(result.attempts) +
                            " attempts",
                        last_reply);
}

/// n attribute prompts, the template prompt and the background prompt with their
/// embeddings. `foreground` holds the n attribute embeddings followed by the
/// template embedding.
struct AttributeSet {
    std::string class_name;
    std::vector<std::string> attribute_prompts;
    std::string template_text;
    std::string background_text;
    std::vector<TextEmbedding> foreground;
    TextEmbedding background;
    std::string provenance;

    std::size_t n() const noexcept { return attribute_prompts.size(); }
};

using TextEncoderFn = std::function<TextEmbedding(std::string_view prompt, TextRole role)>;

inline AttributeSet assemble(const std::vector<std::string>& attribute_prompts, std::string_view class_name,
                             const TextEncoderFn& encode, std::string provenance = {}) {
    const std::string prefix = attribute_prefix(class_name);
    AttributeSet set;
    set.class_name = std::string(class_name);
    set.attribute_prompts = attribute_prompts;
    set.template_text = template_prompt(class_name);
    set.background_text = background_prompt(class_name);
    set.provenance = std::move(provenance);
    for (const auto& p : attribute_prompts) {
        if (p.rfind(prefix, 0) != 0) {
            throw ContractError("attribute prompt '" + p + "' does not begin with '" + prefix + "'");
        }
        set.foreground.push_back(encode(p, TextRole::foreground_attribute));
    }
    set.foreground.push_back(encode(set.template_text, TextRole::foreground_template));
    set.background = encode(set.background_text, TextRole::background);
    return set;
}

}  // namespace ldag
