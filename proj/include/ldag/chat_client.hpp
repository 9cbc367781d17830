// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON-over-HTTP chat-completion transport for fetch_attributes().
// Request:  POST {model, messages: [{role: "user", content}]}
// Reply:    choices[0].message.content
// https URLs need CPPHTTPLIB_OPENSSL_SUPPORT defined before this header.

#pragma once

#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "ldag/attributes.hpp"
#include "ldag/errors.hpp"

namespace ldag {

/// "scheme://host[:port]" and the request path ("/v1/chat/completions" when absent).
inline std::pair<std::string, std::string> split_endpoint_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("endpoint URL '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string http_chat_complete(const ChatEndpointConfig& endpoint, const std::string& instruction) {
    const auto [base, path] = split_endpoint_url(endpoint.url);
    httplib::Client client(base);
    client.set_connection_timeout(endpoint.timeout_seconds, 0);
    client.set_read_timeout(endpoint.timeout_seconds, 0);
    httplib::Headers headers;
    if (!endpoint.key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.key);
    const nlohmann::json body = {
        {"model", endpoint.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", instruction}}})},
    };
    auto response = client.Post(path, headers, body.dump(), "application/json");
    if (!response) {
        throw TransportError("POST " + endpoint.url + " failed: " + httplib::to_string(response.error()));
    }
    if (response->status != 200) {
        throw TransportError("POST " + endpoint.url + " returned HTTP " + std::to_string(response->status));
    }
    try {
        const auto reply = nlohmann::json::parse(response->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError("reply is not a chat-completion object", response->body);
    }
}

}  // namespace ldag
