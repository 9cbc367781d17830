// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ldag {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extents that do not line up (matmul inner dims, channel counts, image sizes).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Inputs on which an operation is undefined: zero-norm vectors, empty prompts.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, empty list, bad index).
class ContractError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Network or offline-cache failure while talking to a chat endpoint.
class TransportError : public Error {
public:
    using Error::Error;
};

/// The endpoint answered, but never in the mandated reply format.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, std::string raw_reply)
        : Error(what), raw_reply_(std::move(raw_reply)) {}

    const std::string& raw_reply() const noexcept { return raw_reply_; }

private:
    std::string raw_reply_;
};

/// An episode whose support mask collapses to a single class at feature resolution.
class DegenerateEpisodeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values reached the optimizer.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace ldag
