// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// LDAGTNSR interchange format (little-endian):
//
//   offset  size        field
//   0       8           magic "LDAGTNSR"
//   8       4   u32     version (1)
//   12      1   u8      dtype (0 = f32)
//   13      1   u8      rank
//   14      2   u16     reserved, 0
//   16      8·rank u64  extents
//   ..      4   u32     metadata length in bytes
//   ..      len         metadata, UTF-8 JSON {kind, role?, prompt?, source, class_id?, ...}
//   ..      4·numel     f32 payload, row-major
//
// Feature kinds: "clip_tokens" (D×H×W, pooled vector is the spatial mean and is
// recomputed on load), "sam_features" (D×H×W), "text_embedding" (D), and
// "tensor" for anything else (checkpoints).

#pragma once

#include <algorithm>
#include <atomic>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ldag/errors.hpp"
#include "ldag/image.hpp"
#include "ldag/providers.hpp"
#include "ldag/tensor.hpp"

namespace ldag {

inline constexpr std::array<char, 8> kTensorMagic = {'L', 'D', 'A', 'G', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct TensorRecord {
    Tensor<float> tensor;
    nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        bytes_.insert(bytes_.end(), raw.begin(), raw.end());
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* field) {
        require(sizeof(T), field);
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        T value;
        std::memcpy(&value, raw.data(), sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* field) {
        require(n, field);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void require(std::size_t n, const char* field) const {
        if (remaining() < n) {
            throw FormatError(std::string("truncated file reading ") + field + ": expected length " +
                                  std::to_string(n) + " bytes, actual length " + std::to_string(remaining()),
                              pos_);
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor_record(const TensorRecord& record) {
    const auto& t = record.tensor;
    if (t.rank() > 255) throw ContractError("tensor rank exceeds format limit");
    if (numel(t.shape) != t.data.size()) throw DimensionError("tensor shape/data mismatch");
    detail::ByteWriter w;
    w.put_bytes(kTensorMagic.data(), kTensorMagic.size());
    w.put<std::uint32_t>(kTensorFormatVersion);
    w.put<std::uint8_t>(kDtypeF32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    w.put<std::uint16_t>(0);
    for (std::size_t e : t.shape) w.put<std::uint64_t>(e);
    const std::string meta = record.metadata.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta.data(), meta.size());
    for (float v : t.data) w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
    return w.take();
}

inline TensorRecord decode_tensor_record(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    const auto magic = r.take(kTensorMagic.size(), "magic");
    if (!std::equal(magic.begin(), magic.end(), kTensorMagic.begin())) {
        throw FormatError("bad magic, expected LDAGTNSR", 0);
    }
    const std::size_t version_at = r.position();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kTensorFormatVersion) {
        throw UnsupportedVersionError("unsupported LDAGTNSR version " + std::to_string(version), version_at);
    }
    const std::size_t dtype_at = r.position();
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) throw FormatError("unsupported dtype " + std::to_string(dtype), dtype_at);
    const auto rank = r.get<std::uint8_t>("rank");
    const std::size_t reserved_at = r.position();
    if (r.get<std::uint16_t>("reserved") != 0) throw FormatError("reserved field must be zero", reserved_at);
    Shape shape;
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t at = r.position();
        const auto e = r.get<std::uint64_t>("extent");
        if (e != 0 && count > (std::uint64_t{1} << 40) / e) throw FormatError("extents overflow", at);
        count *= e;
        shape.push_back(static_cast<std::size_t>(e));
    }
    const auto meta_len = r.get<std::uint32_t>("metadata length");
    const std::size_t meta_at = r.position();
    const auto meta_bytes = r.take(meta_len, "metadata");
    TensorRecord record;
    try {
        record.metadata = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), meta_at);
    }
    if (!record.metadata.is_object()) throw FormatError("metadata must be a JSON object", meta_at);
    const std::size_t payload_at = r.position();
    const std::uint64_t expected = count * 4;
    if (r.remaining() != expected) {
        throw FormatError("payload length mismatch: expected " + std::to_string(expected) +
                              " bytes, actual " + std::to_string(r.remaining()),
                          payload_at);
    }
    record.tensor.shape = shape;
    record.tensor.data.resize(static_cast<std::size_t>(count));
    for (auto& v : record.tensor.data) v = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    return record;
}

/// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorRecord& record) {
    const auto bytes = encode_tensor_record(record);
    write_file_atomic(path, bytes);
}

inline TensorRecord read_tensor_file(const std::filesystem::path& path) {
    return decode_tensor_record(netpbm::read_all(path));
}

// Typed feature files -------------------------------------------------------

using FeatureObject = std::variant<ClipEncoding, SamEncoding, TextEmbedding>;

inline TensorRecord to_record(const ClipEncoding& e, nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = "clip_tokens";
    extra["source"] = to_string(e.source);
    return {e.tokens.values, std::move(extra)};
}

inline TensorRecord to_record(const SamEncoding& e, nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = "sam_features";
    extra["source"] = to_string(e.source);
    return {e.features.values, std::move(extra)};
}

inline TensorRecord to_record(const TextEmbedding& e, nlohmann::json extra = nlohmann::json::object()) {
    extra["kind"] = "text_embedding";
    extra["source"] = to_string(e.source);
    extra["role"] = to_string(e.role);
    extra["prompt"] = e.prompt;
    return {e.vector, std::move(extra)};
}

inline FeatureObject feature_from_record(TensorRecord record) {
    const auto& meta = record.metadata;
    auto field = [&](const char* key) -> std::string {
        if (!meta.contains(key) || !meta[key].is_string()) {
            throw FormatError(std::string("metadata lacks string field '") + key + "'", 0);
        }
        return meta[key].get<std::string>();
    };
    const std::string kind = field("kind");
    const Source source = source_from_string(field("source"));
    if (kind == "clip_tokens" || kind == "sam_features") {
        if (record.tensor.rank() != 3 || record.tensor.shape[0] < 2 || record.tensor.shape[1] < 1 ||
            record.tensor.shape[2] < 1) {
            throw FormatError(kind + " needs a D×H×W tensor with D ≥ 2, got " + shape_string(record.tensor.shape), 13);
        }
        if (kind == "clip_tokens") {
            ClipEncoding e;
            e.pooled = spatial_mean(record.tensor);
            e.tokens = FeatureGrid{std::move(record.tensor), source};
            e.source = source;
            return e;
        }
        SamEncoding e;
        e.features = FeatureGrid{std::move(record.tensor), source};
        e.source = source;
        return e;
    }
    if (kind == "text_embedding") {
        if (record.tensor.rank() != 1 || record.tensor.size() < 2) {
            throw FormatError("text_embedding needs a vector, got " + shape_string(record.tensor.shape), 13);
        }
        TextEmbedding e;
        e.vector = std::move(record.tensor);
        e.prompt = field("prompt");
        e.role = text_role_from_string(field("role"));
        e.source = source;
        return e;
    }
    throw FormatError("unknown feature kind '" + kind + "'", 0);
}

template <class T>
void save_feature_file(const T& object, const std::filesystem::path& path,
                       nlohmann::json extra = nlohmann::json::object()) {
    write_tensor_file(path, to_record(object, std::move(extra)));
}

inline FeatureObject load_feature_file(const std::filesystem::path& path) {
    return feature_from_record(read_tensor_file(path));
}

/// load_feature_file() narrowed to one kind; a file of another kind is a format error.
template <class T>
T load_feature_as(const std::filesystem::path& path) {
    auto object = load_feature_file(path);
    if (auto* p = std::get_if<T>(&object)) return std::move(*p);
    throw FormatError("feature file " + path.string() + " holds a different kind", 0);
}

}  // namespace ldag
