// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0
//
// RGB images, binary masks, and binary netpbm I/O (P5 masks/maps, P6 images).

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ldag/errors.hpp"

namespace ldag {

/// 3×H×W, channel-major, values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0.0f) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// H×W binary mask; every entry is 0 or 1.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    Mask inverted() const {
        Mask out = *this;
        for (auto& b : out.bits) b = b ? 0 : 1;
        return out;
    }

    friend bool operator==(const Mask&, const Mask&) = default;
};

/// 8-bit grayscale raster, used for masks and prior/probability maps on disk.
struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline std::uint8_t quantize_unit(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

/// Gray image from values in [0,1], quantized with quantize_unit().
inline GrayImage gray_from_unit(std::size_t height, std::size_t width, const float* values) {
    GrayImage g{height, width, std::vector<std::uint8_t>(height * width)};
    for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = quantize_unit(values[i]);
    return g;
}

namespace netpbm {

struct Header {
    char kind = 0;  // '5' or '6'
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t payload_offset = 0;
};

inline Header parse_header(const std::vector<std::uint8_t>& bytes, char expected_kind) {
    std::size_t pos = 0;
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(expected_kind)) {
        throw FormatError(std::string("expected netpbm magic P") + expected_kind, 0);
    }
    pos = 2;
    auto skip_space_and_comments = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_number = [&](const char* field) {
        skip_space_and_comments();
        const std::size_t start = pos;
        std::size_t value = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (value > (1u << 20)) throw FormatError(std::string("netpbm ") + field + " too large", start);
            ++pos;
        }
        if (pos == start) throw FormatError(std::string("netpbm header: missing ") + field, start);
        return std::pair{value, start};
    };
    Header h;
    h.kind = expected_kind;
    h.width = read_number("width").first;
    h.height = read_number("height").first;
    const auto [maxval, maxval_at] = read_number("maxval");
    if (maxval != 255) {
        throw FormatError("netpbm maxval must be 255, got " + std::to_string(maxval), maxval_at);
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError("netpbm header: missing separator before payload", pos);
    }
    h.payload_offset = pos + 1;
    if (h.width == 0 || h.height == 0) throw FormatError("netpbm image with zero extent", 2);
    const std::size_t channels = expected_kind == '6' ? 3 : 1;
    const std::size_t expected = h.width * h.height * channels;
    const std::size_t actual = bytes.size() - h.payload_offset;
    if (actual != expected) {
        throw FormatError("netpbm payload holds " + std::to_string(actual) + " bytes, expected " +
                              std::to_string(expected),
                          h.payload_offset);
    }
    return h;
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::string& header,
                      const std::vector<std::uint8_t>& payload) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << header;
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error("short write to " + path.string());
}

}  // namespace netpbm

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
    const auto h = netpbm::parse_header(bytes, '5');
    GrayImage g{h.height, h.width, {}};
    g.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), bytes.end());
    return g;
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(netpbm::read_all(path)); }

inline void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    netpbm::write_all(path, "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
                      image.values);
}

/// Masks are stored as 0 (background) / 255 (foreground); any other value is rejected.
inline Mask decode_mask_pgm(const std::vector<std::uint8_t>& bytes) {
    const auto h = netpbm::parse_header(bytes, '5');
    Mask m(h.height, h.width);
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
        const std::uint8_t v = bytes[h.payload_offset + i];
        if (v != 0 && v != 255) {
            throw FormatError("mask pixel value " + std::to_string(v) + " is neither 0 nor 255",
                              h.payload_offset + i);
        }
        m.bits[i] = v ? 1 : 0;
    }
    return m;
}

inline Mask read_mask(const std::filesystem::path& path) { return decode_mask_pgm(netpbm::read_all(path)); }

inline void write_mask(const std::filesystem::path& path, const Mask& mask) {
    GrayImage g{mask.height, mask.width, std::vector<std::uint8_t>(mask.bits.size())};
    for (std::size_t i = 0; i < mask.bits.size(); ++i) g.values[i] = mask.bits[i] ? 255 : 0;
    write_pgm(path, g);
}

/// Pixels are quantized to round(255·v); an image whose values are multiples of
/// 1/255 survives write→read unchanged.
inline void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::vector<std::uint8_t> payload(3 * image.height * image.width);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                payload[(y * image.width + x) * 3 + c] = quantize_unit(image.at(c, y, x));
    netpbm::write_all(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
                      payload);
}

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
    const auto h = netpbm::parse_header(bytes, '6');
    Image img(h.height, h.width);
    for (std::size_t y = 0; y < h.height; ++y)
        for (std::size_t x = 0; x < h.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(bytes[h.payload_offset + (y * h.width + x) * 3 + c]) / 255.0f;
    return img;
}

inline Image read_ppm(const std::filesystem::path& path) { return decode_ppm(netpbm::read_all(path)); }

}  // namespace ldag
