#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace bmd::pgm {

// Binary P5, maxval 255, row-major. No comments are written; comments are
// skipped on read.

inline std::uint8_t quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

inline void write_bytes(const std::filesystem::path& path, int height, int width,
                        const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

inline void write_image(const std::filesystem::path& path, const ImageGrid& img) {
    std::vector<std::uint8_t> bytes(img.size());
    std::transform(img.begin(), img.end(), bytes.begin(), quantize);
    write_bytes(path, img.height(), img.width(), bytes);
}

/// Labels are stored raw (label 3 is byte 3).
inline void write_mask(const std::filesystem::path& path, const MaskGrid& mask) {
    std::vector<std::uint8_t> bytes(mask.begin(), mask.end());
    write_bytes(path, mask.height(), mask.width(), bytes);
}

namespace detail {

inline std::string next_token(std::istream& in) {
    std::string tok;
    char ch = 0;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) {
                break;
            }
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

} // namespace detail

inline Grid<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingArtifact(path.string());
    }
    if (detail::next_token(in) != "P5") {
        throw std::runtime_error("not a binary PGM: " + path.string());
    }
    const int width = std::stoi(detail::next_token(in));
    const int height = std::stoi(detail::next_token(in));
    const int maxval = std::stoi(detail::next_token(in));
    if (maxval != 255 || width <= 0 || height <= 0) {
        throw std::runtime_error("unsupported PGM header: " + path.string());
    }
    Grid<std::uint8_t> g(height, width);
    in.read(reinterpret_cast<char*>(g.values().data()), static_cast<std::streamsize>(g.size()));
    if (in.gcount() != static_cast<std::streamsize>(g.size())) {
        throw std::runtime_error("truncated PGM: " + path.string());
    }
    return g;
}

inline ImageGrid read_image(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    ImageGrid img(bytes.height(), bytes.width());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img[i] = bytes[i] / 255.0;
    }
    return img;
}

inline MaskGrid read_mask(const std::filesystem::path& path) { return read_bytes(path); }

} // namespace bmd::pgm
