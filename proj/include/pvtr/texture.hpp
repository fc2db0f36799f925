#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "pvtr/io.hpp"

namespace pvtr {

/// H x W x C image, real32, row-major, channel-interleaved, values nominally
/// in [0,1]. This is the private asset the pipeline decomposes and rebuilds.
struct Texture {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 3;
    std::vector<float> data;

    Texture() = default;
    Texture(std::uint32_t h, std::uint32_t w, std::uint32_t c = 3, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    const float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool same_shape(const Texture& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

inline double mse(const Texture& a, const Texture& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: texture shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

// --- PTEX container ---------------------------------------------------------
// magic "PTEX", version u8 = 1, H u32, W u32, C u32, then H*W*C real32 LE.

inline io::Bytes serialize_texture(const Texture& t) {
    io::Bytes out;
    io::put_magic(out, "PTEX");
    io::put_u8(out, 1);
    io::put_u32(out, t.height);
    io::put_u32(out, t.width);
    io::put_u32(out, t.channels);
    for (float v : t.data) io::put_f32(out, v);
    return out;
}

inline Texture deserialize_texture(const io::Bytes& bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("PTEX", "texture");
    if (r.u8() != 1) throw std::runtime_error("texture: unsupported version");
    const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
    Texture t(h, w, c);
    for (float& v : t.data) v = r.f32();
    return t;
}

inline void save_texture(const std::string& path, const Texture& t) {
    io::write_file(path, serialize_texture(t));
}

inline Texture load_texture(const std::string& path) {
    return deserialize_texture(io::read_file(path));
}

// --- binary PPM (P6, 8-bit) -------------------------------------------------

namespace detail {

inline int ppm_token(io::ByteReader& r) {
    // Skips whitespace and '#' comments, then parses a decimal integer.
    int c = r.u8();
    while (true) {
        if (c == '#') {
            while (c != '\n') c = r.u8();
        } else if (std::isspace(c)) {
            c = r.u8();
        } else {
            break;
        }
    }
    if (!std::isdigit(c)) throw std::runtime_error("ppm: malformed header");
    int value = 0;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (r.remaining() == 0) break;
        c = r.u8();
    }
    return value;
}

}  // namespace detail

/// Parses a binary P6 PPM with maxval 255; samples scale linearly to [0,1].
inline Texture import_ppm(const std::string& path) {
    const io::Bytes bytes = io::read_file(path);
    io::ByteReader r(bytes);
    if (r.u8() != 'P' || r.u8() != '6') throw std::runtime_error("ppm: not a P6 file");
    const int w = detail::ppm_token(r);
    const int h = detail::ppm_token(r);
    const int maxval = detail::ppm_token(r);
    if (maxval != 255) throw std::runtime_error("ppm: unsupported maxval (must be 255)");
    if (w <= 0 || h <= 0) throw std::runtime_error("ppm: bad dimensions");
    // ppm_token consumed the single whitespace byte after maxval.
    Texture t(static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 3);
    if (r.remaining() < t.data.size()) throw std::runtime_error("ppm: truncated pixel data");
    for (float& v : t.data) v = static_cast<float>(r.u8()) / 255.0f;
    return t;
}

inline void export_ppm(const Texture& t, const std::string& path) {
    if (t.channels != 3) throw std::invalid_argument("ppm: texture must have 3 channels");
    std::string header =
        "P6\n" + std::to_string(t.width) + " " + std::to_string(t.height) + "\n255\n";
    io::Bytes out(header.begin(), header.end());
    out.reserve(out.size() + t.data.size());
    for (float v : t.data) {
        const float clamped = std::clamp(v, 0.0f, 1.0f);
        out.push_back(static_cast<std::uint8_t>(std::lround(clamped * 255.0f)));
    }
    io::write_file(path, out);
}

}  // namespace pvtr
