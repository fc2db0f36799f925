#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/io.hpp"

namespace pvtr::net {

// Framed binary protocol, all integers little-endian:
//   magic "PVTR" | version u8 | msg_type u8 | session_id u64 | frame_id u64 |
//   payload_len u32 | payload bytes
inline constexpr char kMagic[] = "PVTR";
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 8 + 8 + 4;
inline constexpr std::uint32_t kMaxPayload = 64u * 1024 * 1024;

enum class MsgType : std::uint8_t {
    Hello = 1,
    HelloAck = 2,
    OffloadLatent = 3,
    ReturnComponents = 4,
    Error = 5,
    Bye = 6,
};

inline bool msg_type_known(std::uint8_t t) {
    return t >= static_cast<std::uint8_t>(MsgType::Hello) &&
           t <= static_cast<std::uint8_t>(MsgType::Bye);
}

enum class ErrorCode : std::uint32_t {
    HashMismatch = 1,
    BadConfig = 2,
    BadLatentLength = 3,
    BadFrameOrder = 4,
    Protocol = 5,
};

struct Envelope {
    std::uint8_t version = kVersion;
    MsgType type = MsgType::Hello;
    std::uint64_t session_id = 0;
    std::uint64_t frame_id = 0;
    io::Bytes payload;
};

inline io::Bytes encode_frame(const Envelope& env) {
    if (env.payload.size() > kMaxPayload) throw std::invalid_argument("wire: payload too large");
    io::Bytes out;
    out.reserve(kHeaderSize + env.payload.size());
    io::put_magic(out, kMagic);
    io::put_u8(out, env.version);
    io::put_u8(out, static_cast<std::uint8_t>(env.type));
    io::put_u64(out, env.session_id);
    io::put_u64(out, env.frame_id);
    io::put_u32(out, static_cast<std::uint32_t>(env.payload.size()));
    out.insert(out.end(), env.payload.begin(), env.payload.end());
    return out;
}

struct FrameHeader {
    std::uint8_t version = 0;
    MsgType type = MsgType::Hello;
    std::uint64_t session_id = 0;
    std::uint64_t frame_id = 0;
    std::uint32_t payload_len = 0;
};

/// Parses and validates the fixed-size header; payload bytes follow.
inline FrameHeader parse_header(const std::uint8_t* data, std::size_t size) {
    if (size < kHeaderSize) throw std::runtime_error("wire: truncated header");
    io::ByteReader r(data, size);
    r.expect_magic(kMagic, "wire");
    FrameHeader h;
    h.version = r.u8();
    if (h.version != kVersion) throw std::runtime_error("wire: unsupported version");
    const std::uint8_t t = r.u8();
    if (!msg_type_known(t)) throw std::runtime_error("wire: unknown message type");
    h.type = static_cast<MsgType>(t);
    h.session_id = r.u64();
    h.frame_id = r.u64();
    h.payload_len = r.u32();
    if (h.payload_len > kMaxPayload) throw std::runtime_error("wire: oversize payload");
    return h;
}

inline Envelope decode_frame(const io::Bytes& bytes) {
    const FrameHeader h = parse_header(bytes.data(), bytes.size());
    if (bytes.size() != kHeaderSize + h.payload_len)
        throw std::runtime_error("wire: frame length mismatch");
    Envelope env;
    env.version = h.version;
    env.type = h.type;
    env.session_id = h.session_id;
    env.frame_id = h.frame_id;
    env.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
    return env;
}

/// Per-session configuration agreed in the HELLO message:
///   B u32 | m u32 | offloaded ids (m x u32) | latent dim u32 |
///   codec hash u64 | calibration hash u64 | plane H u32 | plane W u32 |
///   channels u32
struct SessionConfig {
    std::uint32_t block = 0;
    std::vector<std::uint32_t> offloaded_ids;
    std::uint32_t latent_dim = 0;
    std::uint64_t codec_hash = 0;
    std::uint64_t calibration_hash = 0;
    std::uint32_t plane_height = 0;
    std::uint32_t plane_width = 0;
    std::uint32_t plane_channels = 3;

    std::size_t plane_size() const {
        return static_cast<std::size_t>(plane_height) * plane_width * plane_channels;
    }

    void validate() const {
        if (block == 0) throw std::runtime_error("session config: zero block");
        const std::uint32_t total = block * block;
        std::uint32_t prev = 0;
        bool first = true;
        for (std::uint32_t id : offloaded_ids) {
            if (id >= total) throw std::runtime_error("session config: component id out of range");
            if (!first && id <= prev) throw std::runtime_error("session config: ids not sorted");
            prev = id;
            first = false;
        }
        if (offloaded_ids.empty()) throw std::runtime_error("session config: nothing offloaded");
        if (codec_hash == 0 || calibration_hash == 0)
            throw std::runtime_error("session config: unset content hash");
        if (latent_dim == 0 || plane_height == 0 || plane_width == 0 || plane_channels == 0)
            throw std::runtime_error("session config: zero dimension");
    }
};

inline io::Bytes encode_session_config(const SessionConfig& cfg) {
    io::Bytes out;
    io::put_u32(out, cfg.block);
    io::put_u32(out, static_cast<std::uint32_t>(cfg.offloaded_ids.size()));
    for (std::uint32_t id : cfg.offloaded_ids) io::put_u32(out, id);
    io::put_u32(out, cfg.latent_dim);
    io::put_u64(out, cfg.codec_hash);
    io::put_u64(out, cfg.calibration_hash);
    io::put_u32(out, cfg.plane_height);
    io::put_u32(out, cfg.plane_width);
    io::put_u32(out, cfg.plane_channels);
    return out;
}

inline SessionConfig decode_session_config(const io::Bytes& payload) {
    io::ByteReader r(payload);
    SessionConfig cfg;
    cfg.block = r.u32();
    cfg.offloaded_ids.resize(r.u32());
    for (auto& id : cfg.offloaded_ids) id = r.u32();
    cfg.latent_dim = r.u32();
    cfg.codec_hash = r.u64();
    cfg.calibration_hash = r.u64();
    cfg.plane_height = r.u32();
    cfg.plane_width = r.u32();
    cfg.plane_channels = r.u32();
    if (r.remaining() != 0) throw std::runtime_error("session config: trailing bytes");
    cfg.validate();
    return cfg;
}

struct WireError {
    ErrorCode code = ErrorCode::Protocol;
    std::string message;
};

inline io::Bytes encode_error(const WireError& err) {
    io::Bytes out;
    io::put_u32(out, static_cast<std::uint32_t>(err.code));
    out.insert(out.end(), err.message.begin(), err.message.end());
    return out;
}

inline WireError decode_error(const io::Bytes& payload) {
    io::ByteReader r(payload);
    WireError err;
    err.code = static_cast<ErrorCode>(r.u32());
    const io::Bytes rest = r.bytes(r.remaining());
    err.message.assign(rest.begin(), rest.end());
    return err;
}

inline io::Bytes encode_f32_payload(const std::vector<float>& values) {
    io::Bytes out;
    out.reserve(values.size() * 4);
    for (float v : values) io::put_f32(out, v);
    return out;
}

inline std::vector<float> decode_f32_payload(const io::Bytes& payload) {
    if (payload.size() % 4 != 0) throw std::runtime_error("wire: misaligned real32 payload");
    io::ByteReader r(payload);
    std::vector<float> out(payload.size() / 4);
    for (float& v : out) v = r.f32();
    return out;
}

}  // namespace pvtr::net
