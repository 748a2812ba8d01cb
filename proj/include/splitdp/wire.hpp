#pragma once

// Bit-exact request/reply frames for privatized latents.
//
// Request ("DELF"), little-endian:
//   magic[4] version:u8=1 n:u8 flags:u16=0 d:u32 T:u32 A:f64 c:f64   (32 bytes)
//   payload: T*d levels of n bits, token-major, LSB-first, zero padded
//   crc:u32  CRC-32 (IEEE) over header + payload
//
// Reply ("DELR"):
//   magic[4] version:u8=1 status:u8 L:u32 ids:u32[L] crc:u32

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "io.hpp"
#include "mech.hpp"

namespace splitdp {

inline constexpr uint8_t kWireVersion = 1;
inline constexpr size_t kFrameHeaderSize = 32;
inline constexpr size_t kReplyHeaderSize = 10;
inline constexpr size_t kMaxFrameBytes = size_t{16} << 20;

namespace detail {

constexpr std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

inline constexpr auto kCrcTable = make_crc_table();

}  // namespace detail

/// CRC-32 with the reflected IEEE 802.3 polynomial (as in zlib and PNG).
inline uint32_t crc32(std::span<const uint8_t> bytes, uint32_t crc = 0) {
    crc = ~crc;
    for (uint8_t b : bytes) crc = detail::kCrcTable[(crc ^ b) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

inline size_t payload_size(uint64_t T, uint64_t d, unsigned n) { return static_cast<size_t>((T * d * n + 7) / 8); }

inline size_t frame_size(uint64_t T, uint64_t d, unsigned n) { return kFrameHeaderSize + payload_size(T, d, n) + 4; }

inline Bytes pack(const QuantizedBatch& q) {
    require(q.n >= 1 && q.n <= 8, ErrorKind::invalid_parameter, "bit-width n must be in [1, 8]");
    require(q.T >= 1 && q.d >= 1, ErrorKind::invalid_parameter, "empty batch");
    require(q.levels.size() == static_cast<size_t>(q.T) * q.d, ErrorKind::invalid_parameter,
            "level count does not match T x d");
    require(frame_size(q.T, q.d, q.n) <= kMaxFrameBytes, ErrorKind::invalid_parameter, "frame exceeds 16 MiB");
    ByteWriter w;
    w.magic("DELF");
    w.u8(kWireVersion);
    w.u8(static_cast<uint8_t>(q.n));
    w.u16(0);
    w.u32(q.d);
    w.u32(q.T);
    w.f64(q.A);
    w.f64(q.c);

    Bytes& out = w.bytes();
    const size_t base = out.size();
    out.resize(base + payload_size(q.T, q.d, q.n), 0);
    const unsigned top = (1u << q.n) - 1;
    size_t bit = 0;
    for (uint8_t level : q.levels) {
        require(level <= top, ErrorKind::invalid_parameter, "level index >= 2^n");
        for (unsigned k = 0; k < q.n; ++k, ++bit)
            if ((level >> k) & 1u) out[base + bit / 8] |= static_cast<uint8_t>(1u << (bit % 8));
    }
    w.u32(crc32(out));
    return w.take();
}

/// Validates a request header and returns the full frame length it implies.
inline size_t request_length(std::span<const uint8_t> header) {
    ByteReader r(header.first(std::min(header.size(), kFrameHeaderSize)));
    if (!r.magic("DELF")) throw Error(ErrorKind::protocol, "bad frame magic");
    if (r.u8() != kWireVersion) throw Error(ErrorKind::protocol, "unsupported frame version");
    const unsigned n = r.u8();
    if (n < 1 || n > 8) throw Error(ErrorKind::protocol, "bit-width outside [1, 8]");
    if (r.u16() != 0) throw Error(ErrorKind::protocol, "unknown frame flags");
    const uint64_t d = r.u32();
    const uint64_t T = r.u32();
    if (T == 0 || d == 0) throw Error(ErrorKind::protocol, "empty frame dimensions");
    const unsigned __int128 bits = static_cast<unsigned __int128>(T) * d * n;
    if ((bits + 7) / 8 + kFrameHeaderSize + 4 > kMaxFrameBytes) throw Error(ErrorKind::protocol, "frame exceeds 16 MiB");
    return frame_size(T, d, n);
}

inline QuantizedBatch unpack(std::span<const uint8_t> bytes) {
    const size_t total = request_length(bytes);
    if (bytes.size() < total) throw Error(ErrorKind::incomplete_frame, "truncated frame");
    if (bytes.size() > total) throw Error(ErrorKind::protocol, "trailing bytes after frame");
    const uint32_t expected = crc32(bytes.first(total - 4));
    ByteReader tail(bytes.subspan(total - 4));
    if (tail.u32() != expected) throw Error(ErrorKind::corrupt_payload, "frame CRC mismatch");

    ByteReader r(bytes);
    r.raw(5);
    QuantizedBatch q;
    q.n = r.u8();
    r.u16();
    q.d = r.u32();
    q.T = r.u32();
    q.A = r.f64();
    q.c = r.f64();
    if (!(std::isfinite(q.A) && std::isfinite(q.c) && q.c > 0.0 && q.A >= q.c))
        throw Error(ErrorKind::protocol, "frame scale fields invalid");
    const auto payload = r.raw(payload_size(q.T, q.d, q.n));
    q.levels.resize(static_cast<size_t>(q.T) * q.d);
    size_t bit = 0;
    for (auto& level : q.levels) {
        unsigned v = 0;
        for (unsigned k = 0; k < q.n; ++k, ++bit) v |= ((payload[bit / 8] >> (bit % 8)) & 1u) << k;
        level = static_cast<uint8_t>(v);
    }
    return q;
}

enum class ReplyStatus : uint8_t { ok = 0, protocol = 1, corrupt = 2, internal = 3 };

struct Reply {
    ReplyStatus status = ReplyStatus::ok;
    std::vector<uint32_t> tokens;

    friend bool operator==(const Reply&, const Reply&) = default;
};

inline Bytes encode_reply(const Reply& reply) {
    ByteWriter w;
    w.magic("DELR");
    w.u8(kWireVersion);
    w.u8(static_cast<uint8_t>(reply.status));
    w.u32(static_cast<uint32_t>(reply.tokens.size()));
    for (uint32_t id : reply.tokens) w.u32(id);
    w.u32(crc32(w.bytes()));
    return w.take();
}

inline size_t reply_length(std::span<const uint8_t> header) {
    ByteReader r(header.first(std::min(header.size(), kReplyHeaderSize)));
    if (!r.magic("DELR")) throw Error(ErrorKind::protocol, "bad reply magic");
    if (r.u8() != kWireVersion) throw Error(ErrorKind::protocol, "unsupported reply version");
    if (r.u8() > 3) throw Error(ErrorKind::protocol, "unknown reply status");
    const uint64_t count = r.u32();
    if (count * 4 + kReplyHeaderSize + 4 > kMaxFrameBytes) throw Error(ErrorKind::protocol, "reply exceeds 16 MiB");
    return kReplyHeaderSize + static_cast<size_t>(count) * 4 + 4;
}

inline Reply decode_reply(std::span<const uint8_t> bytes) {
    const size_t total = reply_length(bytes);
    if (bytes.size() < total) throw Error(ErrorKind::incomplete_frame, "truncated reply");
    if (bytes.size() > total) throw Error(ErrorKind::protocol, "trailing bytes after reply");
    ByteReader tail(bytes.subspan(total - 4));
    if (tail.u32() != crc32(bytes.first(total - 4))) throw Error(ErrorKind::corrupt_payload, "reply CRC mismatch");
    ByteReader r(bytes);
    r.raw(5);
    Reply reply;
    reply.status = static_cast<ReplyStatus>(r.u8());
    const uint32_t count = r.u32();
    reply.tokens.reserve(count);
    for (uint32_t i = 0; i < count; ++i) reply.tokens.push_back(r.u32());
    return reply;
}

}  // namespace splitdp
