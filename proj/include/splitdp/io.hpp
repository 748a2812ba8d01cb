#pragma once

// Little-endian byte helpers and the on-disk artifact formats that belong to
// the core module (embedding table). Projection and soft-prompt files live
// next to their types.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace splitdp {

using Bytes = std::vector<uint8_t>;

class ByteWriter {
public:
    void magic(std::string_view tag) { out_.insert(out_.end(), tag.begin(), tag.end()); }
    void u8(uint8_t v) { out_.push_back(v); }
    void u16(uint16_t v) { put(v, 2); }
    void u32(uint32_t v) { put(v, 4); }
    void f32(float v) { put(std::bit_cast<uint32_t>(v), 4); }
    void f64(double v) { put(std::bit_cast<uint64_t>(v), 8); }
    void raw(std::span<const uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

    Bytes& bytes() noexcept { return out_; }
    Bytes take() noexcept { return std::move(out_); }

private:
    void put(uint64_t v, int width) {
        for (int i = 0; i < width; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    Bytes out_;
};

/// Bounds-checked reader; running off the end raises incomplete-frame.
class ByteReader {
public:
    explicit ByteReader(std::span<const uint8_t> in) : in_(in) {}

    bool magic(std::string_view tag) {
        need(tag.size());
        const bool ok = std::memcmp(in_.data() + pos_, tag.data(), tag.size()) == 0;
        pos_ += tag.size();
        return ok;
    }
    uint8_t u8() { return static_cast<uint8_t>(get(1)); }
    uint16_t u16() { return static_cast<uint16_t>(get(2)); }
    uint32_t u32() { return static_cast<uint32_t>(get(4)); }
    float f32() { return std::bit_cast<float>(static_cast<uint32_t>(get(4))); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::span<const uint8_t> raw(size_t n) {
        need(n);
        auto out = in_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    size_t position() const noexcept { return pos_; }
    size_t remaining() const noexcept { return in_.size() - pos_; }

private:
    void need(size_t n) const {
        if (in_.size() - pos_ < n) throw Error(ErrorKind::incomplete_frame, "truncated input");
    }
    uint64_t get(int width) {
        need(static_cast<size_t>(width));
        uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += static_cast<size_t>(width);
        return v;
    }

    std::span<const uint8_t> in_;
    size_t pos_ = 0;
};

inline Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + path);
}

// Embedding table: "DELE", version 1, dtype 0 (f32), b u32, V u32, V*b f32,
// all little-endian and row-major.

inline Bytes encode_table(const EmbeddingTable& table) {
    ByteWriter w;
    w.magic("DELE");
    w.u8(1);
    w.u8(0);
    w.u32(static_cast<uint32_t>(table.dim()));
    w.u32(static_cast<uint32_t>(table.vocab()));
    const Matrix& rows = table.rows();
    for (Eigen::Index i = 0; i < rows.size(); ++i) w.f32(static_cast<float>(rows.data()[i]));
    return w.take();
}

inline EmbeddingTable decode_table(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    if (!r.magic("DELE")) throw Error(ErrorKind::protocol, "bad embedding table magic");
    if (r.u8() != 1) throw Error(ErrorKind::protocol, "unsupported embedding table version");
    if (r.u8() != 0) throw Error(ErrorKind::protocol, "unsupported embedding table dtype");
    const uint32_t b = r.u32();
    const uint32_t vocab = r.u32();
    if (static_cast<uint64_t>(b) * vocab * 4 != r.remaining())
        throw Error(ErrorKind::incomplete_frame, "embedding table size mismatch");
    Matrix rows(vocab, b);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = r.f32();
    return EmbeddingTable(std::move(rows));
}

inline void write_matrix_f64(ByteWriter& w, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

inline Matrix read_matrix_f64(ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    return m;
}

}  // namespace splitdp
