#include <gtest/gtest.h>
#include <zlib.h>

#include <functional>
#include <optional>
#include <string>

#include "splitdp/io.hpp"
#include "splitdp/wire.hpp"

using namespace splitdp;

namespace {

Bytes fixture(const std::string& name) { return read_file(std::string(SPLITDP_FIXTURES) + "/" + name); }

QuantizedBatch random_batch(Rng& rng) {
    QuantizedBatch q;
    q.n = 1 + static_cast<unsigned>(rng.below(8));
    q.T = 1 + static_cast<uint32_t>(rng.below(20));
    q.d = 1 + static_cast<uint32_t>(rng.below(40));
    q.c = 0.01 + rng.uniform();
    q.A = q.c * (1.0 + 10 * rng.uniform());
    q.levels.resize(static_cast<size_t>(q.T) * q.d);
    for (auto& level : q.levels) level = static_cast<uint8_t>(rng.below(1u << q.n));
    return q;
}

std::optional<ErrorKind> error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

uint32_t zlib_crc(const Bytes& b) {
    return static_cast<uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

}  // namespace

TEST(Crc, CheckValueAndZlibAgreement) {
    const std::string check = "123456789";
    EXPECT_EQ(splitdp::crc32(Bytes(check.begin(), check.end())), 0xCBF43926u);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        Bytes b(rng.below(300));
        for (auto& x : b) x = static_cast<uint8_t>(rng.below(256));
        ASSERT_EQ(splitdp::crc32(b), zlib_crc(b));
    }
}

TEST(FrameSize, Examples) {
    EXPECT_EQ(payload_size(2, 3, 4), 3u);
    EXPECT_EQ(frame_size(2, 3, 4), 39u);
    EXPECT_EQ(payload_size(1024, 128, 4), 65536u);
    EXPECT_EQ(size_t{1024} * 4096 * 4, 16777216u);
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const uint64_t T = 1 + rng.below(5000), d = 1 + rng.below(512), n = 1 + rng.below(8);
        ASSERT_EQ(frame_size(T, d, static_cast<unsigned>(n)), (T * d * n + 7) / 8 + 36);
    }
}

TEST(Pack, MatchesGoldenFixtures) {
    const QuantizedBatch a{2, 3, 4, 0.1, 0.05, {1, 2, 3, 4, 5, 15}};
    EXPECT_EQ(pack(a), fixture("request_n4_t2_d3.bin"));
    const QuantizedBatch b{1, 1, 1, 0.1, 0.05, {0}};
    const Bytes packed = pack(b);
    EXPECT_EQ(packed, fixture("request_n1_t1_d1.bin"));
    EXPECT_EQ(packed.size(), 37u);
    EXPECT_EQ(packed[32], 0x00);
    QuantizedBatch c{3, 5, 3, 0.25, 0.05, {}};
    for (int i = 0; i < 15; ++i) c.levels.push_back(static_cast<uint8_t>((7 * i + 3) % 8));
    EXPECT_EQ(pack(c), fixture("request_n3_t3_d5.bin"));
    EXPECT_EQ(unpack(fixture("request_n3_t3_d5.bin")), c);
    EXPECT_EQ(unpack(fixture("request_n4_t2_d3.bin")), a);
}

TEST(Pack, RejectsInvalidBatches) {
    QuantizedBatch q{1, 1, 9, 0.1, 0.05, {0}};
    EXPECT_EQ(error_of([&] { pack(q); }), ErrorKind::invalid_parameter);
    q.n = 2;
    q.levels = {4};
    EXPECT_EQ(error_of([&] { pack(q); }), ErrorKind::invalid_parameter);
    q.levels = {0, 1};
    EXPECT_EQ(error_of([&] { pack(q); }), ErrorKind::invalid_parameter);
}

TEST(Unpack, RandomRoundTrips) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto q = random_batch(rng);
        const Bytes frame = pack(q);
        ASSERT_EQ(frame.size(), frame_size(q.T, q.d, q.n));
        ASSERT_EQ(unpack(frame), q);
    }
}

TEST(Unpack, EveryPayloadBitFlipIsCorruption) {
    Rng rng(4);
    for (int i = 0; i < 30; ++i) {
        const Bytes frame = pack(random_batch(rng));
        for (size_t bit = kFrameHeaderSize * 8; bit < frame.size() * 8; ++bit) {
            Bytes bad = frame;
            bad[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
            ASSERT_EQ(error_of([&] { unpack(bad); }), ErrorKind::corrupt_payload) << bit;
        }
        // Header bits are caught too, by validation or by the CRC.
        for (size_t bit = 0; bit < kFrameHeaderSize * 8; ++bit) {
            Bytes bad = frame;
            bad[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
            ASSERT_TRUE(error_of([&] { unpack(bad); }).has_value()) << bit;
        }
    }
}

TEST(Unpack, StructuralErrors) {
    const Bytes frame = pack(QuantizedBatch{2, 3, 4, 0.1, 0.05, {1, 2, 3, 4, 5, 15}});
    Bytes bad = frame;
    std::copy_n("XXXX", 4, bad.begin());
    EXPECT_EQ(error_of([&] { unpack(bad); }), ErrorKind::protocol);
    bad = frame;
    bad[4] = 2;
    EXPECT_EQ(error_of([&] { unpack(bad); }), ErrorKind::protocol);
    bad = frame;
    bad[6] = 1;  // flags
    EXPECT_EQ(error_of([&] { unpack(bad); }), ErrorKind::protocol);
    EXPECT_EQ(error_of([&] { unpack(Bytes(frame.begin(), frame.end() - 1)); }), ErrorKind::incomplete_frame);
    EXPECT_EQ(error_of([&] { unpack(Bytes(frame.begin(), frame.begin() + 10)); }), ErrorKind::incomplete_frame);
    bad = frame;
    bad.push_back(0);
    EXPECT_EQ(error_of([&] { unpack(bad); }), ErrorKind::protocol);
}

TEST(Unpack, OversizedHeaderIsRejectedBeforeReading) {
    ByteWriter w;
    w.magic("DELF");
    w.u8(1);
    w.u8(8);
    w.u16(0);
    w.u32(4096);
    w.u32(4097);  // 4096 * 4097 bytes > 16 MiB
    w.f64(0.1);
    w.f64(0.05);
    EXPECT_EQ(error_of([&] { request_length(w.bytes()); }), ErrorKind::protocol);
    EXPECT_EQ(request_length(pack(QuantizedBatch{1, 1, 1, 0.1, 0.05, {1}})), 37u);
}

TEST(Unpack, FuzzedInputsOnlyRaiseErrors) {
    Rng rng(5);
    for (int i = 0; i < 20000; ++i) {
        Bytes b;
        if (i % 2 == 0) {
            b = pack(random_batch(rng));
            const size_t flips = 1 + rng.below(4);
            for (size_t f = 0; f < flips; ++f) b[rng.below(b.size())] ^= static_cast<uint8_t>(1 + rng.below(255));
            if (rng.below(4) == 0) b.resize(rng.below(b.size() + 1));
        } else {
            b.resize(rng.below(64));
            for (auto& x : b) x = static_cast<uint8_t>(rng.below(256));
            if (b.size() >= 4 && rng.below(2)) std::copy_n("DELF", 4, b.begin());
        }
        try {
            const auto q = unpack(b);
            ASSERT_EQ(pack(q), b);
        } catch (const Error&) {
        }
    }
}

TEST(Unpack, WidthOnlyChangesPayload) {
    const QuantizedBatch one{4, 2, 1, 0.1, 0.05, {0, 1, 1, 0, 1, 1, 0, 0}};
    QuantizedBatch four = one;
    four.n = 4;
    const Bytes a = pack(one), b = pack(four);
    EXPECT_EQ(a.size(), 32u + 1 + 4);
    EXPECT_EQ(b.size(), 32u + 4 + 4);
    EXPECT_EQ(Bytes(a.begin(), a.begin() + 5), Bytes(b.begin(), b.begin() + 5));
    EXPECT_EQ(Bytes(a.begin() + 6, a.begin() + 32), Bytes(b.begin() + 6, b.begin() + 32));
    EXPECT_EQ(unpack(a).levels, unpack(b).levels);
}

TEST(ReplyFrame, GoldenAndRoundTrip) {
    const Reply ok{ReplyStatus::ok, {7, 42, 255, 65536}};
    EXPECT_EQ(encode_reply(ok), fixture("reply_ok.bin"));
    EXPECT_EQ(decode_reply(fixture("reply_ok.bin")), ok);
    const Reply corrupt{ReplyStatus::corrupt, {}};
    EXPECT_EQ(encode_reply(corrupt), fixture("reply_corrupt.bin"));
    EXPECT_EQ(reply_length(fixture("reply_ok.bin")), 30u);
}

TEST(ReplyFrame, Errors) {
    Bytes b = encode_reply(Reply{ReplyStatus::ok, {1, 2}});
    Bytes bad = b;
    bad[12] ^= 1;
    EXPECT_EQ(error_of([&] { decode_reply(bad); }), ErrorKind::corrupt_payload);
    bad = b;
    bad[5] = 9;
    EXPECT_EQ(error_of([&] { decode_reply(bad); }), ErrorKind::protocol);
    EXPECT_EQ(error_of([&] { decode_reply(Bytes(b.begin(), b.end() - 2)); }), ErrorKind::incomplete_frame);
}
