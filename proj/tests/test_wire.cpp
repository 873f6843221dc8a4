#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <random>
#include <vector>

#include "mrpc/wire.hpp"

using namespace mrpc;
using namespace mrpc::wire;

namespace {

MessageHeader random_header(std::mt19937_64& rng) {
  MessageHeader h;
  h.kind = static_cast<MsgKind>(rng() % (kMaxKind + 1));
  h.version = kVersion;
  h.flags = static_cast<uint8_t>(rng());
  h.rpc_id = static_cast<uint32_t>(rng());
  h.cookie = rng();
  h.payload_len = static_cast<uint32_t>(rng());
  return h;
}

}  // namespace

TEST_CASE("header layout zero case") {
  MessageHeader h;
  h.kind = MsgKind::kRequest;
  auto b = encode_header(h);
  REQUIRE(b.size() == kHeaderSize);
  CHECK(b[0] == 'M');
  CHECK(b[1] == 'R');
  CHECK(b[2] == 'P');
  CHECK(b[3] == 'C');
  CHECK(b[4] == 1);  // version
  CHECK(b[5] == 0);  // kind
  for (std::size_t i = 6; i < kHeaderSize; ++i) CHECK(b[i] == 0);
}

TEST_CASE("header payload_len is little-endian in the last 4 bytes") {
  MessageHeader h;
  h.payload_len = 42;
  auto b = encode_header(h);
  CHECK(b[kHeaderSize - 4] == 0x2A);
  CHECK(b[kHeaderSize - 3] == 0x00);
  CHECK(b[kHeaderSize - 2] == 0x00);
  CHECK(b[kHeaderSize - 1] == 0x00);
}

TEST_CASE("header round-trip fuzz") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    MessageHeader h = random_header(rng);
    auto bytes = encode_header(h);
    MessageHeader back;
    REQUIRE(decode_header(bytes, back) == Status::kOk);
    REQUIRE(back == h);
  }
}

TEST_CASE("header decode errors") {
  MessageHeader h;
  auto bytes = encode_header(h);

  MessageHeader out;
  CHECK(decode_header(std::span(bytes).first(21), out) ==
        Status::kShortBuffer);
  CHECK(decode_header(std::span(bytes).first(kHeaderSize - 1), out) ==
        Status::kShortBuffer);

  auto bad_magic = bytes;
  bad_magic[2] ^= 0xFF;
  CHECK(decode_header(bad_magic, out) == Status::kBadMagic);

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(decode_header(bad_version, out) == Status::kBadVersion);

  auto bad_kind = bytes;
  bad_kind[5] = kMaxKind + 1;
  CHECK(decode_header(bad_kind, out) == Status::kBadKind);
}

TEST_CASE("rpc id derivation") {
  uint32_t id = 0;
  CHECK(rpc_id_from_name("", id) == Status::kEmptyName);

  // (0x811C9DC5 ^ 'a') * 0x01000193 mod 2^32, frozen from a reference
  // FNV-1a implementation
  REQUIRE(rpc_id_from_name("a", id) == Status::kOk);
  CHECK(id == 0xE40C292Cu);

  uint32_t echo1 = 0;
  uint32_t echo2 = 0;
  rpc_id_from_name("echo", echo1);
  rpc_id_from_name("echo", echo2);
  CHECK(echo1 == echo2);
  CHECK(echo1 == 0xD49DD484u);  // frozen reference value
}

TEST_CASE("proc_uint64") {
  auto enc = ProcContext::encoder();
  uint64_t zero = 0;
  REQUIRE(proc_uint64(enc, zero) == Status::kOk);
  REQUIRE(enc.buffer().size() == 8);
  for (uint8_t b : enc.buffer()) CHECK(b == 0);

  uint64_t v = 123456789;
  auto enc2 = ProcContext::encoder();
  proc_uint64(enc2, v);
  auto dec = ProcContext::decoder(enc2.buffer());
  uint64_t back = 0;
  REQUIRE(proc_uint64(dec, back) == Status::kOk);
  CHECK(back == 123456789);

  std::vector<uint8_t> seven(7, 0);
  auto short_dec = ProcContext::decoder(seven);
  uint64_t out = 0;
  CHECK(proc_uint64(short_dec, out) == Status::kDecodeOverrun);
}

TEST_CASE("proc_bytes") {
  auto enc = ProcContext::encoder();
  std::vector<uint8_t> empty;
  REQUIRE(proc_bytes(enc, empty) == Status::kOk);
  REQUIRE(enc.buffer().size() == 4);
  for (uint8_t b : enc.buffer()) CHECK(b == 0);

  // declared length exceeds remaining buffer
  std::vector<uint8_t> lying(4 + 50, 0);
  store_le32(lying.data(), 100);
  auto dec = ProcContext::decoder(lying);
  std::vector<uint8_t> out;
  CHECK(proc_bytes(dec, out) == Status::kLengthOverflow);
}

TEST_CASE("proc_bytes round-trip fuzz") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    std::size_t len = rng() % 65537;
    std::vector<uint8_t> data(len);
    for (auto& b : data) b = static_cast<uint8_t>(rng());
    auto enc = ProcContext::encoder();
    REQUIRE(proc_bytes(enc, data) == Status::kOk);
    auto dec = ProcContext::decoder(enc.buffer());
    std::vector<uint8_t> back;
    REQUIRE(proc_bytes(dec, back) == Status::kOk);
    REQUIRE(back == data);
  }
}

TEST_CASE("proc mixed sequence round-trip") {
  std::mt19937_64 rng(13);
  for (int round = 0; round < 500; ++round) {
    std::vector<int> ops;
    std::vector<uint64_t> u64s;
    std::vector<uint32_t> u32s;
    std::vector<std::vector<uint8_t>> blobs;
    auto enc = ProcContext::encoder();
    int n = 1 + static_cast<int>(rng() % 16);
    for (int i = 0; i < n; ++i) {
      switch (rng() % 3) {
        case 0: {
          ops.push_back(0);
          u64s.push_back(rng());
          proc_uint64(enc, u64s.back());
          break;
        }
        case 1: {
          ops.push_back(1);
          u32s.push_back(static_cast<uint32_t>(rng()));
          proc_uint32(enc, u32s.back());
          break;
        }
        default: {
          ops.push_back(2);
          std::vector<uint8_t> blob(rng() % 256);
          for (auto& b : blob) b = static_cast<uint8_t>(rng());
          blobs.push_back(blob);
          proc_bytes(enc, blobs.back());
          break;
        }
      }
    }
    auto dec = ProcContext::decoder(enc.buffer());
    std::size_t i64 = 0;
    std::size_t i32 = 0;
    std::size_t ib = 0;
    for (int op : ops) {
      if (op == 0) {
        uint64_t v = 0;
        REQUIRE(proc_uint64(dec, v) == Status::kOk);
        REQUIRE(v == u64s[i64++]);
      } else if (op == 1) {
        uint32_t v = 0;
        REQUIRE(proc_uint32(dec, v) == Status::kOk);
        REQUIRE(v == u32s[i32++]);
      } else {
        std::vector<uint8_t> v;
        REQUIRE(proc_bytes(dec, v) == Status::kOk);
        REQUIRE(v == blobs[ib++]);
      }
    }
    REQUIRE(dec.remaining() == 0);
  }
}

TEST_CASE("crc32 check values") {
  CHECK(checksum({}) == 0x00000000u);
  const char* s = "123456789";
  CHECK(checksum(std::span(reinterpret_cast<const uint8_t*>(s), 9)) ==
        0xCBF43926u);
}

TEST_CASE("crc32 agrees with zlib") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    std::size_t len = rng() % 4096;
    std::vector<uint8_t> data(len);
    for (auto& b : data) b = static_cast<uint8_t>(rng());
    uint32_t ours = checksum(data);
    uint32_t ref = static_cast<uint32_t>(
        ::crc32(0L, data.data(), static_cast<uInt>(data.size())));
    REQUIRE(ours == ref);
  }
}

TEST_CASE("crc32 doubling changes the value") {
  // brute force over short inputs: all single bytes plus random 2..8 byte
  // strings; crc(b||b) must differ from crc(b) when crc(b) != 0
  std::mt19937_64 rng(19);
  auto check_one = [](const std::vector<uint8_t>& b) {
    uint32_t one = checksum(b);
    if (one == 0) return;
    std::vector<uint8_t> twice(b);
    twice.insert(twice.end(), b.begin(), b.end());
    REQUIRE(checksum(twice) != one);
  };
  for (int v = 0; v < 256; ++v) {
    check_one({static_cast<uint8_t>(v)});
  }
  for (int i = 0; i < 512; ++i) {
    std::vector<uint8_t> b(2 + rng() % 7);
    for (auto& x : b) x = static_cast<uint8_t>(rng());
    check_one(b);
  }
}
