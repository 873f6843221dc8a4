#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrpc/status.hpp"

namespace mrpc::wire {

// Every metadata message and every framed unit on a connection starts with
// the same fixed 24-byte header:
//
// +--------+---------+------+-------+-----+--------+--------+-------------+
// | magic  | version | kind | flags | pad | rpc_id | cookie | payload_len |
// | 4 byte | 1 byte  | 1 B  | 1 B   | 1 B | 4 byte | 8 byte | 4 byte      |
// +--------+---------+------+-------+-----+--------+--------+-------------+
//
// All multi-byte integers are little-endian.

inline constexpr std::array<uint8_t, 4> kMagic{'M', 'R', 'P', 'C'};
inline constexpr uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr uint32_t kDefaultEagerLimit = 4096;

enum class MsgKind : uint8_t {
  kRequest = 0,
  kResponse = 1,
  kBulkGet = 2,
  kBulkPut = 3,
  kBulkData = 4,
  kBulkAck = 5,
  kError = 6,
  kHello = 7,  // connection identification, never leaves the tcp transport
};

inline constexpr uint8_t kMaxKind = static_cast<uint8_t>(MsgKind::kHello);

// flags bitfield
inline constexpr uint8_t kFlagNoResponse = 0x01;
inline constexpr uint8_t kFlagHasBulk = 0x02;

// Metadata kinds are size-capped by the eager limit; bulk kinds are not.
inline constexpr bool is_metadata_kind(MsgKind k) {
  return k == MsgKind::kRequest || k == MsgKind::kResponse ||
         k == MsgKind::kError;
}

struct MessageHeader {
  MsgKind kind = MsgKind::kRequest;
  uint8_t version = kVersion;
  uint8_t flags = 0;
  uint32_t rpc_id = 0;
  uint64_t cookie = 0;
  uint32_t payload_len = 0;

  bool operator==(const MessageHeader&) const = default;
};

std::array<uint8_t, kHeaderSize> encode_header(const MessageHeader& h);
Status decode_header(std::span<const uint8_t> b, MessageHeader& out);

// FNV-1a over the UTF-8 bytes of the name; identical in every process.
uint32_t fnv1a(std::string_view data);
Status rpc_id_from_name(std::string_view name, uint32_t& id);

// CRC-32, IEEE polynomial, reflected, init all-ones, final xor all-ones.
uint32_t checksum(std::span<const uint8_t> data);

// little-endian scalar helpers shared by the transports
inline void store_le16(uint8_t* p, uint16_t v) {
  p[0] = static_cast<uint8_t>(v);
  p[1] = static_cast<uint8_t>(v >> 8);
}
inline void store_le32(uint8_t* p, uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}
inline void store_le64(uint8_t* p, uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}
inline uint32_t load_le32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}
inline uint64_t load_le64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

enum class ProcDir : uint8_t { kEncode, kDecode };

// Symmetric serialization cursor: the same proc call sequence either writes
// values into a growing buffer or reads them back out.
class ProcContext {
 public:
  static ProcContext encoder() { return ProcContext(ProcDir::kEncode, {}); }
  static ProcContext decoder(std::span<const uint8_t> bytes) {
    return ProcContext(ProcDir::kDecode,
                       std::vector<uint8_t>(bytes.begin(), bytes.end()));
  }

  ProcDir direction() const { return dir_; }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::vector<uint8_t>& buffer() const { return buf_; }
  std::vector<uint8_t> take_buffer() { return std::move(buf_); }

 private:
  ProcContext(ProcDir dir, std::vector<uint8_t> buf)
      : dir_(dir), buf_(std::move(buf)) {}

  friend Status proc_uint8(ProcContext&, uint8_t&);
  friend Status proc_uint32(ProcContext&, uint32_t&);
  friend Status proc_uint64(ProcContext&, uint64_t&);
  friend Status proc_bytes(ProcContext&, std::vector<uint8_t>&);
  friend Status proc_text(ProcContext&, std::string&);

  ProcDir dir_;
  std::vector<uint8_t> buf_;
  std::size_t pos_ = 0;  // invariant: pos_ <= buf_.size()
};

Status proc_uint8(ProcContext& ctx, uint8_t& v);
Status proc_uint32(ProcContext& ctx, uint32_t& v);
Status proc_uint64(ProcContext& ctx, uint64_t& v);
// u32 length prefix followed by the raw bytes
Status proc_bytes(ProcContext& ctx, std::vector<uint8_t>& v);
Status proc_text(ProcContext& ctx, std::string& v);

}  // namespace mrpc::wire
