#include "mrpc/wire.hpp"

namespace mrpc {

const char* to_string(Status s) {
  switch (s) {
    case Status::kOk: return "OK";
    case Status::kCanceled: return "CANCELED";
    case Status::kTimeout: return "TIMEOUT";
    case Status::kTransportError: return "TRANSPORT_ERROR";
    case Status::kRemoteError: return "REMOTE_ERROR";
    case Status::kNoSuchRpc: return "NO_SUCH_RPC";
    case Status::kDecodeError: return "DECODE_ERROR";
    case Status::kOversize: return "OVERSIZE";
    case Status::kInvalidState: return "INVALID_STATE";
    case Status::kIdCollision: return "ID_COLLISION";
    case Status::kContextClosed: return "CONTEXT_CLOSED";
    case Status::kBadMagic: return "BAD_MAGIC";
    case Status::kShortBuffer: return "SHORT_BUFFER";
    case Status::kBadVersion: return "BAD_VERSION";
    case Status::kBadKind: return "BAD_KIND";
    case Status::kEmptyName: return "EMPTY_NAME";
    case Status::kDecodeOverrun: return "DECODE_OVERRUN";
    case Status::kLengthOverflow: return "LENGTH_OVERFLOW";
    case Status::kBadUri: return "BAD_URI";
    case Status::kUnknownPlugin: return "UNKNOWN_PLUGIN";
    case Status::kAddressInUse: return "ADDRESS_IN_USE";
    case Status::kBindFailed: return "BIND_FAILED";
    case Status::kClosed: return "CLOSED";
    case Status::kEmptyRegion: return "EMPTY_REGION";
    case Status::kUnknownToken: return "UNKNOWN_TOKEN";
    case Status::kOutOfRange: return "OUT_OF_RANGE";
    case Status::kPermission: return "PERMISSION";
    case Status::kCrcMismatch: return "CRC_MISMATCH";
  }
  return "UNKNOWN_STATUS";
}

}  // namespace mrpc

namespace mrpc::wire {

std::array<uint8_t, kHeaderSize> encode_header(const MessageHeader& h) {
  std::array<uint8_t, kHeaderSize> out{};
  std::memcpy(out.data(), kMagic.data(), 4);
  out[4] = h.version;
  out[5] = static_cast<uint8_t>(h.kind);
  out[6] = h.flags;
  out[7] = 0;  // pad
  store_le32(out.data() + 8, h.rpc_id);
  store_le64(out.data() + 12, h.cookie);
  store_le32(out.data() + 20, h.payload_len);
  return out;
}

Status decode_header(std::span<const uint8_t> b, MessageHeader& out) {
  if (b.size() < kHeaderSize) return Status::kShortBuffer;
  if (std::memcmp(b.data(), kMagic.data(), 4) != 0) return Status::kBadMagic;
  if (b[4] != kVersion) return Status::kBadVersion;
  if (b[5] > kMaxKind) return Status::kBadKind;
  out.version = b[4];
  out.kind = static_cast<MsgKind>(b[5]);
  out.flags = b[6];
  out.rpc_id = load_le32(b.data() + 8);
  out.cookie = load_le64(b.data() + 12);
  out.payload_len = load_le32(b.data() + 20);
  return Status::kOk;
}

uint32_t fnv1a(std::string_view data) {
  uint32_t h = 0x811C9DC5u;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x01000193u;
  }
  return h;
}

Status rpc_id_from_name(std::string_view name, uint32_t& id) {
  if (name.empty()) return Status::kEmptyName;
  id = fnv1a(name);
  return Status::kOk;
}

namespace {

struct Crc32Table {
  uint32_t t[256];
  Crc32Table() {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
      t[i] = c;
    }
  }
};

}  // namespace

uint32_t checksum(std::span<const uint8_t> data) {
  static const Crc32Table table;
  uint32_t c = 0xFFFFFFFFu;
  for (uint8_t b : data) c = table.t[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

Status proc_uint8(ProcContext& ctx, uint8_t& v) {
  if (ctx.dir_ == ProcDir::kEncode) {
    ctx.buf_.push_back(v);
    ctx.pos_ += 1;
    return Status::kOk;
  }
  if (ctx.remaining() < 1) return Status::kDecodeOverrun;
  v = ctx.buf_[ctx.pos_++];
  return Status::kOk;
}

Status proc_uint32(ProcContext& ctx, uint32_t& v) {
  if (ctx.dir_ == ProcDir::kEncode) {
    uint8_t tmp[4];
    store_le32(tmp, v);
    ctx.buf_.insert(ctx.buf_.end(), tmp, tmp + 4);
    ctx.pos_ += 4;
    return Status::kOk;
  }
  if (ctx.remaining() < 4) return Status::kDecodeOverrun;
  v = load_le32(ctx.buf_.data() + ctx.pos_);
  ctx.pos_ += 4;
  return Status::kOk;
}

Status proc_uint64(ProcContext& ctx, uint64_t& v) {
  if (ctx.dir_ == ProcDir::kEncode) {
    uint8_t tmp[8];
    store_le64(tmp, v);
    ctx.buf_.insert(ctx.buf_.end(), tmp, tmp + 8);
    ctx.pos_ += 8;
    return Status::kOk;
  }
  if (ctx.remaining() < 8) return Status::kDecodeOverrun;
  v = load_le64(ctx.buf_.data() + ctx.pos_);
  ctx.pos_ += 8;
  return Status::kOk;
}

Status proc_bytes(ProcContext& ctx, std::vector<uint8_t>& v) {
  if (ctx.dir_ == ProcDir::kEncode) {
    uint32_t len = static_cast<uint32_t>(v.size());
    proc_uint32(ctx, len);
    ctx.buf_.insert(ctx.buf_.end(), v.begin(), v.end());
    ctx.pos_ += v.size();
    return Status::kOk;
  }
  uint32_t len = 0;
  if (Status s = proc_uint32(ctx, len); !ok(s)) return s;
  if (len > ctx.remaining()) return Status::kLengthOverflow;
  v.assign(ctx.buf_.begin() + static_cast<std::ptrdiff_t>(ctx.pos_),
           ctx.buf_.begin() + static_cast<std::ptrdiff_t>(ctx.pos_ + len));
  ctx.pos_ += len;
  return Status::kOk;
}

Status proc_text(ProcContext& ctx, std::string& v) {
  if (ctx.dir_ == ProcDir::kEncode) {
    uint32_t len = static_cast<uint32_t>(v.size());
    proc_uint32(ctx, len);
    ctx.buf_.insert(ctx.buf_.end(), v.begin(), v.end());
    ctx.pos_ += v.size();
    return Status::kOk;
  }
  uint32_t len = 0;
  if (Status s = proc_uint32(ctx, len); !ok(s)) return s;
  if (len > ctx.remaining()) return Status::kLengthOverflow;
  v.assign(reinterpret_cast<const char*>(ctx.buf_.data() + ctx.pos_), len);
  ctx.pos_ += len;
  return Status::kOk;
}

}  // namespace mrpc::wire
