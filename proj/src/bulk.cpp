#include "mrpc/bulk.hpp"

#include <algorithm>

namespace mrpc {

Status bulk_create(const ClassPtr& cls,
                   std::span<const std::span<uint8_t>> regions, nal::Perm perm,
                   BulkPtr& out) {
  if (!cls) return Status::kInvalidState;
  if (regions.empty()) return Status::kEmptyRegion;
  for (const auto& r : regions) {
    if (r.empty()) return Status::kEmptyRegion;
  }
  nal::EndpointPtr ep = cls->endpoint();
  if (!ep) return Status::kInvalidState;  // class needs a live endpoint

  BulkPtr h(new BulkHandle());
  h->owner_ = ep->address();
  h->perm_ = perm;
  h->locality_ = BulkLocality::kLocal;
  h->ep_ = ep;
  for (const auto& r : regions) {
    nal::MemoryKey key = 0;
    if (Status s = ep->mem_expose(r, perm, key); !ok(s)) {
      for (const auto& seg : h->segments_) ep->mem_unexpose(seg.key);
      return s;
    }
    h->segments_.push_back(BulkHandle::Segment{key, r.size(), r});
    h->total_ += r.size();
  }
  out = std::move(h);
  return Status::kOk;
}

Status bulk_serialize(const BulkHandle& h, std::vector<uint8_t>& out) {
  std::lock_guard lk(h.mu_);
  if (h.locality_ != BulkLocality::kLocal || h.freed_) {
    return Status::kInvalidState;
  }
  auto enc = wire::ProcContext::encoder();
  std::string owner = h.owner_.canonical();
  wire::proc_text(enc, owner);
  uint8_t perm = static_cast<uint8_t>(h.perm_);
  wire::proc_uint8(enc, perm);
  uint32_t count = static_cast<uint32_t>(h.segments_.size());
  wire::proc_uint32(enc, count);
  for (const auto& seg : h.segments_) {
    uint64_t key = seg.key;
    uint64_t len = seg.length;
    wire::proc_uint64(enc, key);
    wire::proc_uint64(enc, len);
  }
  out = enc.take_buffer();
  return Status::kOk;
}

Status bulk_deserialize(std::span<const uint8_t> bytes, BulkPtr& out) {
  auto dec = wire::ProcContext::decoder(bytes);
  std::string owner;
  if (!ok(wire::proc_text(dec, owner))) return Status::kDecodeError;
  BulkPtr h(new BulkHandle());
  if (!ok(nal::parse_address(owner, h->owner_))) return Status::kDecodeError;
  uint8_t perm = 0;
  if (!ok(wire::proc_uint8(dec, perm)) || perm < 1 || perm > 3) {
    return Status::kDecodeError;
  }
  h->perm_ = static_cast<nal::Perm>(perm);
  uint32_t count = 0;
  if (!ok(wire::proc_uint32(dec, count)) || count == 0) {
    return Status::kDecodeError;
  }
  for (uint32_t i = 0; i < count; ++i) {
    uint64_t key = 0;
    uint64_t len = 0;
    if (!ok(wire::proc_uint64(dec, key)) || !ok(wire::proc_uint64(dec, len)) ||
        len == 0) {
      return Status::kDecodeError;
    }
    h->segments_.push_back(BulkHandle::Segment{key, len, {}});
    h->total_ += len;
  }
  if (dec.remaining() != 0) return Status::kDecodeError;
  h->locality_ = BulkLocality::kRemote;
  out = std::move(h);
  return Status::kOk;
}

Status bulk_transfer(const ContextPtr& ctx, BulkOp op, const BulkPtr& remote,
                     uint64_t remote_offset, const BulkPtr& local,
                     uint64_t local_offset, uint64_t length,
                     BulkCompletionFn cb) {
  if (!ctx) return Status::kContextClosed;
  if (!remote || !local) return Status::kInvalidState;
  if (remote->locality_ != BulkLocality::kRemote ||
      local->locality_ != BulkLocality::kLocal) {
    return Status::kInvalidState;
  }
  {
    std::lock_guard lk(local->mu_);
    if (local->freed_) return Status::kInvalidState;
  }
  if (remote_offset + length > remote->total_ ||
      local_offset + length > local->total_) {
    return Status::kOutOfRange;
  }
  const bool pull = (op == BulkOp::kPull);
  if (pull) {
    if (!nal::perm_allows_read(remote->perm_)) return Status::kPermission;
    if (!nal::perm_allows_write(local->perm_)) return Status::kPermission;
  } else {
    if (!nal::perm_allows_write(remote->perm_)) return Status::kPermission;
    if (!nal::perm_allows_read(local->perm_)) return Status::kPermission;
  }

  // maps a logical offset to (segment index, offset within the segment);
  // callers guarantee off < total
  auto locate = [](const std::vector<BulkHandle::Segment>& segs, uint64_t off,
                   std::size_t& idx, uint64_t& inner) {
    idx = 0;
    while (off >= segs[idx].length) {
      off -= segs[idx].length;
      ++idx;
    }
    inner = off;
  };

  std::vector<detail::BulkPiece> pieces;
  if (length > 0) {
    std::size_t ridx = 0;
    std::size_t lidx = 0;
    uint64_t rin = 0;
    uint64_t lin = 0;
    locate(remote->segments_, remote_offset, ridx, rin);
    locate(local->segments_, local_offset, lidx, lin);
    uint64_t rem = length;
    while (rem > 0) {
      uint64_t n = std::min({remote->segments_[ridx].length - rin,
                             local->segments_[lidx].length - lin, rem});
      pieces.push_back(detail::BulkPiece{
          remote->owner_, remote->segments_[ridx].key, rin,
          local->segments_[lidx].region.subspan(lin, n)});
      rin += n;
      lin += n;
      rem -= n;
      if (rin == remote->segments_[ridx].length) {
        ++ridx;
        rin = 0;
      }
      if (lin == local->segments_[lidx].length) {
        ++lidx;
        lin = 0;
      }
    }
  }
  return detail::submit_transfer(ctx, pull, std::move(cb), std::move(pieces));
}

Status bulk_free(const BulkPtr& h) {
  if (!h) return Status::kInvalidState;
  nal::EndpointPtr ep;
  std::vector<nal::MemoryKey> keys;
  {
    std::lock_guard lk(h->mu_);
    if (h->locality_ != BulkLocality::kLocal || h->freed_) {
      return Status::kInvalidState;
    }
    h->freed_ = true;
    ep = h->ep_;
    for (const auto& seg : h->segments_) keys.push_back(seg.key);
  }
  for (nal::MemoryKey k : keys) ep->mem_unexpose(k);
  return Status::kOk;
}

}  // namespace mrpc
