#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "mrpc/rpc.hpp"

namespace mrpc {

enum class BulkLocality : uint8_t { kLocal, kRemote };
enum class BulkOp : uint8_t { kPull, kPush };

using BulkCompletionFn = std::function<void(Status)>;

// Descriptor of exposed memory segments. Logical offsets address the
// concatenation of the segments in order. LOCAL handles own exposures on the
// class endpoint; REMOTE handles are deserialized descriptors and carry only
// keys and lengths.
class BulkHandle {
 public:
  const nal::NetAddress& owner() const { return owner_; }
  nal::Perm permission() const { return perm_; }
  BulkLocality locality() const { return locality_; }
  uint64_t total_size() const { return total_; }
  std::size_t segment_count() const { return segments_.size(); }

 private:
  friend Status bulk_create(const ClassPtr&,
                            std::span<const std::span<uint8_t>>, nal::Perm,
                            std::shared_ptr<BulkHandle>&);
  friend Status bulk_serialize(const BulkHandle&, std::vector<uint8_t>&);
  friend Status bulk_deserialize(std::span<const uint8_t>,
                                 std::shared_ptr<BulkHandle>&);
  friend Status bulk_transfer(const ContextPtr&, BulkOp,
                              const std::shared_ptr<BulkHandle>&, uint64_t,
                              const std::shared_ptr<BulkHandle>&, uint64_t,
                              uint64_t, BulkCompletionFn);
  friend Status bulk_free(const std::shared_ptr<BulkHandle>&);

  struct Segment {
    nal::MemoryKey key = 0;
    uint64_t length = 0;
    std::span<uint8_t> region;  // LOCAL handles only
  };

  BulkHandle() = default;

  mutable std::mutex mu_;
  bool freed_ = false;
  nal::NetAddress owner_;
  nal::Perm perm_ = nal::Perm::kRead;
  BulkLocality locality_ = BulkLocality::kLocal;
  uint64_t total_ = 0;
  std::vector<Segment> segments_;
  nal::EndpointPtr ep_;  // LOCAL handles only
};

using BulkPtr = std::shared_ptr<BulkHandle>;

// Exposes each region on the class endpoint, in order. Regions must be
// nonempty and stay valid until bulk_free.
Status bulk_create(const ClassPtr& cls,
                   std::span<const std::span<uint8_t>> regions, nal::Perm perm,
                   BulkPtr& out);

// Descriptor layout, little-endian, bit-exact:
//   owner canonical address (u32 length + text) | perm(1) | segment_count(4)
//   | per segment: key(8) + length(8)
Status bulk_serialize(const BulkHandle& h, std::vector<uint8_t>& out);
Status bulk_deserialize(std::span<const uint8_t> bytes, BulkPtr& out);

// Nonblocking transfer between the logical windows of a REMOTE and a LOCAL
// handle; cb fires under trigger with OK only when every piece completed OK.
Status bulk_transfer(const ContextPtr& ctx, BulkOp op, const BulkPtr& remote,
                     uint64_t remote_offset, const BulkPtr& local,
                     uint64_t local_offset, uint64_t length,
                     BulkCompletionFn cb);

// Unexposes all segments; later remote access fails with REMOTE_ERROR.
Status bulk_free(const BulkPtr& h);

}  // namespace mrpc
