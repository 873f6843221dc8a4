#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrpc/status.hpp"
#include "mrpc/wire.hpp"

namespace mrpc::nal {

// Addresses are URIs of the form "plugin://locator". The plugin name picks
// the transport; the locator is plugin-specific ("host:port" for tcp, an
// arbitrary token for loop).
struct NetAddress {
  std::string plugin;
  std::string locator;

  std::string canonical() const { return plugin + "://" + locator; }
  bool operator==(const NetAddress&) const = default;
  auto operator<=>(const NetAddress&) const = default;
};

Status parse_address(std::string_view uri, NetAddress& out);

enum class OpKind : uint8_t { kSend, kRecvUnexpected, kGet, kPut };

enum class Perm : uint8_t {
  kRead = 1,
  kWrite = 2,
  kReadWrite = 3,
};

inline bool perm_allows_read(Perm p) { return static_cast<uint8_t>(p) & 1; }
inline bool perm_allows_write(Perm p) { return static_cast<uint8_t>(p) & 2; }

using MemoryKey = uint64_t;
using OpToken = uint64_t;
using OpTag = uint64_t;

// One record per finished asynchronous operation; also the element type of
// the unexpected-message buffer (kind kRecvUnexpected, payload set).
struct Completion {
  OpKind kind = OpKind::kSend;
  Status status = Status::kOk;
  OpToken token = 0;
  OpTag tag = 0;
  NetAddress source;             // kRecvUnexpected only
  std::vector<uint8_t> payload;  // kRecvUnexpected only
};

// Instrumentation counters every transport keeps. max_metadata_frame tracks
// REQUEST/RESPONSE/ERROR frames only; bulk traffic is counted separately so
// tests can prove large data never rides the metadata path.
struct Stats {
  std::atomic<uint64_t> sends{0};
  std::atomic<uint64_t> recvs{0};
  std::atomic<uint64_t> metadata_frames{0};
  std::atomic<uint64_t> max_metadata_frame{0};
  std::atomic<uint64_t> bulk_frames{0};
  std::atomic<uint64_t> bulk_bytes{0};

  void record_frame(std::span<const uint8_t> frame);
};

struct EndpointOptions {
  uint32_t eager_limit = wire::kDefaultEagerLimit;
  std::size_t unexpected_buffer_limit = 1024;
};

// The plugin contract. Exactly nine operations: send_unexpected,
// recv_unexpected, mem_expose, mem_unexpose, get, put, progress, cancel,
// close. The RPC and bulk layers call nothing else.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  // Asynchronous eager send; msg must not exceed eager_limit + header size.
  // A Completion{kSend} surfaces through progress.
  virtual Status send_unexpected(const NetAddress& dest,
                                 std::vector<uint8_t> msg, OpTag tag,
                                 OpToken& token) = 0;

  // Nonblocking: pops the oldest buffered unexpected message, if any.
  virtual Status recv_unexpected(std::optional<Completion>& msg) = 0;

  // Region becomes remotely accessible under the returned key until
  // unexposed. Keys are endpoint-unique and never reused.
  virtual Status mem_expose(std::span<uint8_t> region, Perm perm,
                            MemoryKey& key) = 0;
  virtual Status mem_unexpose(MemoryKey key) = 0;

  // One-sided read/write against a remote exposed region. local.size() is the
  // transfer length. Completion kind kGet / kPut surfaces through progress.
  virtual Status get(const NetAddress& remote, MemoryKey key,
                     uint64_t remote_offset, std::span<uint8_t> local,
                     OpTag tag, OpToken& token) = 0;
  virtual Status put(const NetAddress& remote, MemoryKey key,
                     uint64_t remote_offset, std::span<const uint8_t> local,
                     OpTag tag, OpToken& token) = 0;

  // Drives I/O for at most `timeout`, appends finished operations to `sink`,
  // and stores how many in `surfaced`. timeout zero polls.
  virtual Status progress(std::chrono::milliseconds timeout,
                          std::vector<Completion>& sink,
                          std::size_t& surfaced) = 0;

  // Best-effort: the operation's completion eventually carries kCanceled
  // unless it raced to a terminal status first.
  virtual Status cancel(OpToken token) = 0;

  virtual Status close() = 0;

  // Accessors (not part of the plugin operation set).
  const NetAddress& address() const { return addr_; }
  const EndpointOptions& options() const { return opts_; }
  const Stats& stats() const { return stats_; }

 protected:
  NetAddress addr_;
  EndpointOptions opts_;
  Stats stats_;
};

using EndpointPtr = std::shared_ptr<Endpoint>;

// Plugin registry. A plugin is a listen function that builds an endpoint
// from a locator; names are lowercase ASCII.
using ListenFn =
    std::function<Status(std::string_view locator, const EndpointOptions&,
                         EndpointPtr& out)>;

Status register_plugin(const std::string& name, ListenFn listen);
bool plugin_registered(std::string_view name);
Status listen(const NetAddress& addr, const EndpointOptions& opts,
              EndpointPtr& out);

}  // namespace mrpc::nal
