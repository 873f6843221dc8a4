#include "mrpc/transport_loop.hpp"

#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>

namespace mrpc::nal::loop {

namespace {

using Clock = std::chrono::steady_clock;

class LoopEndpoint;

// One lock for the whole fabric: delivery between endpoints becomes a single
// total order, which keeps scripted tests deterministic.
struct Fabric {
  std::mutex mu;
  std::map<std::string, LoopEndpoint*> endpoints;

  static Fabric& instance() {
    static Fabric f;
    return f;
  }
};

struct Exposed {
  std::span<uint8_t> region;
  Perm perm;
};

struct PendingOp {
  Completion comp;
  Clock::time_point due;
  bool stalled = false;
  bool cancel_seen = false;
};

class LoopEndpoint final : public Endpoint {
 public:
  LoopEndpoint(std::string locator, const EndpointOptions& opts) {
    addr_ = NetAddress{"loop", std::move(locator)};
    opts_ = opts;
  }

  ~LoopEndpoint() override { close(); }

  Status send_unexpected(const NetAddress& dest, std::vector<uint8_t> msg,
                         OpTag tag, OpToken& token) override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kClosed;
    if (msg.size() > opts_.eager_limit + wire::kHeaderSize) {
      return Status::kOversize;
    }
    stats_.sends.fetch_add(1, std::memory_order_relaxed);
    stats_.record_frame(msg);
    token = next_token_++;
    PendingOp op;
    op.comp = Completion{OpKind::kSend, Status::kOk, token, tag, {}, {}};
    op.due = Clock::now() + faults_.delay;
    if (faults_.stall_next > 0) {
      --faults_.stall_next;
      op.stalled = true;
    } else if (faults_.drop_next > 0) {
      --faults_.drop_next;
      // message vanishes, the send itself still reports OK
    } else {
      auto it = f.endpoints.find(dest.locator);
      if (dest.plugin != "loop" || it == f.endpoints.end()) {
        op.comp.status = Status::kTransportError;
      } else {
        LoopEndpoint* peer = it->second;
        if (peer->inbound_.size() >= peer->opts_.unexpected_buffer_limit) {
          op.comp.status = Status::kTransportError;  // buffer overflow
        } else {
          Completion in;
          in.kind = OpKind::kRecvUnexpected;
          in.status = Status::kOk;
          in.source = addr_;
          in.payload = std::move(msg);
          peer->inbound_.push_back(std::move(in));
          peer->stats_.recvs.fetch_add(1, std::memory_order_relaxed);
          peer->cv_.notify_all();
        }
      }
    }
    pending_.push_back(std::move(op));
    cv_.notify_all();
    return Status::kOk;
  }

  Status recv_unexpected(std::optional<Completion>& msg) override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kClosed;
    if (inbound_.empty()) {
      msg.reset();
      return Status::kOk;
    }
    msg = std::move(inbound_.front());
    inbound_.pop_front();
    return Status::kOk;
  }

  Status mem_expose(std::span<uint8_t> region, Perm perm,
                    MemoryKey& key) override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kClosed;
    if (region.empty()) return Status::kEmptyRegion;
    key = next_key_++;
    exposed_.emplace(key, Exposed{region, perm});
    return Status::kOk;
  }

  Status mem_unexpose(MemoryKey key) override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kClosed;
    return exposed_.erase(key) ? Status::kOk : Status::kUnknownToken;
  }

  Status get(const NetAddress& remote, MemoryKey key, uint64_t remote_offset,
             std::span<uint8_t> local, OpTag tag, OpToken& token) override {
    return one_sided(OpKind::kGet, remote, key, remote_offset,
                     local.data(), local.size(), tag, token);
  }

  Status put(const NetAddress& remote, MemoryKey key, uint64_t remote_offset,
             std::span<const uint8_t> local, OpTag tag,
             OpToken& token) override {
    return one_sided(OpKind::kPut, remote, key, remote_offset,
                     const_cast<uint8_t*>(local.data()), local.size(), tag,
                     token);
  }

  Status progress(std::chrono::milliseconds timeout,
                  std::vector<Completion>& sink,
                  std::size_t& surfaced) override {
    surfaced = 0;
    auto& f = Fabric::instance();
    std::unique_lock lk(f.mu);
    if (closed_ && pending_.empty()) return Status::kClosed;
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      surfaced += drain_due(sink);
      if (surfaced > 0 || !inbound_.empty()) return Status::kOk;
      auto now = Clock::now();
      if (now >= deadline) return Status::kOk;
      auto wake = deadline;
      for (const auto& op : pending_) {
        if (!op.stalled && op.due < wake) wake = op.due;
      }
      cv_.wait_until(lk, wake);
      if (closed_ && pending_.empty()) return Status::kClosed;
    }
  }

  Status cancel(OpToken token) override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    for (auto& op : pending_) {
      if (op.comp.token != token) continue;
      if (op.cancel_seen) return Status::kUnknownToken;
      op.cancel_seen = true;
      if (op.stalled) {
        op.comp.status = Status::kCanceled;
        op.stalled = false;
      }
      op.due = Clock::now();  // surface on the next progress call
      cv_.notify_all();
      return Status::kOk;
    }
    return Status::kUnknownToken;
  }

  Status close() override {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kOk;
    closed_ = true;
    f.endpoints.erase(addr_.locator);
    for (auto& op : pending_) {
      // pending work is abandoned, report it canceled
      op.comp.status = Status::kCanceled;
      op.stalled = false;
      op.due = Clock::now();
    }
    inbound_.clear();
    cv_.notify_all();
    return Status::kOk;
  }

  void set_faults(const FaultInjection& faults) {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    faults_ = faults;
  }

 private:
  Status one_sided(OpKind kind, const NetAddress& remote, MemoryKey key,
                   uint64_t remote_offset, uint8_t* local, std::size_t len,
                   OpTag tag, OpToken& token) {
    auto& f = Fabric::instance();
    std::lock_guard lk(f.mu);
    if (closed_) return Status::kClosed;
    token = next_token_++;
    PendingOp op;
    op.comp = Completion{kind, Status::kOk, token, tag, {}, {}};
    op.due = Clock::now() + faults_.delay;
    if (faults_.stall_next > 0) {
      --faults_.stall_next;
      op.stalled = true;
    } else {
      op.comp.status = execute_copy(kind, remote, key, remote_offset, local,
                                    len, f);
    }
    pending_.push_back(std::move(op));
    cv_.notify_all();
    return Status::kOk;
  }

  static Status execute_copy(OpKind kind, const NetAddress& remote,
                             MemoryKey key, uint64_t remote_offset,
                             uint8_t* local, std::size_t len, Fabric& f) {
    auto it = f.endpoints.find(remote.locator);
    if (remote.plugin != "loop" || it == f.endpoints.end()) {
      return Status::kTransportError;
    }
    LoopEndpoint* holder = it->second;
    auto rit = holder->exposed_.find(key);
    if (rit == holder->exposed_.end()) return Status::kRemoteError;
    const Exposed& ex = rit->second;
    if (remote_offset + len > ex.region.size()) return Status::kRemoteError;
    if (kind == OpKind::kGet) {
      if (!perm_allows_read(ex.perm)) return Status::kRemoteError;
      if (len) std::memcpy(local, ex.region.data() + remote_offset, len);
    } else {
      if (!perm_allows_write(ex.perm)) return Status::kRemoteError;
      if (len) std::memcpy(ex.region.data() + remote_offset, local, len);
    }
    return Status::kOk;
  }

  // moves due, unsurfaced completions to the sink in initiation order
  std::size_t drain_due(std::vector<Completion>& sink) {
    std::size_t n = 0;
    auto now = Clock::now();
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (!it->stalled && it->due <= now) {
        sink.push_back(std::move(it->comp));
        it = pending_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  bool closed_ = false;
  OpToken next_token_ = 1;
  MemoryKey next_key_ = 1;
  std::deque<Completion> inbound_;
  std::deque<PendingOp> pending_;
  std::map<MemoryKey, Exposed> exposed_;
  FaultInjection faults_;
  std::condition_variable cv_;
};

}  // namespace

Status listen(std::string_view locator, const EndpointOptions& opts,
              EndpointPtr& out) {
  if (locator.empty()) return Status::kBadUri;
  auto& f = Fabric::instance();
  std::lock_guard lk(f.mu);
  std::string key(locator);
  if (f.endpoints.count(key)) return Status::kAddressInUse;
  auto ep = std::make_shared<LoopEndpoint>(key, opts);
  f.endpoints.emplace(key, ep.get());
  out = ep;
  return Status::kOk;
}

Status set_faults(const EndpointPtr& ep, const FaultInjection& faults) {
  auto* lp = dynamic_cast<LoopEndpoint*>(ep.get());
  if (!lp) return Status::kUnknownPlugin;
  lp->set_faults(faults);
  return Status::kOk;
}

}  // namespace mrpc::nal::loop
