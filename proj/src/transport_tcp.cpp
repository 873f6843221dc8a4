#include "mrpc/transport_tcp.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <variant>

namespace mrpc::nal::tcp {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kReadChunk = 64 * 1024;

int set_nonblocking(int fd) {
  int fl = fcntl(fd, F_GETFL, 0);
  return fl < 0 ? fl : fcntl(fd, F_SETFL, fl | O_NONBLOCK);
}

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

// "host:port" -> sockaddr_in
bool resolve(const std::string& locator, sockaddr_in& out) {
  auto colon = locator.rfind(':');
  if (colon == std::string::npos || colon == 0) return false;
  std::string host = locator.substr(0, colon);
  std::string port = locator.substr(colon + 1);
  if (port.empty()) return false;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
    return false;
  }
  std::memcpy(&out, res->ai_addr, sizeof(sockaddr_in));
  freeaddrinfo(res);
  return true;
}

std::vector<uint8_t> make_frame(wire::MsgKind kind, uint64_t cookie,
                                std::span<const uint8_t> payload,
                                uint32_t rpc_id = 0, uint8_t flags = 0) {
  wire::MessageHeader h;
  h.kind = kind;
  h.flags = flags;
  h.rpc_id = rpc_id;
  h.cookie = cookie;
  h.payload_len = static_cast<uint32_t>(payload.size());
  auto hdr = wire::encode_header(h);
  std::vector<uint8_t> out(wire::kHeaderSize + payload.size());
  std::memcpy(out.data(), hdr.data(), wire::kHeaderSize);
  if (!payload.empty()) {
    std::memcpy(out.data() + wire::kHeaderSize, payload.data(),
                payload.size());
  }
  return out;
}

std::vector<uint8_t> make_ack(uint64_t cookie, uint8_t status) {
  uint8_t p[kBulkAckPayload];
  wire::store_le64(p, cookie);
  p[8] = status;
  return make_frame(wire::MsgKind::kBulkAck, cookie, std::span(p, sizeof(p)));
}

struct OwnedFrame {
  std::vector<uint8_t> bytes;
  std::size_t off = 0;
  OpToken send_token = 0;  // nonzero: complete a SEND when fully written
  OpTag send_tag = 0;
  bool cancel_seen = false;
};

// Holder side of an emulated GET: streams the exposed region as BULK_DATA
// chunks, then a BULK_ACK. Chunks are materialized one at a time so a 64 MiB
// transfer never sits in the outbound queue at once.
struct GetStreamJob {
  uint64_t cookie = 0;
  MemoryKey key = 0;
  uint64_t offset = 0;
  uint64_t remaining = 0;
  uint32_t chunk_index = 0;
  bool ack_emitted = false;
  OwnedFrame cur;
  bool cur_valid = false;
};

// Initiator side of an emulated PUT: streams the caller's region.
struct PutStreamJob {
  uint64_t cookie = 0;
  const uint8_t* src = nullptr;
  uint64_t offset = 0;
  uint64_t remaining = 0;
  uint32_t chunk_index = 0;
  OwnedFrame cur;
  bool cur_valid = false;
};

using OutItem = std::variant<OwnedFrame, GetStreamJob, PutStreamJob>;

struct Conn {
  int fd = -1;
  bool outbound = false;
  bool connecting = false;
  bool peer_known = false;
  NetAddress peer;  // canonical once known
  std::vector<uint8_t> inbuf;
  std::deque<OutItem> outq;
};

using ConnPtr = std::shared_ptr<Conn>;

struct Exposed {
  std::span<uint8_t> region;
  Perm perm;
};

struct GetOp {
  OpToken token = 0;
  OpTag tag = 0;
  std::string peer;
  uint8_t* dst = nullptr;
  uint64_t len = 0;
  uint64_t received = 0;
  uint32_t next_chunk = 0;
  bool canceled = false;
};

struct PutOp {
  OpToken token = 0;
  OpTag tag = 0;
  std::string peer;
  bool canceled = false;
};

// Receiving side of an emulated PUT, keyed by (peer, cookie). discard is set
// when validation failed: the data frames still arrive and must be skipped.
struct InboundPut {
  uint8_t* dst = nullptr;
  uint64_t len = 0;
  uint64_t received = 0;
  uint32_t next_chunk = 0;
  bool discard = false;
};

class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint() = default;
  ~TcpEndpoint() override { close(); }

  Status open(std::string_view locator, const EndpointOptions& opts) {
    opts_ = opts;
    std::string loc(locator);
    sockaddr_in sa{};
    if (!resolve(loc, sa)) return Status::kBadUri;
    listen_fd_ = socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) return Status::kBindFailed;
    int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 ||
        ::listen(listen_fd_, 64) != 0 || set_nonblocking(listen_fd_) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      return Status::kBindFailed;
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    char ip[INET_ADDRSTRLEN]{};
    inet_ntop(AF_INET, &bound.sin_addr, ip, sizeof(ip));
    addr_ = NetAddress{
        "tcp", std::string(ip) + ":" + std::to_string(ntohs(bound.sin_port))};
    if (pipe(wake_) != 0) return Status::kBindFailed;
    set_nonblocking(wake_[0]);
    set_nonblocking(wake_[1]);
    return Status::kOk;
  }

  Status send_unexpected(const NetAddress& dest, std::vector<uint8_t> msg,
                         OpTag tag, OpToken& token) override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    if (msg.size() > opts_.eager_limit + wire::kHeaderSize) {
      return Status::kOversize;
    }
    wire::MessageHeader h;
    if (!ok(wire::decode_header(msg, h)) ||
        h.payload_len != msg.size() - wire::kHeaderSize) {
      return Status::kDecodeError;  // tcp requires framed messages
    }
    stats_.sends.fetch_add(1, std::memory_order_relaxed);
    stats_.record_frame(msg);
    token = next_token_++;
    ConnPtr c = conn_for(dest);
    if (!c) {
      ready_.push_back(
          Completion{OpKind::kSend, Status::kTransportError, token, tag, {}, {}});
    } else {
      OwnedFrame f;
      f.bytes = std::move(msg);
      f.send_token = token;
      f.send_tag = tag;
      c->outq.push_back(std::move(f));
    }
    wake();
    return Status::kOk;
  }

  Status recv_unexpected(std::optional<Completion>& msg) override {
    std::lock_guard lk(mu_);
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
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    if (region.empty()) return Status::kEmptyRegion;
    key = next_key_++;
    exposed_.emplace(key, Exposed{region, perm});
    return Status::kOk;
  }

  Status mem_unexpose(MemoryKey key) override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    return exposed_.erase(key) ? Status::kOk : Status::kUnknownToken;
  }

  Status get(const NetAddress& remote, MemoryKey key, uint64_t remote_offset,
             std::span<uint8_t> local, OpTag tag, OpToken& token) override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    token = next_token_++;
    uint64_t cookie = next_cookie_++;
    ConnPtr c = conn_for(remote);
    if (!c) {
      ready_.push_back(
          Completion{OpKind::kGet, Status::kTransportError, token, tag, {}, {}});
      wake();
      return Status::kOk;
    }
    GetOp op;
    op.token = token;
    op.tag = tag;
    op.peer = remote.canonical();
    op.dst = local.data();
    op.len = local.size();
    gets_.emplace(cookie, op);
    uint8_t p[kBulkReqPayload];
    wire::store_le64(p, key);
    wire::store_le64(p + 8, remote_offset);
    wire::store_le64(p + 16, local.size());
    wire::store_le64(p + 24, cookie);
    OwnedFrame f;
    f.bytes = make_frame(wire::MsgKind::kBulkGet, cookie, std::span(p, sizeof(p)));
    c->outq.push_back(std::move(f));
    wake();
    return Status::kOk;
  }

  Status put(const NetAddress& remote, MemoryKey key, uint64_t remote_offset,
             std::span<const uint8_t> local, OpTag tag,
             OpToken& token) override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    token = next_token_++;
    uint64_t cookie = next_cookie_++;
    ConnPtr c = conn_for(remote);
    if (!c) {
      ready_.push_back(
          Completion{OpKind::kPut, Status::kTransportError, token, tag, {}, {}});
      wake();
      return Status::kOk;
    }
    PutOp op;
    op.token = token;
    op.tag = tag;
    op.peer = remote.canonical();
    puts_.emplace(cookie, op);
    uint8_t p[kBulkReqPayload];
    wire::store_le64(p, key);
    wire::store_le64(p + 8, remote_offset);
    wire::store_le64(p + 16, local.size());
    wire::store_le64(p + 24, cookie);
    OwnedFrame f;
    f.bytes = make_frame(wire::MsgKind::kBulkPut, cookie, std::span(p, sizeof(p)));
    c->outq.push_back(std::move(f));
    if (!local.empty()) {
      PutStreamJob job;
      job.cookie = cookie;
      job.src = local.data();
      job.remaining = local.size();
      c->outq.push_back(std::move(job));
    }
    wake();
    return Status::kOk;
  }

  Status progress(std::chrono::milliseconds timeout,
                  std::vector<Completion>& sink,
                  std::size_t& surfaced) override {
    surfaced = 0;
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      std::vector<pollfd> fds;
      {
        std::lock_guard lk(mu_);
        if (closed_ && ready_.empty()) return Status::kClosed;
        surfaced += drain_ready(sink);
        if (surfaced > 0) return Status::kOk;
        if (closed_) return Status::kClosed;
        if (!inbound_.empty()) return Status::kOk;
        fds.push_back({listen_fd_, POLLIN, 0});
        fds.push_back({wake_[0], POLLIN, 0});
        for (const auto& c : conns_) {
          short ev = POLLIN;
          if (!c->outq.empty() || c->connecting) ev |= POLLOUT;
          fds.push_back({c->fd, ev, 0});
        }
      }
      auto now = Clock::now();
      int wait_ms = 0;
      if (deadline > now) {
        wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now)
                .count());
        wait_ms = std::clamp(wait_ms, 0, 100);
      }
      int rc = ::poll(fds.data(), fds.size(), wait_ms);
      {
        std::lock_guard lk(mu_);
        if (closed_ && ready_.empty()) return Status::kClosed;
        if (rc > 0) {
          if (fds[1].revents & POLLIN) drain_wake();
          if (fds[0].revents & POLLIN) do_accept();
        }
        // service every connection: writable work may exist even when poll
        // reported nothing for it (frames queued since the poll snapshot)
        auto snapshot = conns_;
        for (const auto& c : snapshot) {
          if (std::find(conns_.begin(), conns_.end(), c) == conns_.end()) {
            continue;  // killed while handling an earlier conn
          }
          handle_writable(c);
        }
        snapshot = conns_;
        for (const auto& c : snapshot) {
          if (std::find(conns_.begin(), conns_.end(), c) == conns_.end()) {
            continue;
          }
          handle_readable(c);
        }
        surfaced += drain_ready(sink);
        if (surfaced > 0) return Status::kOk;
        if (!inbound_.empty()) return Status::kOk;
      }
      if (Clock::now() >= deadline) return Status::kOk;
    }
  }

  Status cancel(OpToken token) override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kClosed;
    // unstarted sends can be withdrawn outright
    for (const auto& c : conns_) {
      for (auto it = c->outq.begin(); it != c->outq.end(); ++it) {
        auto* f = std::get_if<OwnedFrame>(&*it);
        if (f && f->send_token == token) {
          if (f->cancel_seen) return Status::kUnknownToken;
          if (f->off == 0) {
            ready_.push_back(Completion{OpKind::kSend, Status::kCanceled,
                                        token, f->send_tag, {}, {}});
            c->outq.erase(it);
          } else {
            // mid-frame: the stream must stay intact, let it complete
            f->cancel_seen = true;
          }
          return Status::kOk;
        }
      }
    }
    for (auto& [cookie, op] : gets_) {
      if (op.token != token) continue;
      if (op.canceled) return Status::kUnknownToken;
      op.canceled = true;
      ready_.push_back(
          Completion{OpKind::kGet, Status::kCanceled, token, op.tag, {}, {}});
      return Status::kOk;
    }
    for (auto& [cookie, op] : puts_) {
      if (op.token != token) continue;
      if (op.canceled) return Status::kUnknownToken;
      op.canceled = true;
      ready_.push_back(
          Completion{OpKind::kPut, Status::kCanceled, token, op.tag, {}, {}});
      return Status::kOk;
    }
    return Status::kUnknownToken;
  }

  Status close() override {
    std::lock_guard lk(mu_);
    if (closed_) return Status::kOk;
    closed_ = true;
    for (const auto& c : conns_) {
      fail_conn_ops(c, Status::kCanceled);
      ::close(c->fd);
    }
    conns_.clear();
    by_peer_.clear();
    for (auto& [cookie, op] : gets_) {
      if (!op.canceled) {
        ready_.push_back(Completion{OpKind::kGet, Status::kCanceled, op.token,
                                    op.tag, {}, {}});
      }
    }
    gets_.clear();
    for (auto& [cookie, op] : puts_) {
      if (!op.canceled) {
        ready_.push_back(Completion{OpKind::kPut, Status::kCanceled, op.token,
                                    op.tag, {}, {}});
      }
    }
    puts_.clear();
    inbound_puts_.clear();
    inbound_.clear();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    if (wake_[0] >= 0) ::close(wake_[0]);
    if (wake_[1] >= 0) ::close(wake_[1]);
    listen_fd_ = wake_[0] = wake_[1] = -1;
    return Status::kOk;
  }

 private:
  void wake() {
    char b = 1;
    [[maybe_unused]] ssize_t n = ::write(wake_[1], &b, 1);
  }

  void drain_wake() {
    char buf[64];
    while (::read(wake_[0], buf, sizeof(buf)) > 0) {
    }
  }

  std::size_t drain_ready(std::vector<Completion>& sink) {
    std::size_t n = ready_.size();
    for (auto& c : ready_) sink.push_back(std::move(c));
    ready_.clear();
    return n;
  }

  // mu_ held. Finds or lazily establishes the connection used for sending
  // toward `dest`.
  ConnPtr conn_for(const NetAddress& dest) {
    auto it = by_peer_.find(dest.canonical());
    if (it != by_peer_.end()) return it->second;
    sockaddr_in sa{};
    if (dest.plugin != "tcp" || !resolve(dest.locator, sa)) return nullptr;
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return nullptr;
    set_nonblocking(fd);
    set_nodelay(fd);
    int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
    if (rc != 0 && errno != EINPROGRESS) {
      ::close(fd);
      return nullptr;
    }
    auto c = std::make_shared<Conn>();
    c->fd = fd;
    c->outbound = true;
    c->connecting = (rc != 0);
    c->peer_known = true;
    c->peer = dest;
    std::string uri = addr_.canonical();
    OwnedFrame hello;
    hello.bytes = make_frame(
        wire::MsgKind::kHello, 0,
        std::span(reinterpret_cast<const uint8_t*>(uri.data()), uri.size()));
    c->outq.push_back(std::move(hello));
    conns_.push_back(c);
    by_peer_[dest.canonical()] = c;
    return c;
  }

  void do_accept() {
    for (;;) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      set_nonblocking(fd);
      set_nodelay(fd);
      auto c = std::make_shared<Conn>();
      c->fd = fd;
      conns_.push_back(c);
    }
  }

  void remove_conn(const ConnPtr& c) {
    ::close(c->fd);
    conns_.erase(std::remove(conns_.begin(), conns_.end(), c), conns_.end());
    for (auto it = by_peer_.begin(); it != by_peer_.end();) {
      if (it->second == c) {
        it = by_peer_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void fail_conn_ops(const ConnPtr& c, Status st) {
    for (auto& item : c->outq) {
      if (auto* f = std::get_if<OwnedFrame>(&item); f && f->send_token) {
        ready_.push_back(
            Completion{OpKind::kSend, st, f->send_token, f->send_tag, {}, {}});
      }
    }
    c->outq.clear();
  }

  // Connection loss fails every in-flight operation bound to that peer;
  // future operations may lazily reconnect.
  void conn_dead(const ConnPtr& c) {
    std::string peer = c->peer_known ? c->peer.canonical() : "";
    fail_conn_ops(c, Status::kTransportError);
    remove_conn(c);
    if (peer.empty()) return;
    auto dead = std::vector<ConnPtr>();
    for (const auto& other : conns_) {
      if (other->peer_known && other->peer.canonical() == peer) {
        dead.push_back(other);
      }
    }
    for (const auto& other : dead) {
      fail_conn_ops(other, Status::kTransportError);
      remove_conn(other);
    }
    for (auto it = gets_.begin(); it != gets_.end();) {
      if (it->second.peer == peer) {
        if (!it->second.canceled) {
          ready_.push_back(Completion{OpKind::kGet, Status::kTransportError,
                                      it->second.token, it->second.tag, {}, {}});
        }
        it = gets_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = puts_.begin(); it != puts_.end();) {
      if (it->second.peer == peer) {
        if (!it->second.canceled) {
          ready_.push_back(Completion{OpKind::kPut, Status::kTransportError,
                                      it->second.token, it->second.tag, {}, {}});
        }
        it = puts_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = inbound_puts_.begin(); it != inbound_puts_.end();) {
      if (it->first.first == peer) {
        it = inbound_puts_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void handle_writable(const ConnPtr& c) {
    if (c->connecting) {
      pollfd pf{c->fd, POLLOUT, 0};
      if (::poll(&pf, 1, 0) <= 0 || !(pf.revents & (POLLOUT | POLLERR | POLLHUP))) {
        return;  // still connecting
      }
      int err = 0;
      socklen_t elen = sizeof(err);
      getsockopt(c->fd, SOL_SOCKET, SO_ERROR, &err, &elen);
      if (err != 0) {
        conn_dead(c);
        return;
      }
      c->connecting = false;
    }
    while (!c->outq.empty()) {
      OutItem& item = c->outq.front();
      if (auto* f = std::get_if<OwnedFrame>(&item)) {
        if (!write_frame(c, *f)) return;  // EAGAIN or dead
        if (f->send_token) {
          ready_.push_back(Completion{OpKind::kSend, Status::kOk,
                                      f->send_token, f->send_tag, {}, {}});
        }
        c->outq.pop_front();
      } else if (auto* g = std::get_if<GetStreamJob>(&item)) {
        if (!pump_get_job(c, *g)) return;
        c->outq.pop_front();
      } else if (auto* p = std::get_if<PutStreamJob>(&item)) {
        if (!pump_put_job(c, *p)) return;
        c->outq.pop_front();
      }
    }
  }

  // returns true when the frame is fully written; false on EAGAIN/dead conn
  bool write_frame(const ConnPtr& c, OwnedFrame& f) {
    while (f.off < f.bytes.size()) {
      ssize_t n = ::send(c->fd, f.bytes.data() + f.off, f.bytes.size() - f.off,
                         MSG_NOSIGNAL);
      if (n > 0) {
        f.off += static_cast<std::size_t>(n);
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return false;
      conn_dead(c);
      return false;
    }
    return true;
  }

  // returns true when the whole job (chunks + ack) is done
  bool pump_get_job(const ConnPtr& c, GetStreamJob& g) {
    for (;;) {
      if (!g.cur_valid) {
        if (g.ack_emitted) return true;
        auto it = exposed_.find(g.key);
        if (it == exposed_.end() ||
            g.offset + g.remaining > it->second.region.size()) {
          // region vanished mid-stream: terminate with an error ack
          g.cur.bytes = make_ack(g.cookie, kAckRemoteError);
          g.cur.off = 0;
          g.cur_valid = true;
          g.remaining = 0;
          g.ack_emitted = true;
        } else if (g.remaining == 0) {
          g.cur.bytes = make_ack(g.cookie, kAckOk);
          g.cur.off = 0;
          g.cur_valid = true;
          g.ack_emitted = true;
        } else {
          uint64_t n = std::min<uint64_t>(g.remaining, kBulkChunkSize);
          std::vector<uint8_t> payload(kBulkDataPrefix + n);
          wire::store_le64(payload.data(), g.cookie);
          wire::store_le32(payload.data() + 8, g.chunk_index);
          std::memcpy(payload.data() + kBulkDataPrefix,
                      it->second.region.data() + g.offset, n);
          g.cur.bytes = make_frame(wire::MsgKind::kBulkData, g.cookie, payload);
          g.cur.off = 0;
          g.cur_valid = true;
          g.offset += n;
          g.remaining -= n;
          ++g.chunk_index;
        }
        stats_.record_frame(g.cur.bytes);
      }
      if (!write_frame(c, g.cur)) return false;
      g.cur_valid = false;
    }
  }

  bool pump_put_job(const ConnPtr& c, PutStreamJob& p) {
    for (;;) {
      if (!p.cur_valid) {
        if (p.remaining == 0) return true;
        uint64_t n = std::min<uint64_t>(p.remaining, kBulkChunkSize);
        std::vector<uint8_t> payload(kBulkDataPrefix + n);
        wire::store_le64(payload.data(), p.cookie);
        wire::store_le32(payload.data() + 8, p.chunk_index);
        std::memcpy(payload.data() + kBulkDataPrefix, p.src + p.offset, n);
        p.cur.bytes = make_frame(wire::MsgKind::kBulkData, p.cookie, payload);
        p.cur.off = 0;
        p.cur_valid = true;
        p.offset += n;
        p.remaining -= n;
        ++p.chunk_index;
        stats_.record_frame(p.cur.bytes);
      }
      if (!write_frame(c, p.cur)) return false;
      p.cur_valid = false;
    }
  }

  void handle_readable(const ConnPtr& c) {
    for (;;) {
      std::size_t old = c->inbuf.size();
      c->inbuf.resize(old + kReadChunk);
      ssize_t n = ::recv(c->fd, c->inbuf.data() + old, kReadChunk, 0);
      if (n > 0) {
        c->inbuf.resize(old + static_cast<std::size_t>(n));
        if (!parse_frames(c)) return;  // conn died during dispatch
        if (static_cast<std::size_t>(n) < kReadChunk) return;
        continue;
      }
      c->inbuf.resize(old);
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
      if (n < 0 && errno == EINTR) continue;
      conn_dead(c);  // EOF or hard error
      return;
    }
  }

  uint32_t max_payload_for(wire::MsgKind k) const {
    switch (k) {
      case wire::MsgKind::kRequest:
      case wire::MsgKind::kResponse:
      case wire::MsgKind::kError:
        return opts_.eager_limit;
      case wire::MsgKind::kBulkGet:
      case wire::MsgKind::kBulkPut:
        return kBulkReqPayload;
      case wire::MsgKind::kBulkData:
        return kBulkDataPrefix + kBulkChunkSize;
      case wire::MsgKind::kBulkAck:
        return kBulkAckPayload;
      case wire::MsgKind::kHello:
        return 1024;
    }
    return 0;
  }

  // returns false if the connection died while dispatching
  bool parse_frames(const ConnPtr& c) {
    std::size_t pos = 0;
    while (c->inbuf.size() - pos >= wire::kHeaderSize) {
      wire::MessageHeader h;
      auto view = std::span(c->inbuf).subspan(pos);
      if (Status s = wire::decode_header(view, h); !ok(s)) {
        conn_dead(c);  // corrupted header terminates the connection
        return false;
      }
      if (h.payload_len > max_payload_for(h.kind)) {
        conn_dead(c);
        return false;
      }
      if (view.size() < wire::kHeaderSize + h.payload_len) break;
      auto frame = view.first(wire::kHeaderSize + h.payload_len);
      auto payload = frame.subspan(wire::kHeaderSize);
      if (!dispatch_frame(c, h, frame, payload)) return false;
      pos += frame.size();
    }
    if (pos > 0) {
      c->inbuf.erase(c->inbuf.begin(),
                     c->inbuf.begin() + static_cast<std::ptrdiff_t>(pos));
    }
    return true;
  }

  bool dispatch_frame(const ConnPtr& c, const wire::MessageHeader& h,
                      std::span<const uint8_t> frame,
                      std::span<const uint8_t> payload) {
    switch (h.kind) {
      case wire::MsgKind::kHello: {
        NetAddress peer;
        if (!ok(parse_address(
                std::string_view(reinterpret_cast<const char*>(payload.data()),
                                 payload.size()),
                peer))) {
          conn_dead(c);
          return false;
        }
        c->peer = peer;
        c->peer_known = true;
        auto it = by_peer_.find(peer.canonical());
        if (it == by_peer_.end()) {
          by_peer_[peer.canonical()] = c;
        } else if (it->second != c && it->second->outbound &&
                   peer.canonical() < addr_.canonical()) {
          // simultaneous connect: the smaller initiator's connection wins;
          // ours keeps draining reads but sends move to the accepted one
          by_peer_[peer.canonical()] = c;
        }
        return true;
      }
      case wire::MsgKind::kRequest:
      case wire::MsgKind::kResponse:
      case wire::MsgKind::kError: {
        if (!c->peer_known) {
          conn_dead(c);
          return false;
        }
        if (inbound_.size() >= opts_.unexpected_buffer_limit) {
          conn_dead(c);  // bounded buffer: overflow drops the connection
          return false;
        }
        stats_.recvs.fetch_add(1, std::memory_order_relaxed);
        stats_.record_frame(frame);
        Completion in;
        in.kind = OpKind::kRecvUnexpected;
        in.status = Status::kOk;
        in.source = c->peer;
        in.payload.assign(frame.begin(), frame.end());
        inbound_.push_back(std::move(in));
        return true;
      }
      case wire::MsgKind::kBulkGet: {
        if (!c->peer_known || payload.size() != kBulkReqPayload) {
          conn_dead(c);
          return false;
        }
        stats_.record_frame(frame);
        MemoryKey key = wire::load_le64(payload.data());
        uint64_t offset = wire::load_le64(payload.data() + 8);
        uint64_t length = wire::load_le64(payload.data() + 16);
        uint64_t cookie = wire::load_le64(payload.data() + 24);
        ConnPtr reply = conn_for(c->peer);
        if (!reply) return true;
        auto it = exposed_.find(key);
        if (it == exposed_.end() || !perm_allows_read(it->second.perm) ||
            offset + length > it->second.region.size()) {
          OwnedFrame f;
          f.bytes = make_ack(cookie, kAckRemoteError);
          reply->outq.push_back(std::move(f));
          return true;
        }
        GetStreamJob job;
        job.cookie = cookie;
        job.key = key;
        job.offset = offset;
        job.remaining = length;
        reply->outq.push_back(std::move(job));
        return true;
      }
      case wire::MsgKind::kBulkPut: {
        if (!c->peer_known || payload.size() != kBulkReqPayload) {
          conn_dead(c);
          return false;
        }
        stats_.record_frame(frame);
        MemoryKey key = wire::load_le64(payload.data());
        uint64_t offset = wire::load_le64(payload.data() + 8);
        uint64_t length = wire::load_le64(payload.data() + 16);
        uint64_t cookie = wire::load_le64(payload.data() + 24);
        auto peer = c->peer.canonical();
        auto it = exposed_.find(key);
        InboundPut ip;
        // write permission is checked before the first byte lands
        if (it == exposed_.end() || !perm_allows_write(it->second.perm) ||
            offset + length > it->second.region.size()) {
          ip.discard = true;
          ip.len = length;
          ConnPtr reply = conn_for(c->peer);
          if (reply) {
            OwnedFrame f;
            f.bytes = make_ack(cookie, kAckRemoteError);
            reply->outq.push_back(std::move(f));
          }
        } else {
          ip.dst = it->second.region.data() + offset;
          ip.len = length;
        }
        if (length == 0 && !ip.discard) {
          ConnPtr reply = conn_for(c->peer);
          if (reply) {
            OwnedFrame f;
            f.bytes = make_ack(cookie, kAckOk);
            reply->outq.push_back(std::move(f));
          }
          return true;
        }
        inbound_puts_[{peer, cookie}] = ip;
        return true;
      }
      case wire::MsgKind::kBulkData: {
        if (payload.size() < kBulkDataPrefix) {
          conn_dead(c);
          return false;
        }
        stats_.record_frame(frame);
        uint64_t cookie = wire::load_le64(payload.data());
        uint32_t index = wire::load_le32(payload.data() + 8);
        auto data = payload.subspan(kBulkDataPrefix);
        if (auto git = gets_.find(cookie); git != gets_.end()) {
          GetOp& op = git->second;
          if (op.canceled) return true;
          if (index != op.next_chunk || op.received + data.size() > op.len) {
            conn_dead(c);
            return false;
          }
          std::memcpy(op.dst + op.received, data.data(), data.size());
          op.received += data.size();
          ++op.next_chunk;
          return true;
        }
        if (!c->peer_known) return true;
        auto pit = inbound_puts_.find({c->peer.canonical(), cookie});
        if (pit == inbound_puts_.end()) return true;  // late data, ignore
        InboundPut& ip = pit->second;
        if (ip.received + data.size() > ip.len || index != ip.next_chunk) {
          conn_dead(c);
          return false;
        }
        if (!ip.discard) {
          std::memcpy(ip.dst + ip.received, data.data(), data.size());
        }
        ip.received += data.size();
        ++ip.next_chunk;
        if (ip.received == ip.len) {
          uint64_t ck = cookie;
          bool discard = ip.discard;
          inbound_puts_.erase(pit);
          if (!discard) {
            ConnPtr reply = conn_for(c->peer);
            if (reply) {
              OwnedFrame f;
              f.bytes = make_ack(ck, kAckOk);
              reply->outq.push_back(std::move(f));
            }
          }
        }
        return true;
      }
      case wire::MsgKind::kBulkAck: {
        if (payload.size() != kBulkAckPayload) {
          conn_dead(c);
          return false;
        }
        stats_.record_frame(frame);
        uint64_t cookie = wire::load_le64(payload.data());
        uint8_t st = payload[8];
        if (auto git = gets_.find(cookie); git != gets_.end()) {
          GetOp op = git->second;
          gets_.erase(git);
          if (!op.canceled) {
            Status s = Status::kOk;
            if (st != kAckOk) {
              s = Status::kRemoteError;
            } else if (op.received != op.len) {
              s = Status::kTransportError;  // short stream
            }
            ready_.push_back(
                Completion{OpKind::kGet, s, op.token, op.tag, {}, {}});
          }
          return true;
        }
        if (auto pit = puts_.find(cookie); pit != puts_.end()) {
          PutOp op = pit->second;
          puts_.erase(pit);
          if (!op.canceled) {
            Status s = (st == kAckOk) ? Status::kOk : Status::kRemoteError;
            ready_.push_back(
                Completion{OpKind::kPut, s, op.token, op.tag, {}, {}});
          }
          return true;
        }
        return true;  // ack for a canceled/unknown transfer
      }
      default:
        conn_dead(c);
        return false;
    }
  }

  bool closed_ = false;
  int listen_fd_ = -1;
  int wake_[2] = {-1, -1};
  std::mutex mu_;
  OpToken next_token_ = 1;
  MemoryKey next_key_ = 1;
  uint64_t next_cookie_ = 1;
  std::vector<ConnPtr> conns_;
  std::map<std::string, ConnPtr> by_peer_;
  std::deque<Completion> inbound_;
  std::deque<Completion> ready_;
  std::map<MemoryKey, Exposed> exposed_;
  std::map<uint64_t, GetOp> gets_;
  std::map<uint64_t, PutOp> puts_;
  std::map<std::pair<std::string, uint64_t>, InboundPut> inbound_puts_;
};

}  // namespace

Status listen(std::string_view locator, const EndpointOptions& opts,
              EndpointPtr& out) {
  auto ep = std::make_shared<TcpEndpoint>();
  if (Status s = ep->open(locator, opts); !ok(s)) return s;
  out = ep;
  return Status::kOk;
}

}  // namespace mrpc::nal::tcp
