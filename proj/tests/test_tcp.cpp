#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <random>
#include <vector>

#include "mrpc/nal.hpp"
#include "mrpc/transport_tcp.hpp"
#include "mrpc/wire.hpp"

using namespace mrpc;
using namespace mrpc::nal;
using namespace std::chrono_literals;

namespace {

EndpointPtr listen_tcp(const EndpointOptions& opts = {}) {
  EndpointPtr ep;
  REQUIRE(tcp::listen("127.0.0.1:0", opts, ep) == Status::kOk);
  return ep;
}

std::vector<uint8_t> frame_of(const std::vector<uint8_t>& payload) {
  wire::MessageHeader h;
  h.kind = wire::MsgKind::kRequest;
  h.payload_len = static_cast<uint32_t>(payload.size());
  auto hdr = wire::encode_header(h);
  std::vector<uint8_t> out(hdr.begin(), hdr.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

// drives both endpoints until `done` or the deadline trips
template <typename Pred>
void drive(const EndpointPtr& a, const EndpointPtr& b,
           std::vector<Completion>& sink_a, std::vector<Completion>& sink_b,
           Pred done, std::chrono::milliseconds budget = 5000ms) {
  auto deadline = std::chrono::steady_clock::now() + budget;
  while (!done()) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    std::size_t n = 0;
    a->progress(1ms, sink_a, n);
    b->progress(1ms, sink_b, n);
  }
}

int raw_connect(const NetAddress& addr) {
  auto colon = addr.locator.rfind(':');
  std::string host = addr.locator.substr(0, colon);
  int port = std::stoi(addr.locator.substr(colon + 1));
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<uint16_t>(port));
  inet_pton(AF_INET, host.c_str(), &sa.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0);
  return fd;
}

}  // namespace

TEST_CASE("listen on port 0 yields a concrete port") {
  auto ep = listen_tcp();
  CHECK(ep->address().plugin == "tcp");
  auto colon = ep->address().locator.rfind(':');
  REQUIRE(colon != std::string::npos);
  int port = std::stoi(ep->address().locator.substr(colon + 1));
  CHECK(port > 0);
}

TEST_CASE("binding the same port twice fails") {
  auto ep = listen_tcp();
  EndpointPtr second;
  CHECK(tcp::listen(ep->address().locator, {}, second) ==
        Status::kBindFailed);
}

TEST_CASE("send and reply over one connection") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  std::vector<uint8_t> payload{1, 2, 3};
  OpToken tok = 0;
  REQUIRE(a->send_unexpected(b->address(), frame_of(payload), 7, tok) ==
          Status::kOk);

  std::vector<Completion> sa;
  std::vector<Completion> sb;
  std::optional<Completion> got;
  drive(a, b, sa, sb, [&] {
    if (!got) b->recv_unexpected(got);
    return got.has_value() && !sa.empty();
  });
  REQUIRE(got.has_value());
  CHECK(got->payload == frame_of(payload));
  CHECK(got->source == a->address());
  REQUIRE(sa.size() == 1);
  CHECK(sa[0].kind == OpKind::kSend);
  CHECK(sa[0].status == Status::kOk);
  CHECK(sa[0].tag == 7);

  // reply to the observed source, no new listener involved
  REQUIRE(b->send_unexpected(got->source, frame_of({9}), 8, tok) ==
          Status::kOk);
  std::optional<Completion> back;
  drive(a, b, sa, sb, [&] {
    if (!back) a->recv_unexpected(back);
    return back.has_value();
  });
  CHECK(back->payload == frame_of({9}));
  CHECK(back->source == b->address());
}

TEST_CASE("send to an unreachable address completes with TRANSPORT_ERROR") {
  auto a = listen_tcp();
  // grab a port that is then closed again
  NetAddress dead;
  {
    auto tmp = listen_tcp();
    dead = tmp->address();
    tmp->close();
  }
  OpToken tok = 0;
  REQUIRE(a->send_unexpected(dead, frame_of({}), 1, tok) == Status::kOk);
  std::vector<Completion> sink;
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (sink.empty()) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    std::size_t n = 0;
    a->progress(5ms, sink, n);
  }
  CHECK(sink[0].kind == OpKind::kSend);
  CHECK(sink[0].status == Status::kTransportError);
}

TEST_CASE("self-send over tcp") {
  auto a = listen_tcp();
  OpToken tok = 0;
  REQUIRE(a->send_unexpected(a->address(), frame_of({42}), 1, tok) ==
          Status::kOk);
  std::vector<Completion> sink;
  std::optional<Completion> got;
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!got) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    std::size_t n = 0;
    a->progress(5ms, sink, n);
    a->recv_unexpected(got);
  }
  CHECK(got->payload == frame_of({42}));
  CHECK(got->source == a->address());
}

TEST_CASE("emulated get moves bytes chunk by chunk") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  std::mt19937_64 rng(31);
  std::vector<uint8_t> region(3 * tcp::kBulkChunkSize + 12345);
  for (auto& x : region) x = static_cast<uint8_t>(rng());
  MemoryKey key = 0;
  REQUIRE(b->mem_expose(region, Perm::kRead, key) == Status::kOk);

  std::vector<uint8_t> local(region.size());
  OpToken tok = 0;
  REQUIRE(a->get(b->address(), key, 0, local, 3, tok) == Status::kOk);
  std::vector<Completion> sa;
  std::vector<Completion> sb;
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  REQUIRE(sa.size() == 1);
  CHECK(sa[0].kind == OpKind::kGet);
  CHECK(sa[0].status == Status::kOk);
  CHECK(local == region);

  // unknown key: a single ack carries the error
  sa.clear();
  REQUIRE(a->get(b->address(), key + 999, 0, local, 4, tok) == Status::kOk);
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  CHECK(sa[0].status == Status::kRemoteError);

  // out-of-range window
  sa.clear();
  std::vector<uint8_t> small(64);
  REQUIRE(a->get(b->address(), key, region.size() - 32, small, 5, tok) ==
          Status::kOk);
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  CHECK(sa[0].status == Status::kRemoteError);
}

TEST_CASE("emulated put writes remote bytes and honors permissions") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  std::vector<uint8_t> region(2 * tcp::kBulkChunkSize, 0);
  MemoryKey key = 0;
  REQUIRE(b->mem_expose(region, Perm::kReadWrite, key) == Status::kOk);

  std::mt19937_64 rng(37);
  std::vector<uint8_t> data(region.size());
  for (auto& x : data) x = static_cast<uint8_t>(rng());

  OpToken tok = 0;
  REQUIRE(a->put(b->address(), key, 0, data, 1, tok) == Status::kOk);
  std::vector<Completion> sa;
  std::vector<Completion> sb;
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  REQUIRE(sa[0].kind == OpKind::kPut);
  REQUIRE(sa[0].status == Status::kOk);
  CHECK(region == data);

  // write permission is checked before any byte lands
  std::vector<uint8_t> ro(128, 0x11);
  MemoryKey ro_key = 0;
  REQUIRE(b->mem_expose(ro, Perm::kRead, ro_key) == Status::kOk);
  sa.clear();
  std::vector<uint8_t> attempt(128, 0x22);
  REQUIRE(a->put(b->address(), ro_key, 0, attempt, 2, tok) == Status::kOk);
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  CHECK(sa[0].status == Status::kRemoteError);
  CHECK(ro == std::vector<uint8_t>(128, 0x11));

  // zero-length put
  sa.clear();
  std::span<const uint8_t> none;
  REQUIRE(a->put(b->address(), key, 0, none, 3, tok) == Status::kOk);
  drive(a, b, sa, sb, [&] { return !sa.empty(); });
  CHECK(sa[0].status == Status::kOk);
}

TEST_CASE("64 MiB get matches the remote checksum over tcp") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  std::mt19937_64 rng(41);
  std::vector<uint8_t> region(64ull * 1024 * 1024);
  for (auto& x : region) x = static_cast<uint8_t>(rng());
  MemoryKey key = 0;
  REQUIRE(b->mem_expose(region, Perm::kRead, key) == Status::kOk);

  std::vector<uint8_t> local(region.size());
  OpToken tok = 0;
  uint64_t bulk_before = a->stats().bulk_frames.load();
  REQUIRE(a->get(b->address(), key, 0, local, 1, tok) == Status::kOk);
  std::vector<Completion> sa;
  std::vector<Completion> sb;
  drive(a, b, sa, sb, [&] { return !sa.empty(); }, 60000ms);
  REQUIRE(sa[0].status == Status::kOk);
  CHECK(wire::checksum(local) == wire::checksum(region));
  // 64 MiB in 256 KiB chunks: at least 256 data frames plus the ack
  CHECK(a->stats().bulk_frames.load() - bulk_before >= 257);
  // metadata never grew past the eager limit on either side
  CHECK(a->stats().max_metadata_frame.load() <=
        a->options().eager_limit + wire::kHeaderSize);
  CHECK(b->stats().max_metadata_frame.load() <=
        b->options().eager_limit + wire::kHeaderSize);
}

TEST_CASE("connection killed mid-transfer fails the get") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  std::vector<uint8_t> region(64ull * 1024 * 1024, 0x3C);
  MemoryKey key = 0;
  REQUIRE(b->mem_expose(region, Perm::kRead, key) == Status::kOk);

  std::vector<uint8_t> local(region.size());
  OpToken tok = 0;
  REQUIRE(a->get(b->address(), key, 0, local, 1, tok) == Status::kOk);
  std::vector<Completion> sa;
  std::vector<Completion> sb;
  std::size_t n = 0;
  // let the request reach b and the stream start, then kill b
  for (int i = 0; i < 10; ++i) {
    a->progress(1ms, sa, n);
    b->progress(1ms, sb, n);
  }
  REQUIRE(sa.empty());  // 64 MiB cannot fit socket buffers that fast
  b->close();
  auto deadline = std::chrono::steady_clock::now() + 10s;
  while (sa.empty()) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    a->progress(5ms, sa, n);
  }
  CHECK(sa[0].kind == OpKind::kGet);
  CHECK(sa[0].status == Status::kTransportError);
}

TEST_CASE("simultaneous connects are deduplicated and traffic flows") {
  auto a = listen_tcp();
  auto b = listen_tcp();
  OpToken tok = 0;
  const int kEach = 25;
  for (int i = 0; i < kEach; ++i) {
    uint8_t ia = static_cast<uint8_t>(i);
    uint8_t ib = static_cast<uint8_t>(100 + i);
    REQUIRE(a->send_unexpected(b->address(), frame_of({ia}), 0, tok) ==
            Status::kOk);
    REQUIRE(b->send_unexpected(a->address(), frame_of({ib}), 0, tok) ==
            Status::kOk);
  }
  std::vector<Completion> sa;
  std::vector<Completion> sb;
  std::vector<uint8_t> at_a;
  std::vector<uint8_t> at_b;
  drive(a, b, sa, sb, [&] {
    std::optional<Completion> m;
    while (a->recv_unexpected(m) == Status::kOk && m) {
      at_a.push_back(m->payload.back());
      m.reset();
    }
    while (b->recv_unexpected(m) == Status::kOk && m) {
      at_b.push_back(m->payload.back());
      m.reset();
    }
    return at_a.size() == kEach && at_b.size() == kEach;
  });
  // per-pair FIFO both ways
  for (int i = 0; i < kEach; ++i) {
    CHECK(at_b[i] == i);
    CHECK(at_a[i] == 100 + i);
  }
  CHECK(sa.size() == kEach);
  CHECK(sb.size() == kEach);
}

TEST_CASE("corrupted header terminates the connection without desync") {
  auto ep = listen_tcp();
  int fd = raw_connect(ep->address());
  std::vector<uint8_t> garbage(64, 0xEE);
  REQUIRE(::send(fd, garbage.data(), garbage.size(), 0) ==
          static_cast<ssize_t>(garbage.size()));
  std::vector<Completion> sink;
  std::size_t n = 0;
  for (int i = 0; i < 20; ++i) ep->progress(1ms, sink, n);
  std::optional<Completion> got;
  ep->recv_unexpected(got);
  CHECK(!got.has_value());
  // endpoint is still healthy for real traffic
  OpToken tok = 0;
  REQUIRE(ep->send_unexpected(ep->address(), frame_of({5}), 1, tok) ==
          Status::kOk);
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!got) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    ep->progress(5ms, sink, n);
    ep->recv_unexpected(got);
  }
  CHECK(got->payload == frame_of({5}));
  ::close(fd);
}

TEST_CASE("inbound metadata frames above the eager limit kill the connection") {
  EndpointOptions opts;
  auto ep = listen_tcp(opts);
  int fd = raw_connect(ep->address());
  // well-formed hello so the peer is known
  std::string uri = "tcp://127.0.0.1:1";
  wire::MessageHeader hello;
  hello.kind = wire::MsgKind::kHello;
  hello.payload_len = static_cast<uint32_t>(uri.size());
  auto hb = wire::encode_header(hello);
  std::vector<uint8_t> bytes(hb.begin(), hb.end());
  bytes.insert(bytes.end(), uri.begin(), uri.end());
  // oversize REQUEST header follows
  wire::MessageHeader big;
  big.kind = wire::MsgKind::kRequest;
  big.payload_len = opts.eager_limit + 1;
  auto bb = wire::encode_header(big);
  bytes.insert(bytes.end(), bb.begin(), bb.end());
  bytes.resize(bytes.size() + opts.eager_limit + 1, 0);
  REQUIRE(::send(fd, bytes.data(), bytes.size(), 0) ==
          static_cast<ssize_t>(bytes.size()));
  std::vector<Completion> sink;
  std::size_t n = 0;
  for (int i = 0; i < 20; ++i) ep->progress(1ms, sink, n);
  std::optional<Completion> got;
  ep->recv_unexpected(got);
  CHECK(!got.has_value());
  ::close(fd);
}
