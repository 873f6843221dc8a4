#pragma once

#include <doctest.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mrpc/bulk.hpp"
#include "mrpc/nal.hpp"
#include "mrpc/rpc.hpp"
#include "mrpc/transport_loop.hpp"

namespace testsup {

using namespace mrpc;
using namespace std::chrono_literals;

inline std::string fresh_listen_uri(const std::string& transport) {
  static std::atomic<int> counter{0};
  if (transport == "tcp") return "tcp://127.0.0.1:0";
  return transport + "://peer-" + std::to_string(counter.fetch_add(1));
}

struct Peer {
  ClassPtr cls;
  ContextPtr ctx;

  std::string uri() const { return cls->self().canonical(); }
};

inline Peer make_peer(const std::string& transport,
                      const ClassOptions& opts = {}) {
  Peer p;
  REQUIRE(Class::init(fresh_listen_uri(transport), opts, p.cls) ==
          Status::kOk);
  REQUIRE(Context::create(p.cls, p.ctx) == Status::kOk);
  return p;
}

// pumps every context until the predicate holds or the budget trips
template <typename Pred>
void drive(std::initializer_list<ContextPtr> ctxs, Pred done,
           std::chrono::milliseconds budget = 10000ms) {
  auto deadline = std::chrono::steady_clock::now() + budget;
  while (!done()) {
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    for (const auto& ctx : ctxs) {
      std::size_t n = 0;
      ctx->progress(1ms, n);
      ctx->trigger(SIZE_MAX, n);
    }
  }
}

inline std::vector<uint8_t> random_bytes(std::mt19937_64& rng,
                                         std::size_t len) {
  std::vector<uint8_t> out(len);
  for (auto& b : out) b = static_cast<uint8_t>(rng());
  return out;
}

// NAL plugin that forwards to a loop endpoint and records which contract
// operations the layers above invoke.
class RecordingEndpoint final : public nal::Endpoint {
 public:
  RecordingEndpoint(nal::EndpointPtr inner, std::string locator,
                    std::shared_ptr<std::set<std::string>> calls)
      : inner_(std::move(inner)), calls_(std::move(calls)) {
    addr_ = nal::NetAddress{"mock", std::move(locator)};
    opts_ = inner_->options();
  }

  nal::NetAddress to_loop(const nal::NetAddress& a) {
    return nal::NetAddress{"loop", a.locator};
  }

  void note(const char* op) {
    std::lock_guard lk(mu_);
    calls_->insert(op);
  }

  Status send_unexpected(const nal::NetAddress& dest, std::vector<uint8_t> msg,
                         nal::OpTag tag, nal::OpToken& token) override {
    note("send_unexpected");
    return inner_->send_unexpected(to_loop(dest), std::move(msg), tag, token);
  }
  Status recv_unexpected(std::optional<nal::Completion>& msg) override {
    note("recv_unexpected");
    Status s = inner_->recv_unexpected(msg);
    if (msg) msg->source = nal::NetAddress{"mock", msg->source.locator};
    return s;
  }
  Status mem_expose(std::span<uint8_t> region, nal::Perm perm,
                    nal::MemoryKey& key) override {
    note("mem_expose");
    return inner_->mem_expose(region, perm, key);
  }
  Status mem_unexpose(nal::MemoryKey key) override {
    note("mem_unexpose");
    return inner_->mem_unexpose(key);
  }
  Status get(const nal::NetAddress& remote, nal::MemoryKey key,
             uint64_t remote_offset, std::span<uint8_t> local, nal::OpTag tag,
             nal::OpToken& token) override {
    note("get");
    return inner_->get(to_loop(remote), key, remote_offset, local, tag, token);
  }
  Status put(const nal::NetAddress& remote, nal::MemoryKey key,
             uint64_t remote_offset, std::span<const uint8_t> local,
             nal::OpTag tag, nal::OpToken& token) override {
    note("put");
    return inner_->put(to_loop(remote), key, remote_offset, local, tag, token);
  }
  Status progress(std::chrono::milliseconds timeout,
                  std::vector<nal::Completion>& sink,
                  std::size_t& surfaced) override {
    note("progress");
    return inner_->progress(timeout, sink, surfaced);
  }
  Status cancel(nal::OpToken token) override {
    note("cancel");
    return inner_->cancel(token);
  }
  Status close() override {
    note("close");
    return inner_->close();
  }

 private:
  std::mutex mu_;
  nal::EndpointPtr inner_;
  std::shared_ptr<std::set<std::string>> calls_;
};

// registers the "mock" plugin once; the shared call set accumulates across
// every endpoint the plugin creates
inline std::shared_ptr<std::set<std::string>> install_mock_plugin() {
  static auto calls = std::make_shared<std::set<std::string>>();
  static bool installed = [] {
    nal::register_plugin(
        "mock", [](std::string_view locator, const nal::EndpointOptions& opts,
                   nal::EndpointPtr& out) {
          nal::EndpointPtr inner;
          if (Status s = nal::loop::listen(locator, opts, inner); !ok(s)) {
            return s;
          }
          out = std::make_shared<RecordingEndpoint>(
              std::move(inner), std::string(locator), calls);
          return Status::kOk;
        });
    return true;
  }();
  (void)installed;
  return calls;
}

inline const std::set<std::string>& nal_contract_ops() {
  static const std::set<std::string> ops = {
      "send_unexpected", "recv_unexpected", "mem_expose",
      "mem_unexpose",    "get",             "put",
      "progress",        "cancel",          "close"};
  return ops;
}

}  // namespace testsup
