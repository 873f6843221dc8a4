#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrpc/nal.hpp"
#include "mrpc/status.hpp"
#include "mrpc/wire.hpp"

namespace mrpc {

using RpcId = uint32_t;

class Class;
class Context;
class Handle;
class Request;
using ClassPtr = std::shared_ptr<Class>;
using ContextPtr = std::shared_ptr<Context>;
using HandlePtr = std::shared_ptr<Handle>;
using RequestPtr = std::shared_ptr<Request>;

// Target-side callback: runs under trigger when a request arrives.
using TargetHandler = std::function<void(const HandlePtr&)>;
// Origin/respond completion callback: runs under trigger with the terminal
// status of the operation it was attached to.
using CompletionFn = std::function<void(const HandlePtr&, Status)>;

struct ClassOptions {
  uint32_t eager_limit = wire::kDefaultEagerLimit;
  std::size_t unexpected_buffer_limit = 1024;
};

enum class HandleRole : uint8_t { kOrigin, kTarget };

enum class HandleState : uint8_t {
  // origin: kCreated -> kForwarded -> kCompleted | kCanceled
  kCreated,
  kForwarded,
  kCompleted,
  kCanceled,
  // target: kReceived -> kResponded
  kReceived,
  kResponded,
};

struct Diagnostics {
  uint64_t events_enqueued = 0;
  uint64_t events_executed = 0;
  uint64_t unknown_cookie_drops = 0;
  std::size_t inflight = 0;
  std::size_t queued = 0;
};

namespace detail {
// One contiguous slice of a bulk transfer: both sides resolved to a single
// (key, offset) on the remote and a raw span on the local side.
struct BulkPiece {
  nal::NetAddress remote;
  nal::MemoryKey key = 0;
  uint64_t remote_offset = 0;
  std::span<uint8_t> local;
};
Status submit_transfer(const ContextPtr& ctx, bool is_get,
                       std::function<void(Status)> cb,
                       std::vector<BulkPiece> pieces);
}  // namespace detail

// Per-call state object; origin side owns the call from creation to the
// terminal callback, target side from receipt to the response send.
class Handle {
 public:
  HandleRole role() const { return role_; }
  HandleState state() const;
  RpcId id() const { return rpc_id_; }
  uint64_t cookie() const { return cookie_; }
  const nal::NetAddress& peer() const { return peer_; }
  // terminal status of an origin call (valid once kCompleted/kCanceled)
  Status call_status() const;

  // valid only on target handles in kReceived state
  Status get_input(std::span<const uint8_t>& out) const;
  // valid only on origin handles in kCompleted state with OK status
  Status get_output(std::span<const uint8_t>& out) const;
  // serialized bulk descriptor attached to the request, empty if none
  std::span<const uint8_t> bulk_descriptor() const { return bulk_desc_; }
  bool response_expected() const { return response_expected_; }

 private:
  friend class Context;
  friend Status handle_create(const ContextPtr&, const nal::NetAddress&,
                              RpcId, HandlePtr&);
  friend Status forward(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>, std::span<const uint8_t>);
  friend Status respond(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>);
  friend Status cancel(const HandlePtr&);

  mutable std::mutex mu_;
  HandleRole role_ = HandleRole::kOrigin;
  HandleState state_ = HandleState::kCreated;
  Status status_ = Status::kOk;
  RpcId rpc_id_ = 0;
  uint64_t cookie_ = 0;
  bool response_expected_ = true;
  nal::NetAddress peer_;
  std::weak_ptr<Context> ctx_;
  ClassPtr cls_;
  std::vector<uint8_t> input_;
  std::vector<uint8_t> output_;
  std::vector<uint8_t> bulk_desc_;
};

// Registration table plus the endpoint; a class simultaneously originates
// calls and executes registered target callbacks.
class Class : public std::enable_shared_from_this<Class> {
 public:
  static Status init(const std::optional<std::string>& listen_uri,
                     ClassPtr& out);
  static Status init(const std::optional<std::string>& listen_uri,
                     const ClassOptions& opts, ClassPtr& out);
  ~Class();

  // Maps rpc_id_from_name(name) to the handler. Re-registering a name
  // replaces its handler; two distinct names hashing equal is a hard error.
  Status register_rpc(std::string_view name, TargetHandler handler,
                      bool response_expected, RpcId& id);
  bool registered(std::string_view name) const;

  bool addressable() const { return addressable_; }
  // The class's own address; meaningful once an endpoint exists.
  nal::NetAddress self() const;
  uint32_t eager_limit() const { return opts_.eager_limit; }

  // The underlying endpoint (may be null until first use for classes
  // created without a listen uri).
  nal::EndpointPtr endpoint() const;
  // Creates the endpoint on demand, picking the plugin from `hint`.
  Status ensure_endpoint(const std::string& plugin_hint,
                         nal::EndpointPtr& out);

  Status close();

 private:
  friend class Context;
  friend Status forward(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>, std::span<const uint8_t>);
  friend Status respond(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>);
  friend Status cancel(const HandlePtr&);
  friend Status detail::submit_transfer(const ContextPtr&, bool,
                                        std::function<void(Status)>,
                                        std::vector<detail::BulkPiece>);

  struct Registration {
    std::string name;
    TargetHandler handler;
    bool response_expected = true;
  };

  enum class TagPurpose : uint8_t {
    kForwardSend,
    kRespondSend,
    kBulkPiece,
  };
  struct TagRoute {
    std::weak_ptr<Context> ctx;
    TagPurpose purpose = TagPurpose::kForwardSend;
    uint64_t key = 0;  // cookie or transfer id
    HandlePtr handle;  // kRespondSend only
    CompletionFn cb;   // kRespondSend only
  };

  Class() = default;

  std::optional<Registration> find_registration(RpcId id) const;

  uint64_t next_cookie() { return cookie_counter_.fetch_add(1) + 1; }
  uint64_t next_tag() { return tag_counter_.fetch_add(1) + 1; }

  ClassOptions opts_;
  bool addressable_ = false;
  std::optional<std::string> pinned_uri_;

  mutable std::mutex ep_mu_;
  nal::EndpointPtr ep_;

  mutable std::mutex reg_mu_;
  std::map<RpcId, Registration> regs_;

  std::atomic<uint64_t> cookie_counter_{0};
  std::atomic<uint64_t> tag_counter_{0};

  // routing of cookies and send tags to the owning context
  mutable std::mutex route_mu_;
  std::unordered_map<uint64_t, std::weak_ptr<Context>> cookie_route_;
  std::unordered_map<uint64_t, TagRoute> tag_route_;
};

// Completion queue plus the in-flight call table. Multiple contexts may
// share one class; responses find their way back to the posting context.
class Context : public std::enable_shared_from_this<Context> {
 public:
  static Status create(const ClassPtr& cls, ContextPtr& out);
  ~Context();

  // Drives network I/O, converts transport completions and inbound frames
  // into queued completion events. Never executes user callbacks.
  Status progress(std::chrono::milliseconds timeout, std::size_t& enqueued);

  // Executes up to `max` queued callbacks, FIFO, on the calling thread.
  Status trigger(std::size_t max, std::size_t& executed);

  const ClassPtr& rpc_class() const { return cls_; }
  Diagnostics diagnostics() const;
  Status close();

 private:
  friend class Class;
  friend Status handle_create(const ContextPtr&, const nal::NetAddress&,
                              RpcId, HandlePtr&);
  friend Status forward(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>, std::span<const uint8_t>);
  friend Status respond(const HandlePtr&, CompletionFn,
                        std::span<const uint8_t>);
  friend Status cancel(const HandlePtr&);
  friend Status detail::submit_transfer(const ContextPtr&, bool,
                                        std::function<void(Status)>,
                                        std::vector<detail::BulkPiece>);

  struct Event {
    HandlePtr handle;
    Status status = Status::kOk;
    CompletionFn fn;
  };

  struct InFlight {
    HandlePtr handle;
    CompletionFn cb;
    bool response_expected = true;
    nal::OpToken send_token = 0;
  };

  struct Transfer {
    std::size_t remaining = 0;
    Status first_error = Status::kOk;
    std::function<void(Status)> cb;
    std::vector<nal::OpToken> tokens;
  };

  Context() = default;

  std::size_t enqueue(Event ev);
  std::size_t route_completion(const nal::Completion& comp);
  std::size_t handle_frame(nal::Completion&& msg);
  std::size_t handle_request_frame(const wire::MessageHeader& h,
                                   std::span<const uint8_t> payload,
                                   const nal::NetAddress& source);
  std::size_t finish_call(uint64_t cookie, Status status,
                          std::vector<uint8_t>&& output);
  std::size_t finish_transfer_piece(uint64_t transfer_id, nal::OpToken token,
                                    Status status);
  void send_error_reply(const nal::NetAddress& dest, uint64_t cookie,
                        RpcId id, Status status);

  ClassPtr cls_;
  std::atomic<bool> closed_{false};

  mutable std::mutex mu_;
  std::deque<Event> queue_;
  std::unordered_map<uint64_t, InFlight> inflight_;
  std::unordered_map<uint64_t, Transfer> transfers_;
  uint64_t next_transfer_ = 1;

  std::atomic<uint64_t> enqueued_{0};
  std::atomic<uint64_t> executed_{0};
  std::atomic<uint64_t> unknown_cookie_drops_{0};
};

// true while the calling thread is executing inside trigger; user callbacks
// observe this as true at entry
bool inside_trigger();

Status handle_create(const ContextPtr& ctx, const nal::NetAddress& dest,
                     RpcId id, HandlePtr& out);

// Nonblocking: encodes and enqueues the REQUEST frame; `cb` fires later
// under trigger with the call's terminal status. The input is copied into
// the handle at forward time.
Status forward(const HandlePtr& h, CompletionFn cb,
               std::span<const uint8_t> input,
               std::span<const uint8_t> bulk_desc = {});

Status respond(const HandlePtr& h, CompletionFn cb,
               std::span<const uint8_t> output);

// Best-effort: the callback eventually fires with kCanceled unless a
// terminal status raced ahead; the in-flight cookie is retired exactly once.
Status cancel(const HandlePtr& h);

// Request shim: post/test/wait on top of the callback model.
class Request {
 public:
  // Loops progress/trigger until completion or deadline. Returns the call's
  // terminal status, or kTimeout (the request stays completable).
  Status wait(std::chrono::milliseconds timeout);
  // Poll only: true once the internal callback has executed.
  bool test() const { return state_->completed.load(); }

  Status status() const { return state_->status.load(); }
  Status output(std::span<const uint8_t>& out) const;
  const HandlePtr& handle() const { return handle_; }

 private:
  friend Status request_post(const ContextPtr&, const nal::NetAddress&,
                             RpcId, std::span<const uint8_t>, RequestPtr&);

  struct State {
    std::atomic<bool> completed{false};
    std::atomic<Status> status{Status::kOk};
  };

  ContextPtr ctx_;
  HandlePtr handle_;
  std::shared_ptr<State> state_ = std::make_shared<State>();
};

Status request_post(const ContextPtr& ctx, const nal::NetAddress& dest,
                    RpcId id, std::span<const uint8_t> input, RequestPtr& out);

}  // namespace mrpc
