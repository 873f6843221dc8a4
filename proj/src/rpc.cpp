#include "mrpc/rpc.hpp"

#include <algorithm>

namespace mrpc {

namespace {

thread_local int g_trigger_depth = 0;

struct TriggerGuard {
  TriggerGuard() { ++g_trigger_depth; }
  ~TriggerGuard() { --g_trigger_depth; }
};

// status byte carried by ERROR frames
uint8_t status_to_wire(Status s) {
  switch (s) {
    case Status::kNoSuchRpc: return 1;
    case Status::kDecodeError: return 2;
    case Status::kCanceled: return 4;
    case Status::kTransportError: return 5;
    case Status::kOversize: return 6;
    default: return 3;  // REMOTE_ERROR
  }
}

Status wire_to_status(uint8_t b) {
  switch (b) {
    case 1: return Status::kNoSuchRpc;
    case 2: return Status::kDecodeError;
    case 4: return Status::kCanceled;
    case 5: return Status::kTransportError;
    case 6: return Status::kOversize;
    default: return Status::kRemoteError;
  }
}

std::vector<uint8_t> build_frame(wire::MsgKind kind, uint8_t flags,
                                 RpcId rpc_id, uint64_t cookie,
                                 std::span<const uint8_t> payload) {
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

std::atomic<uint64_t> g_anon_counter{0};

}  // namespace

bool inside_trigger() { return g_trigger_depth > 0; }

// ---------------------------------------------------------------- Handle

HandleState Handle::state() const {
  std::lock_guard lk(mu_);
  return state_;
}

Status Handle::call_status() const {
  std::lock_guard lk(mu_);
  return status_;
}

Status Handle::get_input(std::span<const uint8_t>& out) const {
  std::lock_guard lk(mu_);
  if (role_ != HandleRole::kTarget || state_ != HandleState::kReceived) {
    return Status::kInvalidState;
  }
  out = input_;
  return Status::kOk;
}

Status Handle::get_output(std::span<const uint8_t>& out) const {
  std::lock_guard lk(mu_);
  if (role_ != HandleRole::kOrigin || state_ != HandleState::kCompleted ||
      status_ != Status::kOk) {
    return Status::kInvalidState;
  }
  out = output_;
  return Status::kOk;
}

// ----------------------------------------------------------------- Class

Status Class::init(const std::optional<std::string>& listen_uri,
                   ClassPtr& out) {
  return init(listen_uri, ClassOptions{}, out);
}

Status Class::init(const std::optional<std::string>& listen_uri,
                   const ClassOptions& opts, ClassPtr& out) {
  ClassPtr cls(new Class());
  cls->opts_ = opts;
  if (listen_uri) {
    nal::NetAddress addr;
    if (Status s = nal::parse_address(*listen_uri, addr); !ok(s)) return s;
    nal::EndpointOptions eo;
    eo.eager_limit = opts.eager_limit;
    eo.unexpected_buffer_limit = opts.unexpected_buffer_limit;
    if (Status s = nal::listen(addr, eo, cls->ep_); !ok(s)) return s;
    cls->addressable_ = true;
  }
  out = std::move(cls);
  return Status::kOk;
}

Class::~Class() { close(); }

Status Class::close() {
  std::lock_guard lk(ep_mu_);
  if (ep_) ep_->close();
  return Status::kOk;
}

Status Class::register_rpc(std::string_view name, TargetHandler handler,
                           bool response_expected, RpcId& id) {
  if (Status s = wire::rpc_id_from_name(name, id); !ok(s)) return s;
  std::lock_guard lk(reg_mu_);
  auto it = regs_.find(id);
  if (it != regs_.end() && it->second.name != name) {
    return Status::kIdCollision;
  }
  regs_[id] = Registration{std::string(name), std::move(handler),
                           response_expected};
  return Status::kOk;
}

bool Class::registered(std::string_view name) const {
  uint32_t id = 0;
  if (!ok(wire::rpc_id_from_name(name, id))) return false;
  std::lock_guard lk(reg_mu_);
  auto it = regs_.find(id);
  return it != regs_.end() && it->second.name == name;
}

std::optional<Class::Registration> Class::find_registration(RpcId id) const {
  std::lock_guard lk(reg_mu_);
  auto it = regs_.find(id);
  if (it == regs_.end()) return std::nullopt;
  return it->second;
}

nal::NetAddress Class::self() const {
  std::lock_guard lk(ep_mu_);
  return ep_ ? ep_->address() : nal::NetAddress{};
}

nal::EndpointPtr Class::endpoint() const {
  std::lock_guard lk(ep_mu_);
  return ep_;
}

Status Class::ensure_endpoint(const std::string& plugin_hint,
                              nal::EndpointPtr& out) {
  std::lock_guard lk(ep_mu_);
  if (ep_) {
    out = ep_;
    return Status::kOk;
  }
  std::string locator;
  if (plugin_hint == "loop") {
    locator = ".anon-" + std::to_string(g_anon_counter.fetch_add(1) + 1);
  } else if (plugin_hint == "tcp") {
    locator = "127.0.0.1:0";
  } else {
    return Status::kUnknownPlugin;
  }
  nal::EndpointOptions eo;
  eo.eager_limit = opts_.eager_limit;
  eo.unexpected_buffer_limit = opts_.unexpected_buffer_limit;
  if (Status s = nal::listen(nal::NetAddress{plugin_hint, locator}, eo, ep_);
      !ok(s)) {
    return s;
  }
  out = ep_;
  return Status::kOk;
}

// --------------------------------------------------------------- Context

Status Context::create(const ClassPtr& cls, ContextPtr& out) {
  if (!cls) return Status::kInvalidState;
  out = ContextPtr(new Context());
  out->cls_ = cls;
  return Status::kOk;
}

Context::~Context() { close(); }

Status Context::close() {
  bool was = closed_.exchange(true);
  if (was) return Status::kOk;
  std::vector<uint64_t> cookies;
  {
    std::lock_guard lk(mu_);
    for (const auto& [cookie, inf] : inflight_) cookies.push_back(cookie);
    inflight_.clear();
    transfers_.clear();
    queue_.clear();
  }
  {
    std::lock_guard lk(cls_->route_mu_);
    for (uint64_t c : cookies) cls_->cookie_route_.erase(c);
  }
  return Status::kOk;
}

Diagnostics Context::diagnostics() const {
  Diagnostics d;
  d.events_enqueued = enqueued_.load();
  d.events_executed = executed_.load();
  d.unknown_cookie_drops = unknown_cookie_drops_.load();
  std::lock_guard lk(mu_);
  d.inflight = inflight_.size();
  d.queued = queue_.size();
  return d;
}

std::size_t Context::enqueue(Event ev) {
  {
    std::lock_guard lk(mu_);
    queue_.push_back(std::move(ev));
  }
  enqueued_.fetch_add(1);
  return 1;
}

Status Context::progress(std::chrono::milliseconds timeout,
                         std::size_t& enqueued) {
  enqueued = 0;
  if (closed_.load()) return Status::kContextClosed;
  nal::EndpointPtr ep = cls_->endpoint();
  if (!ep) return Status::kOk;  // nothing to drive yet
  std::vector<nal::Completion> sink;
  std::size_t surfaced = 0;
  Status ps = ep->progress(timeout, sink, surfaced);
  std::size_t count = 0;
  for (auto& comp : sink) count += route_completion(comp);
  if (ps == Status::kOk) {
    for (;;) {
      std::optional<nal::Completion> msg;
      if (!ok(ep->recv_unexpected(msg)) || !msg) break;
      count += handle_frame(std::move(*msg));
    }
  }
  enqueued = count;
  if (ps == Status::kClosed && count == 0) return Status::kContextClosed;
  return Status::kOk;
}

Status Context::trigger(std::size_t max, std::size_t& executed) {
  executed = 0;
  if (closed_.load()) return Status::kContextClosed;
  while (executed < max) {
    Event ev;
    {
      std::lock_guard lk(mu_);
      if (queue_.empty()) break;
      ev = std::move(queue_.front());
      queue_.pop_front();
    }
    {
      TriggerGuard guard;
      if (ev.fn) ev.fn(ev.handle, ev.status);
    }
    ++executed;
    executed_.fetch_add(1);
  }
  return Status::kOk;
}

std::size_t Context::route_completion(const nal::Completion& comp) {
  switch (comp.kind) {
    case nal::OpKind::kSend: {
      if (comp.tag == 0) return 0;  // fire-and-forget
      Class::TagRoute route;
      {
        std::lock_guard lk(cls_->route_mu_);
        auto it = cls_->tag_route_.find(comp.tag);
        if (it == cls_->tag_route_.end()) return 0;
        route = std::move(it->second);
        cls_->tag_route_.erase(it);
      }
      ContextPtr owner = route.ctx.lock();
      if (!owner) return 0;
      if (route.purpose == Class::TagPurpose::kRespondSend) {
        return owner->enqueue(Event{route.handle, comp.status, route.cb});
      }
      // forward send: a failure terminates the call; success either waits
      // for the response or, for no-response calls, completes now
      if (comp.status != Status::kOk) {
        return owner->finish_call(route.key, comp.status, {});
      }
      bool fire = false;
      {
        std::lock_guard lk(owner->mu_);
        auto it = owner->inflight_.find(route.key);
        fire = it != owner->inflight_.end() && !it->second.response_expected;
      }
      return fire ? owner->finish_call(route.key, Status::kOk, {}) : 0;
    }
    case nal::OpKind::kGet:
    case nal::OpKind::kPut: {
      Class::TagRoute route;
      {
        std::lock_guard lk(cls_->route_mu_);
        auto it = cls_->tag_route_.find(comp.tag);
        if (it == cls_->tag_route_.end()) return 0;
        route = std::move(it->second);
        cls_->tag_route_.erase(it);
      }
      ContextPtr owner = route.ctx.lock();
      if (!owner) return 0;
      return owner->finish_transfer_piece(route.key, comp.token, comp.status);
    }
    case nal::OpKind::kRecvUnexpected:
      return 0;  // inbound messages arrive via recv_unexpected
  }
  return 0;
}

std::size_t Context::handle_frame(nal::Completion&& msg) {
  wire::MessageHeader h;
  if (!ok(wire::decode_header(msg.payload, h)) ||
      msg.payload.size() != wire::kHeaderSize + h.payload_len) {
    unknown_cookie_drops_.fetch_add(1);
    return 0;
  }
  auto payload = std::span<const uint8_t>(msg.payload).subspan(wire::kHeaderSize);
  switch (h.kind) {
    case wire::MsgKind::kRequest:
      return handle_request_frame(h, payload, msg.source);
    case wire::MsgKind::kResponse: {
      ContextPtr owner;
      {
        std::lock_guard lk(cls_->route_mu_);
        auto it = cls_->cookie_route_.find(h.cookie);
        if (it != cls_->cookie_route_.end()) owner = it->second.lock();
      }
      if (!owner) {
        unknown_cookie_drops_.fetch_add(1);
        return 0;
      }
      return owner->finish_call(h.cookie, Status::kOk,
                                std::vector<uint8_t>(payload.begin(),
                                                     payload.end()));
    }
    case wire::MsgKind::kError: {
      if (payload.empty()) return 0;
      ContextPtr owner;
      {
        std::lock_guard lk(cls_->route_mu_);
        auto it = cls_->cookie_route_.find(h.cookie);
        if (it != cls_->cookie_route_.end()) owner = it->second.lock();
      }
      if (!owner) {
        unknown_cookie_drops_.fetch_add(1);
        return 0;
      }
      return owner->finish_call(h.cookie, wire_to_status(payload[0]), {});
    }
    default:
      unknown_cookie_drops_.fetch_add(1);
      return 0;
  }
}

std::size_t Context::handle_request_frame(const wire::MessageHeader& h,
                                          std::span<const uint8_t> payload,
                                          const nal::NetAddress& source) {
  // REQUEST payload: input_len(4) | input | bulk_desc_len(4) | descriptor
  if (payload.size() < 8) {
    send_error_reply(source, h.cookie, h.rpc_id, Status::kDecodeError);
    return 0;
  }
  uint32_t input_len = wire::load_le32(payload.data());
  if (payload.size() < 8ull + input_len) {
    send_error_reply(source, h.cookie, h.rpc_id, Status::kDecodeError);
    return 0;
  }
  uint32_t bulk_len = wire::load_le32(payload.data() + 4 + input_len);
  if (payload.size() != 8ull + input_len + bulk_len) {
    send_error_reply(source, h.cookie, h.rpc_id, Status::kDecodeError);
    return 0;
  }
  auto reg = cls_->find_registration(h.rpc_id);
  if (!reg || !reg->handler) {
    if (!(h.flags & wire::kFlagNoResponse)) {
      send_error_reply(source, h.cookie, h.rpc_id, Status::kNoSuchRpc);
    }
    return 0;
  }
  HandlePtr th(new Handle());
  th->role_ = HandleRole::kTarget;
  th->state_ = HandleState::kReceived;
  th->rpc_id_ = h.rpc_id;
  th->cookie_ = h.cookie;
  th->peer_ = source;
  th->ctx_ = weak_from_this();
  th->cls_ = cls_;
  th->response_expected_ =
      reg->response_expected && !(h.flags & wire::kFlagNoResponse);
  th->input_.assign(payload.begin() + 4, payload.begin() + 4 + input_len);
  th->bulk_desc_.assign(payload.begin() + 8 + input_len, payload.end());
  TargetHandler handler = std::move(reg->handler);
  return enqueue(Event{std::move(th), Status::kOk,
                       [handler = std::move(handler)](const HandlePtr& hh,
                                                      Status) {
                         handler(hh);
                       }});
}

std::size_t Context::finish_call(uint64_t cookie, Status status,
                                 std::vector<uint8_t>&& output) {
  InFlight inf;
  {
    std::lock_guard lk(mu_);
    auto it = inflight_.find(cookie);
    if (it == inflight_.end()) return 0;  // canceled or already terminal
    inf = std::move(it->second);
    inflight_.erase(it);
  }
  {
    std::lock_guard lk(cls_->route_mu_);
    cls_->cookie_route_.erase(cookie);
  }
  if (inf.handle) {
    std::lock_guard lk(inf.handle->mu_);
    inf.handle->state_ = (status == Status::kCanceled) ? HandleState::kCanceled
                                                       : HandleState::kCompleted;
    inf.handle->status_ = status;
    inf.handle->output_ = std::move(output);
  }
  return enqueue(Event{std::move(inf.handle), status, std::move(inf.cb)});
}

std::size_t Context::finish_transfer_piece(uint64_t transfer_id,
                                           nal::OpToken token, Status status) {
  std::function<void(Status)> cb;
  Status final_status = Status::kOk;
  std::vector<nal::OpToken> to_cancel;
  bool done = false;
  {
    std::lock_guard lk(mu_);
    auto it = transfers_.find(transfer_id);
    if (it == transfers_.end()) return 0;
    Transfer& tr = it->second;
    std::erase(tr.tokens, token);
    if (status != Status::kOk && tr.first_error == Status::kOk) {
      tr.first_error = status;
      to_cancel = tr.tokens;  // first error cancels the rest, best-effort
    }
    if (--tr.remaining == 0) {
      cb = std::move(tr.cb);
      final_status = tr.first_error;
      transfers_.erase(it);
      done = true;
    }
  }
  if (!to_cancel.empty()) {
    if (nal::EndpointPtr ep = cls_->endpoint()) {
      for (nal::OpToken t : to_cancel) ep->cancel(t);
    }
  }
  if (!done) return 0;
  return enqueue(Event{nullptr, final_status,
                       [cb = std::move(cb)](const HandlePtr&, Status st) {
                         if (cb) cb(st);
                       }});
}

void Context::send_error_reply(const nal::NetAddress& dest, uint64_t cookie,
                               RpcId id, Status status) {
  nal::EndpointPtr ep = cls_->endpoint();
  if (!ep) return;
  uint8_t code = status_to_wire(status);
  auto frame = build_frame(wire::MsgKind::kError, 0, id, cookie,
                           std::span(&code, 1));
  nal::OpToken tok = 0;
  ep->send_unexpected(dest, std::move(frame), 0, tok);
}

// ------------------------------------------------------------ operations

Status handle_create(const ContextPtr& ctx, const nal::NetAddress& dest,
                     RpcId id, HandlePtr& out) {
  if (!ctx || ctx->closed_.load()) return Status::kContextClosed;
  HandlePtr h(new Handle());
  h->role_ = HandleRole::kOrigin;
  h->state_ = HandleState::kCreated;
  h->rpc_id_ = id;
  h->peer_ = dest;
  h->ctx_ = ctx;
  h->cls_ = ctx->cls_;
  out = std::move(h);
  return Status::kOk;
}

Status forward(const HandlePtr& h, CompletionFn cb,
               std::span<const uint8_t> input,
               std::span<const uint8_t> bulk_desc) {
  if (!h || h->role_ != HandleRole::kOrigin) return Status::kInvalidState;
  ContextPtr ctx = h->ctx_.lock();
  if (!ctx || ctx->closed_.load()) return Status::kContextClosed;
  ClassPtr cls = h->cls_;
  {
    std::lock_guard lk(h->mu_);
    if (h->state_ != HandleState::kCreated) return Status::kInvalidState;
  }
  if (8ull + input.size() + bulk_desc.size() > cls->eager_limit()) {
    return Status::kOversize;
  }
  nal::EndpointPtr ep;
  if (Status s = cls->ensure_endpoint(h->peer_.plugin, ep); !ok(s)) return s;

  bool response_expected = true;
  if (auto reg = cls->find_registration(h->rpc_id_)) {
    response_expected = reg->response_expected;
  }
  uint64_t cookie = cls->next_cookie();
  uint64_t tag = cls->next_tag();

  std::vector<uint8_t> payload(8 + input.size() + bulk_desc.size());
  wire::store_le32(payload.data(), static_cast<uint32_t>(input.size()));
  std::copy(input.begin(), input.end(), payload.begin() + 4);
  wire::store_le32(payload.data() + 4 + input.size(),
                   static_cast<uint32_t>(bulk_desc.size()));
  std::copy(bulk_desc.begin(), bulk_desc.end(),
            payload.begin() + 8 + input.size());

  uint8_t flags = 0;
  if (!response_expected) flags |= wire::kFlagNoResponse;
  if (!bulk_desc.empty()) flags |= wire::kFlagHasBulk;
  auto frame =
      build_frame(wire::MsgKind::kRequest, flags, h->rpc_id_, cookie, payload);

  {
    std::lock_guard lk(h->mu_);
    if (h->state_ != HandleState::kCreated) return Status::kInvalidState;
    h->cookie_ = cookie;
    h->response_expected_ = response_expected;
    h->input_.assign(input.begin(), input.end());
    h->bulk_desc_.assign(bulk_desc.begin(), bulk_desc.end());
  }
  {
    std::lock_guard lk(ctx->mu_);
    ctx->inflight_[cookie] =
        Context::InFlight{h, std::move(cb), response_expected, 0};
  }
  {
    std::lock_guard lk(cls->route_mu_);
    cls->cookie_route_[cookie] = ctx;
    cls->tag_route_[tag] =
        Class::TagRoute{ctx, Class::TagPurpose::kForwardSend, cookie, {}, {}};
  }

  nal::OpToken token = 0;
  Status st = ep->send_unexpected(h->peer_, std::move(frame), tag, token);
  if (!ok(st)) {
    {
      std::lock_guard lk(ctx->mu_);
      ctx->inflight_.erase(cookie);
    }
    std::lock_guard lk(cls->route_mu_);
    cls->cookie_route_.erase(cookie);
    cls->tag_route_.erase(tag);
    return st;  // handle stays kCreated
  }
  {
    std::lock_guard lk(ctx->mu_);
    auto it = ctx->inflight_.find(cookie);
    if (it != ctx->inflight_.end()) it->second.send_token = token;
  }
  {
    std::lock_guard lk(h->mu_);
    if (h->state_ == HandleState::kCreated) {
      h->state_ = HandleState::kForwarded;
    }
  }
  return Status::kOk;
}

Status respond(const HandlePtr& h, CompletionFn cb,
               std::span<const uint8_t> output) {
  if (!h || h->role_ != HandleRole::kTarget) return Status::kInvalidState;
  ContextPtr ctx = h->ctx_.lock();
  if (!ctx || ctx->closed_.load()) return Status::kContextClosed;
  ClassPtr cls = h->cls_;
  {
    std::lock_guard lk(h->mu_);
    if (h->state_ != HandleState::kReceived) return Status::kInvalidState;
    if (!h->response_expected_) return Status::kInvalidState;
  }
  if (output.size() > cls->eager_limit()) return Status::kOversize;
  nal::EndpointPtr ep = cls->endpoint();
  if (!ep) return Status::kInvalidState;

  uint64_t tag = cls->next_tag();
  auto frame =
      build_frame(wire::MsgKind::kResponse, 0, h->rpc_id_, h->cookie_, output);
  {
    std::lock_guard lk(cls->route_mu_);
    cls->tag_route_[tag] = Class::TagRoute{
        ctx, Class::TagPurpose::kRespondSend, 0, h, std::move(cb)};
  }
  nal::OpToken token = 0;
  Status st = ep->send_unexpected(h->peer_, std::move(frame), tag, token);
  if (!ok(st)) {
    std::lock_guard lk(cls->route_mu_);
    cls->tag_route_.erase(tag);
    return st;
  }
  std::lock_guard lk(h->mu_);
  if (h->state_ == HandleState::kReceived) {
    h->state_ = HandleState::kResponded;
  }
  return Status::kOk;
}

Status cancel(const HandlePtr& h) {
  if (!h || h->role_ != HandleRole::kOrigin) return Status::kInvalidState;
  {
    std::lock_guard lk(h->mu_);
    if (h->state_ != HandleState::kForwarded) return Status::kInvalidState;
  }
  ContextPtr ctx = h->ctx_.lock();
  if (!ctx) return Status::kContextClosed;
  ClassPtr cls = h->cls_;
  Context::InFlight inf;
  {
    std::lock_guard lk(ctx->mu_);
    auto it = ctx->inflight_.find(h->cookie_);
    if (it == ctx->inflight_.end()) {
      return Status::kInvalidState;  // a terminal status raced ahead
    }
    inf = std::move(it->second);
    ctx->inflight_.erase(it);
  }
  {
    std::lock_guard lk(cls->route_mu_);
    cls->cookie_route_.erase(h->cookie_);
  }
  if (inf.send_token != 0) {
    if (nal::EndpointPtr ep = cls->endpoint()) ep->cancel(inf.send_token);
  }
  {
    std::lock_guard lk(h->mu_);
    h->state_ = HandleState::kCanceled;
    h->status_ = Status::kCanceled;
  }
  ctx->enqueue(Context::Event{h, Status::kCanceled, std::move(inf.cb)});
  return Status::kOk;
}

// -------------------------------------------------------------- transfers

namespace detail {

Status submit_transfer(const ContextPtr& ctx, bool is_get,
                       std::function<void(Status)> cb,
                       std::vector<BulkPiece> pieces) {
  if (!ctx || ctx->closed_.load()) return Status::kContextClosed;
  ClassPtr cls = ctx->cls_;
  if (pieces.empty()) {
    ctx->enqueue(Context::Event{
        nullptr, Status::kOk,
        [cb = std::move(cb)](const HandlePtr&, Status st) {
          if (cb) cb(st);
        }});
    return Status::kOk;
  }
  nal::EndpointPtr ep = cls->endpoint();
  if (!ep) return Status::kInvalidState;

  uint64_t tid = 0;
  {
    std::lock_guard lk(ctx->mu_);
    tid = ctx->next_transfer_++;
    Context::Transfer tr;
    tr.remaining = pieces.size();
    tr.cb = std::move(cb);
    ctx->transfers_.emplace(tid, std::move(tr));
  }
  for (auto& piece : pieces) {
    uint64_t tag = cls->next_tag();
    {
      std::lock_guard lk(cls->route_mu_);
      cls->tag_route_[tag] = Class::TagRoute{
          ctx, Class::TagPurpose::kBulkPiece, tid, {}, {}};
    }
    nal::OpToken token = 0;
    Status st = is_get ? ep->get(piece.remote, piece.key, piece.remote_offset,
                                 piece.local, tag, token)
                       : ep->put(piece.remote, piece.key, piece.remote_offset,
                                 piece.local, tag, token);
    if (!ok(st)) {
      {
        std::lock_guard lk(cls->route_mu_);
        cls->tag_route_.erase(tag);
      }
      ctx->finish_transfer_piece(tid, 0, Status::kTransportError);
      continue;
    }
    std::lock_guard lk(ctx->mu_);
    auto it = ctx->transfers_.find(tid);
    if (it != ctx->transfers_.end()) it->second.tokens.push_back(token);
  }
  return Status::kOk;
}

}  // namespace detail

// ---------------------------------------------------------- request shim

Status request_post(const ContextPtr& ctx, const nal::NetAddress& dest,
                    RpcId id, std::span<const uint8_t> input,
                    RequestPtr& out) {
  HandlePtr h;
  if (Status s = handle_create(ctx, dest, id, h); !ok(s)) return s;
  RequestPtr req(new Request());
  req->ctx_ = ctx;
  req->handle_ = h;
  auto state = req->state_;
  Status s = forward(
      h,
      [state](const HandlePtr&, Status st) {
        state->status.store(st);
        state->completed.store(true);
      },
      input);
  if (!ok(s)) return s;
  out = std::move(req);
  return Status::kOk;
}

Status Request::wait(std::chrono::milliseconds timeout) {
  using Clock = std::chrono::steady_clock;
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    std::size_t n = 0;
    auto now = Clock::now();
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - now);
    if (remaining.count() < 0) remaining = std::chrono::milliseconds(0);
    auto slice = std::min(remaining, std::chrono::milliseconds(20));
    ctx_->progress(slice, n);
    std::size_t e = 0;
    ctx_->trigger(SIZE_MAX, e);
    if (state_->completed.load()) return state_->status.load();
    if (Clock::now() >= deadline) return Status::kTimeout;
  }
}

Status Request::output(std::span<const uint8_t>& out) const {
  return handle_->get_output(out);
}

}  // namespace mrpc
