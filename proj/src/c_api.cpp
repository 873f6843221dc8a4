#include "mrpc/mrpc.h"

#include <atomic>
#include <cstring>

#include "mrpc/bulk.hpp"
#include "mrpc/rpc.hpp"

using mrpc::Status;

// the C enum mirrors Status value for value
static_assert(MRPC_OK == static_cast<int>(Status::kOk));
static_assert(MRPC_CANCELED == static_cast<int>(Status::kCanceled));
static_assert(MRPC_TIMEOUT == static_cast<int>(Status::kTimeout));
static_assert(MRPC_TRANSPORT_ERROR == static_cast<int>(Status::kTransportError));
static_assert(MRPC_REMOTE_ERROR == static_cast<int>(Status::kRemoteError));
static_assert(MRPC_NO_SUCH_RPC == static_cast<int>(Status::kNoSuchRpc));
static_assert(MRPC_DECODE_ERROR == static_cast<int>(Status::kDecodeError));
static_assert(MRPC_OVERSIZE == static_cast<int>(Status::kOversize));
static_assert(MRPC_INVALID_STATE == static_cast<int>(Status::kInvalidState));
static_assert(MRPC_ID_COLLISION == static_cast<int>(Status::kIdCollision));
static_assert(MRPC_CONTEXT_CLOSED == static_cast<int>(Status::kContextClosed));
static_assert(MRPC_BAD_MAGIC == static_cast<int>(Status::kBadMagic));
static_assert(MRPC_SHORT_BUFFER == static_cast<int>(Status::kShortBuffer));
static_assert(MRPC_BAD_VERSION == static_cast<int>(Status::kBadVersion));
static_assert(MRPC_BAD_KIND == static_cast<int>(Status::kBadKind));
static_assert(MRPC_EMPTY_NAME == static_cast<int>(Status::kEmptyName));
static_assert(MRPC_DECODE_OVERRUN == static_cast<int>(Status::kDecodeOverrun));
static_assert(MRPC_LENGTH_OVERFLOW == static_cast<int>(Status::kLengthOverflow));
static_assert(MRPC_BAD_URI == static_cast<int>(Status::kBadUri));
static_assert(MRPC_UNKNOWN_PLUGIN == static_cast<int>(Status::kUnknownPlugin));
static_assert(MRPC_ADDRESS_IN_USE == static_cast<int>(Status::kAddressInUse));
static_assert(MRPC_BIND_FAILED == static_cast<int>(Status::kBindFailed));
static_assert(MRPC_CLOSED == static_cast<int>(Status::kClosed));
static_assert(MRPC_EMPTY_REGION == static_cast<int>(Status::kEmptyRegion));
static_assert(MRPC_UNKNOWN_TOKEN == static_cast<int>(Status::kUnknownToken));
static_assert(MRPC_OUT_OF_RANGE == static_cast<int>(Status::kOutOfRange));
static_assert(MRPC_PERMISSION == static_cast<int>(Status::kPermission));
static_assert(MRPC_CRC_MISMATCH == static_cast<int>(Status::kCrcMismatch));

namespace {

mrpc_return_t wrap(Status s) { return static_cast<mrpc_return_t>(s); }

}  // namespace

struct mrpc_class {
  mrpc::ClassPtr impl;
};

struct mrpc_context {
  mrpc::ContextPtr impl;
};

struct mrpc_handle {
  mrpc::HandlePtr impl;
  std::atomic<int> refs{1};
};

struct mrpc_bulk {
  mrpc::BulkPtr impl;
};

struct mrpc_request {
  mrpc::RequestPtr impl;
};

namespace {

mrpc_handle_t* wrap_handle(mrpc::HandlePtr h) {
  auto* w = new mrpc_handle;
  w->impl = std::move(h);
  return w;
}

void unref_handle(mrpc_handle_t* h) {
  if (h && h->refs.fetch_sub(1) == 1) delete h;
}

// bridges a C completion callback into the C++ callback model; the wrapper
// handle is owned by the bridge for the duration of the user callback
mrpc::CompletionFn bridge_completion(mrpc_completion_fn cb, void* user) {
  if (!cb) return {};
  return [cb, user](const mrpc::HandlePtr& h, Status st) {
    mrpc_handle_t* w = h ? wrap_handle(h) : nullptr;
    cb(w, wrap(st), user);
    unref_handle(w);
  };
}

}  // namespace

mrpc_return_t mrpc_class_init(const char* listen_uri, mrpc_class_t** out) {
  return mrpc_class_init_opts(listen_uri, 0, out);
}

mrpc_return_t mrpc_class_init_opts(const char* listen_uri,
                                   uint32_t eager_limit, mrpc_class_t** out) {
  if (!out) return MRPC_INVALID_STATE;
  mrpc::ClassOptions opts;
  if (eager_limit > 0) opts.eager_limit = eager_limit;
  std::optional<std::string> uri;
  if (listen_uri && *listen_uri) uri = listen_uri;
  mrpc::ClassPtr cls;
  if (Status s = mrpc::Class::init(uri, opts, cls); !ok(s)) return wrap(s);
  *out = new mrpc_class{std::move(cls)};
  return MRPC_OK;
}

void mrpc_class_free(mrpc_class_t* cls) {
  if (!cls) return;
  cls->impl->close();
  delete cls;
}

mrpc_return_t mrpc_class_self_uri(mrpc_class_t* cls, char* buf, size_t cap) {
  if (!cls || !buf) return MRPC_INVALID_STATE;
  std::string uri =
      cls->impl->addressable() ? cls->impl->self().canonical() : std::string();
  if (uri.size() + 1 > cap) return MRPC_SHORT_BUFFER;
  std::memcpy(buf, uri.c_str(), uri.size() + 1);
  return MRPC_OK;
}

uint32_t mrpc_class_eager_limit(const mrpc_class_t* cls) {
  return cls ? cls->impl->eager_limit() : 0;
}

mrpc_return_t mrpc_register(mrpc_class_t* cls, const char* name,
                            mrpc_target_fn fn, void* user,
                            int response_expected, uint32_t* id_out) {
  if (!cls || !name) return MRPC_INVALID_STATE;
  mrpc::TargetHandler handler;
  if (fn) {
    handler = [fn, user](const mrpc::HandlePtr& h) {
      mrpc_handle_t* w = wrap_handle(h);
      fn(w, user);
      unref_handle(w);
    };
  }
  uint32_t id = 0;
  Status s = cls->impl->register_rpc(name, std::move(handler),
                                     response_expected != 0, id);
  if (id_out) *id_out = id;
  return wrap(s);
}

int mrpc_registered(mrpc_class_t* cls, const char* name) {
  return (cls && name && cls->impl->registered(name)) ? 1 : 0;
}

mrpc_return_t mrpc_rpc_id(const char* name, uint32_t* id_out) {
  if (!name || !id_out) return MRPC_INVALID_STATE;
  return wrap(mrpc::wire::rpc_id_from_name(name, *id_out));
}

mrpc_return_t mrpc_context_create(mrpc_class_t* cls, mrpc_context_t** out) {
  if (!cls || !out) return MRPC_INVALID_STATE;
  mrpc::ContextPtr ctx;
  if (Status s = mrpc::Context::create(cls->impl, ctx); !ok(s)) return wrap(s);
  *out = new mrpc_context{std::move(ctx)};
  return MRPC_OK;
}

void mrpc_context_free(mrpc_context_t* ctx) {
  if (!ctx) return;
  ctx->impl->close();
  delete ctx;
}

mrpc_return_t mrpc_progress(mrpc_context_t* ctx, unsigned timeout_ms,
                            size_t* enqueued) {
  if (!ctx) return MRPC_CONTEXT_CLOSED;
  std::size_t n = 0;
  Status s = ctx->impl->progress(std::chrono::milliseconds(timeout_ms), n);
  if (enqueued) *enqueued = n;
  return wrap(s);
}

mrpc_return_t mrpc_trigger(mrpc_context_t* ctx, size_t max, size_t* executed) {
  if (!ctx) return MRPC_CONTEXT_CLOSED;
  std::size_t n = 0;
  Status s = ctx->impl->trigger(max, n);
  if (executed) *executed = n;
  return wrap(s);
}

int mrpc_inside_trigger(void) { return mrpc::inside_trigger() ? 1 : 0; }

mrpc_return_t mrpc_diagnostics(mrpc_context_t* ctx, mrpc_diag_t* out) {
  if (!ctx || !out) return MRPC_INVALID_STATE;
  mrpc::Diagnostics d = ctx->impl->diagnostics();
  out->events_enqueued = d.events_enqueued;
  out->events_executed = d.events_executed;
  out->unknown_cookie_drops = d.unknown_cookie_drops;
  out->inflight = d.inflight;
  out->queued = d.queued;
  return MRPC_OK;
}

mrpc_return_t mrpc_create(mrpc_context_t* ctx, const char* dest_uri,
                          uint32_t id, mrpc_handle_t** out) {
  if (!ctx || !dest_uri || !out) return MRPC_INVALID_STATE;
  mrpc::nal::NetAddress dest;
  if (Status s = mrpc::nal::parse_address(dest_uri, dest); !ok(s)) {
    return wrap(s);
  }
  mrpc::HandlePtr h;
  if (Status s = mrpc::handle_create(ctx->impl, dest, id, h); !ok(s)) {
    return wrap(s);
  }
  *out = wrap_handle(std::move(h));
  return MRPC_OK;
}

mrpc_return_t mrpc_forward(mrpc_handle_t* h, mrpc_completion_fn cb, void* user,
                           const void* input, size_t input_len,
                           const void* bulk_desc, size_t bulk_len) {
  if (!h) return MRPC_INVALID_STATE;
  auto in = std::span(static_cast<const uint8_t*>(input), input_len);
  auto bd = std::span(static_cast<const uint8_t*>(bulk_desc), bulk_len);
  return wrap(mrpc::forward(h->impl, bridge_completion(cb, user), in, bd));
}

mrpc_return_t mrpc_respond(mrpc_handle_t* h, mrpc_completion_fn cb, void* user,
                           const void* output, size_t output_len) {
  if (!h) return MRPC_INVALID_STATE;
  auto out = std::span(static_cast<const uint8_t*>(output), output_len);
  return wrap(mrpc::respond(h->impl, bridge_completion(cb, user), out));
}

mrpc_return_t mrpc_cancel(mrpc_handle_t* h) {
  if (!h) return MRPC_INVALID_STATE;
  return wrap(mrpc::cancel(h->impl));
}

mrpc_return_t mrpc_get_input(mrpc_handle_t* h, const void** data,
                             size_t* len) {
  if (!h || !data || !len) return MRPC_INVALID_STATE;
  std::span<const uint8_t> s;
  if (Status st = h->impl->get_input(s); !ok(st)) return wrap(st);
  *data = s.data();
  *len = s.size();
  return MRPC_OK;
}

mrpc_return_t mrpc_get_output(mrpc_handle_t* h, const void** data,
                              size_t* len) {
  if (!h || !data || !len) return MRPC_INVALID_STATE;
  std::span<const uint8_t> s;
  if (Status st = h->impl->get_output(s); !ok(st)) return wrap(st);
  *data = s.data();
  *len = s.size();
  return MRPC_OK;
}

mrpc_return_t mrpc_get_bulk_descriptor(mrpc_handle_t* h, const void** data,
                                       size_t* len) {
  if (!h || !data || !len) return MRPC_INVALID_STATE;
  auto s = h->impl->bulk_descriptor();
  *data = s.data();
  *len = s.size();
  return MRPC_OK;
}

void mrpc_handle_ref(mrpc_handle_t* h) {
  if (h) h->refs.fetch_add(1);
}

void mrpc_handle_free(mrpc_handle_t* h) { unref_handle(h); }

mrpc_return_t mrpc_request_post(mrpc_context_t* ctx, const char* dest_uri,
                                uint32_t id, const void* input, size_t len,
                                mrpc_request_t** out) {
  if (!ctx || !dest_uri || !out) return MRPC_INVALID_STATE;
  mrpc::nal::NetAddress dest;
  if (Status s = mrpc::nal::parse_address(dest_uri, dest); !ok(s)) {
    return wrap(s);
  }
  mrpc::RequestPtr req;
  auto in = std::span(static_cast<const uint8_t*>(input), len);
  if (Status s = mrpc::request_post(ctx->impl, dest, id, in, req); !ok(s)) {
    return wrap(s);
  }
  *out = new mrpc_request{std::move(req)};
  return MRPC_OK;
}

mrpc_return_t mrpc_request_wait(mrpc_request_t* req, unsigned timeout_ms,
                                mrpc_return_t* status_out) {
  if (!req) return MRPC_INVALID_STATE;
  Status s = req->impl->wait(std::chrono::milliseconds(timeout_ms));
  if (status_out) *status_out = wrap(s);
  return wrap(s);
}

int mrpc_request_test(mrpc_request_t* req) {
  return (req && req->impl->test()) ? 1 : 0;
}

mrpc_return_t mrpc_request_output(mrpc_request_t* req, const void** data,
                                  size_t* len) {
  if (!req || !data || !len) return MRPC_INVALID_STATE;
  std::span<const uint8_t> s;
  if (Status st = req->impl->output(s); !ok(st)) return wrap(st);
  *data = s.data();
  *len = s.size();
  return MRPC_OK;
}

void mrpc_request_free(mrpc_request_t* req) { delete req; }

mrpc_return_t mrpc_bulk_create(mrpc_class_t* cls,
                               const mrpc_segment_t* segments, size_t count,
                               int perm, mrpc_bulk_t** out) {
  if (!cls || !out) return MRPC_INVALID_STATE;
  if (perm < 1 || perm > 3) return MRPC_PERMISSION;
  std::vector<std::span<uint8_t>> regions;
  regions.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    regions.push_back(
        std::span(static_cast<uint8_t*>(segments[i].base), segments[i].len));
  }
  mrpc::BulkPtr h;
  Status s = mrpc::bulk_create(cls->impl, regions,
                               static_cast<mrpc::nal::Perm>(perm), h);
  if (!ok(s)) return wrap(s);
  *out = new mrpc_bulk{std::move(h)};
  return MRPC_OK;
}

mrpc_return_t mrpc_bulk_serialize(const mrpc_bulk_t* bh, void* buf, size_t cap,
                                  size_t* written) {
  if (!bh || !written) return MRPC_INVALID_STATE;
  std::vector<uint8_t> bytes;
  if (Status s = mrpc::bulk_serialize(*bh->impl, bytes); !ok(s)) {
    return wrap(s);
  }
  *written = bytes.size();
  if (!buf || cap < bytes.size()) return MRPC_SHORT_BUFFER;
  std::memcpy(buf, bytes.data(), bytes.size());
  return MRPC_OK;
}

mrpc_return_t mrpc_bulk_deserialize(const void* bytes, size_t len,
                                    mrpc_bulk_t** out) {
  if (!bytes || !out) return MRPC_INVALID_STATE;
  mrpc::BulkPtr h;
  Status s = mrpc::bulk_deserialize(
      std::span(static_cast<const uint8_t*>(bytes), len), h);
  if (!ok(s)) return wrap(s);
  *out = new mrpc_bulk{std::move(h)};
  return MRPC_OK;
}

uint64_t mrpc_bulk_size(const mrpc_bulk_t* bh) {
  return bh ? bh->impl->total_size() : 0;
}

mrpc_return_t mrpc_bulk_transfer(mrpc_context_t* ctx, int op,
                                 mrpc_bulk_t* remote, uint64_t remote_offset,
                                 mrpc_bulk_t* local, uint64_t local_offset,
                                 uint64_t length, mrpc_bulk_fn cb, void* user) {
  if (!ctx || !remote || !local) return MRPC_INVALID_STATE;
  mrpc::BulkCompletionFn fn;
  if (cb) {
    fn = [cb, user](Status st) { cb(wrap(st), user); };
  }
  mrpc::BulkOp bop = (op == MRPC_BULK_PUSH) ? mrpc::BulkOp::kPush
                                            : mrpc::BulkOp::kPull;
  return wrap(mrpc::bulk_transfer(ctx->impl, bop, remote->impl, remote_offset,
                                  local->impl, local_offset, length,
                                  std::move(fn)));
}

mrpc_return_t mrpc_bulk_unexpose(mrpc_bulk_t* bh) {
  if (!bh) return MRPC_INVALID_STATE;
  return wrap(mrpc::bulk_free(bh->impl));
}

void mrpc_bulk_free(mrpc_bulk_t* bh) {
  if (!bh) return;
  if (bh->impl->locality() == mrpc::BulkLocality::kLocal) {
    mrpc::bulk_free(bh->impl);  // idempotent here: INVALID_STATE is ignored
  }
  delete bh;
}

uint32_t mrpc_crc32(const void* data, size_t len) {
  return mrpc::wire::checksum(
      std::span(static_cast<const uint8_t*>(data), len));
}

const char* mrpc_strerror(mrpc_return_t rc) {
  return mrpc::to_string(static_cast<Status>(rc));
}
