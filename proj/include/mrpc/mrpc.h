/* mrpc - nonblocking RPC with a separate bulk-data channel.
 *
 * C interface to the mrpc core. All objects are opaque; every call that can
 * fail returns an mrpc_return_t. User callbacks run only inside
 * mrpc_trigger, on the calling thread.
 */
#ifndef MRPC_MRPC_H
#define MRPC_MRPC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mrpc_return {
  MRPC_OK = 0,
  MRPC_CANCELED = 1,
  MRPC_TIMEOUT = 2,
  MRPC_TRANSPORT_ERROR = 3,
  MRPC_REMOTE_ERROR = 4,
  MRPC_NO_SUCH_RPC = 5,
  MRPC_DECODE_ERROR = 6,
  MRPC_OVERSIZE = 7,
  MRPC_INVALID_STATE = 8,
  MRPC_ID_COLLISION = 9,
  MRPC_CONTEXT_CLOSED = 10,
  MRPC_BAD_MAGIC = 11,
  MRPC_SHORT_BUFFER = 12,
  MRPC_BAD_VERSION = 13,
  MRPC_BAD_KIND = 14,
  MRPC_EMPTY_NAME = 15,
  MRPC_DECODE_OVERRUN = 16,
  MRPC_LENGTH_OVERFLOW = 17,
  MRPC_BAD_URI = 18,
  MRPC_UNKNOWN_PLUGIN = 19,
  MRPC_ADDRESS_IN_USE = 20,
  MRPC_BIND_FAILED = 21,
  MRPC_CLOSED = 22,
  MRPC_EMPTY_REGION = 23,
  MRPC_UNKNOWN_TOKEN = 24,
  MRPC_OUT_OF_RANGE = 25,
  MRPC_PERMISSION = 26,
  MRPC_CRC_MISMATCH = 27
} mrpc_return_t;

typedef struct mrpc_class mrpc_class_t;
typedef struct mrpc_context mrpc_context_t;
typedef struct mrpc_handle mrpc_handle_t;
typedef struct mrpc_bulk mrpc_bulk_t;
typedef struct mrpc_request mrpc_request_t;

/* ---- class: endpoint + registration table ----
 * listen_uri is "plugin://locator" ("tcp://127.0.0.1:0", "loop://name") or
 * NULL for a class that only originates calls. */
mrpc_return_t mrpc_class_init(const char* listen_uri, mrpc_class_t** out);
/* eager_limit 0 picks the default (4096 bytes). */
mrpc_return_t mrpc_class_init_opts(const char* listen_uri,
                                   uint32_t eager_limit, mrpc_class_t** out);
void mrpc_class_free(mrpc_class_t* cls);
/* NUL-terminated canonical address; empty string when not addressable. */
mrpc_return_t mrpc_class_self_uri(mrpc_class_t* cls, char* buf, size_t cap);
uint32_t mrpc_class_eager_limit(const mrpc_class_t* cls);

/* Target callback; the handle is valid for the duration of the call. Use
 * mrpc_handle_ref to keep it (e.g. to respond from a later callback). */
typedef void (*mrpc_target_fn)(mrpc_handle_t* handle, void* user);

mrpc_return_t mrpc_register(mrpc_class_t* cls, const char* name,
                            mrpc_target_fn fn, void* user,
                            int response_expected, uint32_t* id_out);
int mrpc_registered(mrpc_class_t* cls, const char* name);
/* Deterministic name -> id derivation (FNV-1a, 32-bit). */
mrpc_return_t mrpc_rpc_id(const char* name, uint32_t* id_out);

/* ---- context: completion queue + progress/trigger ---- */
mrpc_return_t mrpc_context_create(mrpc_class_t* cls, mrpc_context_t** out);
void mrpc_context_free(mrpc_context_t* ctx);
/* Drives I/O for at most timeout_ms and queues completion events. */
mrpc_return_t mrpc_progress(mrpc_context_t* ctx, unsigned timeout_ms,
                            size_t* enqueued);
/* Runs up to max queued callbacks FIFO on the calling thread. */
mrpc_return_t mrpc_trigger(mrpc_context_t* ctx, size_t max, size_t* executed);
int mrpc_inside_trigger(void);

typedef struct mrpc_diag {
  uint64_t events_enqueued;
  uint64_t events_executed;
  uint64_t unknown_cookie_drops;
  size_t inflight;
  size_t queued;
} mrpc_diag_t;
mrpc_return_t mrpc_diagnostics(mrpc_context_t* ctx, mrpc_diag_t* out);

/* ---- calls ---- */
typedef void (*mrpc_completion_fn)(mrpc_handle_t* handle,
                                   mrpc_return_t status, void* user);

mrpc_return_t mrpc_create(mrpc_context_t* ctx, const char* dest_uri,
                          uint32_t id, mrpc_handle_t** out);
/* Nonblocking; cb fires under trigger with the terminal status. bulk_desc
 * may be NULL. The input is copied at forward time. */
mrpc_return_t mrpc_forward(mrpc_handle_t* h, mrpc_completion_fn cb, void* user,
                           const void* input, size_t input_len,
                           const void* bulk_desc, size_t bulk_len);
mrpc_return_t mrpc_respond(mrpc_handle_t* h, mrpc_completion_fn cb, void* user,
                           const void* output, size_t output_len);
mrpc_return_t mrpc_cancel(mrpc_handle_t* h);
mrpc_return_t mrpc_get_input(mrpc_handle_t* h, const void** data, size_t* len);
mrpc_return_t mrpc_get_output(mrpc_handle_t* h, const void** data,
                              size_t* len);
mrpc_return_t mrpc_get_bulk_descriptor(mrpc_handle_t* h, const void** data,
                                       size_t* len);
void mrpc_handle_ref(mrpc_handle_t* h);
void mrpc_handle_free(mrpc_handle_t* h);

/* ---- request shim: post/test/wait on top of the callback model ---- */
mrpc_return_t mrpc_request_post(mrpc_context_t* ctx, const char* dest_uri,
                                uint32_t id, const void* input, size_t len,
                                mrpc_request_t** out);
/* Loops progress/trigger; returns the call status via status_out, or
 * MRPC_TIMEOUT (the request stays completable). */
mrpc_return_t mrpc_request_wait(mrpc_request_t* req, unsigned timeout_ms,
                                mrpc_return_t* status_out);
/* Poll only: nonzero once completed. */
int mrpc_request_test(mrpc_request_t* req);
mrpc_return_t mrpc_request_output(mrpc_request_t* req, const void** data,
                                  size_t* len);
void mrpc_request_free(mrpc_request_t* req);

/* ---- bulk data ---- */
typedef struct mrpc_segment {
  void* base;
  size_t len;
} mrpc_segment_t;

#define MRPC_BULK_READ 1
#define MRPC_BULK_WRITE 2
#define MRPC_BULK_READWRITE 3

#define MRPC_BULK_PULL 0
#define MRPC_BULK_PUSH 1

typedef void (*mrpc_bulk_fn)(mrpc_return_t status, void* user);

mrpc_return_t mrpc_bulk_create(mrpc_class_t* cls,
                               const mrpc_segment_t* segments, size_t count,
                               int perm, mrpc_bulk_t** out);
/* Two-call sizing: with buf NULL or cap too small, *written gets the needed
 * size and the call returns MRPC_SHORT_BUFFER. */
mrpc_return_t mrpc_bulk_serialize(const mrpc_bulk_t* bh, void* buf, size_t cap,
                                  size_t* written);
mrpc_return_t mrpc_bulk_deserialize(const void* bytes, size_t len,
                                    mrpc_bulk_t** out);
uint64_t mrpc_bulk_size(const mrpc_bulk_t* bh);
/* op is MRPC_BULK_PULL or MRPC_BULK_PUSH; remote must be a deserialized
 * descriptor, local a locally created handle. */
mrpc_return_t mrpc_bulk_transfer(mrpc_context_t* ctx, int op,
                                 mrpc_bulk_t* remote, uint64_t remote_offset,
                                 mrpc_bulk_t* local, uint64_t local_offset,
                                 uint64_t length, mrpc_bulk_fn cb, void* user);
/* Unexposes the segments of a local handle (the spec's bulk_free). */
mrpc_return_t mrpc_bulk_unexpose(mrpc_bulk_t* bh);
/* Releases the wrapper; local handles are unexposed if still exposed. */
void mrpc_bulk_free(mrpc_bulk_t* bh);

/* ---- utilities ---- */
uint32_t mrpc_crc32(const void* data, size_t len);
const char* mrpc_strerror(mrpc_return_t rc);

#ifdef __cplusplus
}
#endif

#endif /* MRPC_MRPC_H */
