#pragma once

#include <string_view>

#include "mrpc/nal.hpp"

namespace mrpc::nal::tcp {

// TCP plugin. Locator is "host:port"; port 0 binds an ephemeral port,
// reflected in the endpoint's canonical address.
//
// Every unit on a connection is a fixed-size wire header followed by
// payload_len bytes. One connection carries both channels:
//   - REQUEST/RESPONSE/ERROR frames are delivered as unexpected messages
//     and are capped at eager_limit bytes of payload;
//   - one-sided get/put are emulated with BULK_GET/BULK_PUT/BULK_DATA/
//     BULK_ACK frames (256 KiB chunks), never visible above the NAL.
//
// Connections are created lazily on first send and identified by a HELLO
// frame carrying the initiator's canonical address; simultaneous connects
// are deduplicated by keeping the lexicographically smaller initiator's
// connection for sending (the duplicate stays open as a passive reader).
//
// Messages passed to send_unexpected must already be valid frames; the tcp
// plugin writes them verbatim onto the stream.
Status listen(std::string_view locator, const EndpointOptions& opts,
              EndpointPtr& out);

inline constexpr std::size_t kBulkChunkSize = 256 * 1024;

// BULK_* payload layouts, little-endian, bit-exact:
//   BULK_GET / BULK_PUT: key(8) | offset(8) | length(8) | transfer-cookie(8)
//   BULK_DATA:           transfer-cookie(8) | chunk-index(4) | chunk bytes
//   BULK_ACK:            transfer-cookie(8) | status(1)
inline constexpr std::size_t kBulkReqPayload = 32;
inline constexpr std::size_t kBulkDataPrefix = 12;
inline constexpr std::size_t kBulkAckPayload = 9;

inline constexpr uint8_t kAckOk = 0;
inline constexpr uint8_t kAckRemoteError = 1;

}  // namespace mrpc::nal::tcp
