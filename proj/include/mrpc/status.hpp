#pragma once

namespace mrpc {

// Unified return code for every layer. Values are stable: the C API mirrors
// them one to one and static_asserts on the mapping.
enum class Status : int {
  kOk = 0,

  // asynchronous operation outcomes
  kCanceled = 1,
  kTimeout = 2,
  kTransportError = 3,
  kRemoteError = 4,

  // rpc layer
  kNoSuchRpc = 5,
  kDecodeError = 6,
  kOversize = 7,
  kInvalidState = 8,
  kIdCollision = 9,
  kContextClosed = 10,

  // wire layer
  kBadMagic = 11,
  kShortBuffer = 12,
  kBadVersion = 13,
  kBadKind = 14,
  kEmptyName = 15,
  kDecodeOverrun = 16,
  kLengthOverflow = 17,

  // addressing / endpoints
  kBadUri = 18,
  kUnknownPlugin = 19,
  kAddressInUse = 20,
  kBindFailed = 21,
  kClosed = 22,
  kEmptyRegion = 23,
  kUnknownToken = 24,

  // bulk layer
  kOutOfRange = 25,
  kPermission = 26,

  // bench verification
  kCrcMismatch = 27,
};

const char* to_string(Status s);

inline bool ok(Status s) { return s == Status::kOk; }

}  // namespace mrpc
