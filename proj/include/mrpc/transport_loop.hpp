#pragma once

#include <chrono>
#include <string_view>

#include "mrpc/nal.hpp"

namespace mrpc::nal::loop {

// In-process loopback plugin. Locators are arbitrary tokens in a
// process-global fabric; completions are always deferred to progress, even
// though the work itself happens synchronously at initiation.
Status listen(std::string_view locator, const EndpointOptions& opts,
              EndpointPtr& out);

// Test-only fault injection, applied to operations initiated on `ep`:
//   drop_next  - the next N sends complete OK but the payload is discarded
//   stall_next - the next N operations never complete until canceled
//   delay      - completions surface only after this much time has passed
struct FaultInjection {
  int drop_next = 0;
  int stall_next = 0;
  std::chrono::milliseconds delay{0};
};

Status set_faults(const EndpointPtr& ep, const FaultInjection& faults);

}  // namespace mrpc::nal::loop
