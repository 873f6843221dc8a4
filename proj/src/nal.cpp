#include "mrpc/nal.hpp"

#include <map>
#include <mutex>

#include "mrpc/transport_loop.hpp"
#include "mrpc/transport_tcp.hpp"

namespace mrpc::nal {

void Stats::record_frame(std::span<const uint8_t> frame) {
  wire::MessageHeader h;
  if (!ok(wire::decode_header(frame, h))) return;
  if (wire::is_metadata_kind(h.kind)) {
    metadata_frames.fetch_add(1, std::memory_order_relaxed);
    uint64_t sz = frame.size();
    uint64_t prev = max_metadata_frame.load(std::memory_order_relaxed);
    while (prev < sz && !max_metadata_frame.compare_exchange_weak(prev, sz)) {
    }
  } else {
    bulk_frames.fetch_add(1, std::memory_order_relaxed);
    bulk_bytes.fetch_add(frame.size(), std::memory_order_relaxed);
  }
}

Status parse_address(std::string_view uri, NetAddress& out) {
  auto sep = uri.find("://");
  if (sep == std::string_view::npos || sep == 0) return Status::kBadUri;
  std::string_view plugin = uri.substr(0, sep);
  std::string_view locator = uri.substr(sep + 3);
  if (locator.empty()) return Status::kBadUri;
  for (char c : plugin) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'))) {
      return Status::kBadUri;
    }
  }
  if (!plugin_registered(plugin)) return Status::kUnknownPlugin;
  out.plugin.assign(plugin);
  out.locator.assign(locator);
  return Status::kOk;
}

namespace {

struct Registry {
  std::mutex mu;
  std::map<std::string, ListenFn, std::less<>> plugins;

  Registry() {
    plugins.emplace("loop", loop::listen);
    plugins.emplace("tcp", tcp::listen);
  }

  static Registry& instance() {
    static Registry r;
    return r;
  }
};

}  // namespace

Status register_plugin(const std::string& name, ListenFn listen) {
  auto& r = Registry::instance();
  std::lock_guard lk(r.mu);
  r.plugins[name] = std::move(listen);
  return Status::kOk;
}

bool plugin_registered(std::string_view name) {
  auto& r = Registry::instance();
  std::lock_guard lk(r.mu);
  return r.plugins.find(name) != r.plugins.end();
}

Status listen(const NetAddress& addr, const EndpointOptions& opts,
              EndpointPtr& out) {
  ListenFn fn;
  {
    auto& r = Registry::instance();
    std::lock_guard lk(r.mu);
    auto it = r.plugins.find(addr.plugin);
    if (it == r.plugins.end()) return Status::kUnknownPlugin;
    fn = it->second;
  }
  return fn(addr.locator, opts, out);
}

}  // namespace mrpc::nal
