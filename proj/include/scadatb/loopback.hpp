#pragma once

// Real TCP transport on the loopback interface. The server answers Modbus/TCP
// with the same request handler as the simulated network, and a socket-layer
// shim reports every connection event to a tap queue in the tap log format.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "scadatb/net.hpp"

namespace scadatb::loopback {

// Many producers, one consumer. Timestamps are wall-clock microseconds since
// the queue was created.
class TapQueue {
 public:
  TapQueue();

  void push(net::PacketEvent event);
  Micros now() const;

  // Everything queued so far, in arrival order.
  std::vector<net::PacketEvent> drain();
  // Blocks until at least `count` events have been pushed in total or the
  // timeout expires; returns whether the count was reached.
  bool wait_for_total(std::uint64_t count, std::chrono::milliseconds timeout);
  std::uint64_t total() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<net::PacketEvent> events_;
  std::uint64_t total_ = 0;
  std::chrono::steady_clock::time_point epoch_;
};

// Thread per connection. The handler is serialized, so it may own plant state.
class LoopbackServer {
 public:
  LoopbackServer(net::RequestHandler handler, TapQueue& tap, std::uint16_t port = 0);
  ~LoopbackServer();

  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  void start();
  void stop();
  std::uint16_t port() const noexcept;
  std::uint64_t connections() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocking Modbus/TCP client.
class LoopbackClient {
 public:
  LoopbackClient(const std::string& host, std::uint16_t port);
  ~LoopbackClient();

  LoopbackClient(const LoopbackClient&) = delete;
  LoopbackClient& operator=(const LoopbackClient&) = delete;

  // Sends one ADU and reads one complete response ADU.
  std::vector<std::uint8_t> exchange(const std::vector<std::uint8_t>& request);
  void close();
  net::Endpoint local_endpoint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace scadatb::loopback
