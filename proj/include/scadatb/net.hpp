#pragma once

// Simulated field network: a virtual-clock scheduler, an in-memory TCP-like
// transport that records every handshake step and data segment, the Modbus
// server hosted on the PLC, and the polling clients (HMI, historian) that
// produce the normal traffic.

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scadatb/common.hpp"
#include "scadatb/modbus.hpp"
#include "scadatb/plant.hpp"

namespace scadatb::net {

inline constexpr std::uint16_t kModbusPort = 502;
inline constexpr std::uint32_t kHeaderBytes = 54;  // Ethernet + IPv4 + TCP
inline constexpr std::uint8_t kProtocolTcp = 6;

struct Endpoint {
  std::uint32_t address = 0;
  std::uint16_t port = 0;

  auto operator<=>(const Endpoint&) const = default;
};

std::uint32_t parse_address(std::string_view dotted);
std::string format_address(std::uint32_t address);
std::string to_string(const Endpoint& ep);
// "a.b.c.d:port"; a bare address yields port 0.
Endpoint parse_endpoint(std::string_view text);

enum class PacketKind { HandshakeSyn, HandshakeSynAck, HandshakeAck, Data, Fin, Rst };

const char* to_string(PacketKind kind);
PacketKind parse_packet_kind(std::string_view text);

using ConnectionId = std::uint64_t;

struct PacketEvent {
  Micros timestamp = 0;
  Endpoint src;
  Endpoint dst;
  PacketKind kind = PacketKind::Data;
  std::uint32_t payload_bytes = 0;
  std::uint32_t header_bytes = kHeaderBytes;
  ConnectionId connection = 0;
  std::uint32_t sequence = 0;

  std::uint64_t wire_bytes() const { return header_bytes + payload_bytes; }
  bool operator==(const PacketEvent&) const = default;
};

// Total order used by the tap: timestamp, then connection, then sequence.
bool tap_order(const PacketEvent& a, const PacketEvent& b);

// Newline-delimited tap log, one JSON object per event.
inline constexpr int kTapLogVersion = 1;
void write_tap_log(std::ostream& out, std::span<const PacketEvent> events);
std::vector<PacketEvent> read_tap_log(std::istream& in);

// Scheduler -------------------------------------------------------------------

class Scheduler {
 public:
  using Task = std::function<void()>;

  Micros now() const noexcept { return now_; }

  // Tasks scheduled in the past run at now().
  void at(Micros when, Task task);
  void after(Micros delay, Task task) { at(now_ + delay, std::move(task)); }

  // Runs every task due at or before `until` in (time, insertion) order and
  // leaves now() == until.
  void run_until(Micros until);
  bool idle() const noexcept { return queue_.empty(); }

 private:
  struct Item {
    Micros when;
    std::uint64_t order;
    Task task;
    bool operator>(const Item& o) const { return when != o.when ? when > o.when : order > o.order; }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue_;
  std::uint64_t next_order_ = 0;
  Micros now_ = 0;
};

// Transport -------------------------------------------------------------------

enum class ConnectionMode { Full, HalfOpen };

struct ConnectionPolicy {
  ConnectionMode mode = ConnectionMode::Full;
};

enum class ConnectStatus { Established, HalfOpen, Refused };

struct ConnectResult {
  ConnectionId id = 0;
  ConnectStatus status = ConnectStatus::Refused;
  Micros ready_at = 0;  // when the handshake finishes (Full) or the reply arrives
};

struct NetworkTiming {
  Micros link_delay = 250;                       // one-way
  Micros request_timeout = 2 * kMicrosPerSecond;  // client gives up on a silent server
  bool operator==(const NetworkTiming&) const = default;
};

// Bytes in, optional bytes out. No reply models a dropped request.
using RequestHandler = std::function<std::optional<std::vector<std::uint8_t>>(std::span<const std::uint8_t>)>;

class SimNetwork {
 public:
  explicit SimNetwork(Scheduler& scheduler, NetworkTiming timing = {});

  const NetworkTiming& timing() const noexcept { return timing_; }

  void listen(Endpoint at, RequestHandler handler);
  bool listening(Endpoint at) const { return listeners_.contains(at); }

  // Emits the handshake at now(): Full -> Syn, SynAck, Ack; HalfOpen -> Syn,
  // SynAck; no listener -> Syn, Rst and status Refused.
  ConnectResult connect(Endpoint client, Endpoint server, ConnectionPolicy policy = {});

  struct Exchange {
    std::optional<std::vector<std::uint8_t>> response;
    Micros completes_at = 0;  // response arrival, or now() + request_timeout
  };

  // Sends a request Data segment at now() on an established connection.
  // Throws std::logic_error if the connection is not established.
  Exchange send(ConnectionId id, std::span<const std::uint8_t> request);

  // Orderly close: Fin from the client at now(), Fin from the server one
  // link delay later. No-op on connections that are already closed.
  void close(ConnectionId id);

  bool is_open(ConnectionId id) const;

  // Ordered events with timestamp <= up_to, removed from the pending buffer.
  std::vector<PacketEvent> drain(Micros up_to);

  // Ordered copy of every event recorded so far (drained ones included when
  // retention is on).
  std::vector<PacketEvent> tap() const;

  void set_retain_history(bool retain) { retain_ = retain; }
  std::uint64_t event_count() const noexcept { return event_count_; }

 private:
  struct Conn {
    Endpoint client;
    Endpoint server;
    bool established = false;
    bool open = false;
    std::uint32_t next_seq = 0;
  };

  void emit(Conn& c, ConnectionId id, Micros when, bool from_client, PacketKind kind, std::uint32_t payload);

  Scheduler& scheduler_;
  NetworkTiming timing_;
  std::map<Endpoint, RequestHandler> listeners_;
  std::map<ConnectionId, Conn> connections_;
  ConnectionId next_id_ = 1;
  std::vector<PacketEvent> pending_;
  std::vector<PacketEvent> history_;
  bool retain_ = true;
  std::uint64_t event_count_ = 0;
};

// Modbus server -----------------------------------------------------------------

struct DeviceIdentity {
  std::string vendor_name = "AquaductSim";
  std::string product_code = "WT-1";
  std::string revision = "1.0";
  std::string vendor_url = "aquaductsim.local";
  std::string product_name = "Tank Level Controller";
  std::string model_name = "WT-1000";
  std::string application_name = "level-control";
  std::string firmware_build = "fw 2.3.1-sim";  // extended object 0x80
};

struct ServerConfig {
  std::set<std::uint8_t> unit_ids = {1};
  DeviceIdentity identity;
};

// Answers one request against the plant. Writes go through write_point on
// `plant`. Returns nothing for unit ids the server does not own; every other
// failure is reported in-band as an exception response.
std::optional<modbus::Frame> serve_request(const modbus::Frame& request, plant::Plant& plant,
                                           const ServerConfig& config);

std::vector<modbus::DeviceObject> device_objects(const DeviceIdentity& identity, modbus::DeviceIdCategory category);

// Byte-level front end bound to a controller.
class ModbusServer {
 public:
  ModbusServer(plant::PlantController& controller, ServerConfig config = {});

  // Undecodable requests with a readable header but unsupported function get
  // exception 0x01; anything else undecodable is dropped.
  std::optional<std::vector<std::uint8_t>> handle(std::span<const std::uint8_t> request);

  RequestHandler handler() {
    return [this](std::span<const std::uint8_t> b) { return handle(b); };
  }

  const ServerConfig& config() const noexcept { return config_; }
  std::uint64_t requests_seen() const noexcept { return requests_; }

 private:
  plant::PlantController& controller_;
  ServerConfig config_;
  std::uint64_t requests_ = 0;
};

// Polling client ------------------------------------------------------------------

struct ReadSpec {
  modbus::Table table = modbus::Table::Coils;
  std::uint16_t offset = 0;
  std::uint16_t count = 1;
  bool operator==(const ReadSpec&) const = default;
};

// HMI default read list: LS1/LS2, pumps/valve/light, level.
std::vector<ReadSpec> default_hmi_reads();

struct PollerConfig {
  std::string name = "hmi";
  Endpoint client;  // stable source port
  Endpoint server;
  std::uint8_t unit_id = 1;
  Micros period = kMicrosPerSecond;
  Micros start = 0;
  std::vector<ReadSpec> reads = default_hmi_reads();
  Micros reconnect_backoff = kMicrosPerSecond;
  Micros max_backoff = 30 * kMicrosPerSecond;
  bool operator==(const PollerConfig&) const = default;
};

// Persistent-connection poller. Cycle k runs at start + k * period (k >= 1);
// requests within a cycle go back to back, each after the previous reply.
class PollingClient {
 public:
  PollingClient(Scheduler& scheduler, SimNetwork& network, PollerConfig config);

  void start();
  void stop() { stopped_ = true; }

  const PollerConfig& config() const noexcept { return config_; }
  std::uint64_t cycles() const noexcept { return cycles_; }
  std::uint64_t requests() const noexcept { return requests_; }
  std::uint64_t responses() const noexcept { return responses_; }
  std::uint64_t reconnects() const noexcept { return reconnects_; }
  std::optional<ConnectionId> connection() const noexcept { return conn_; }

  // Most recent decoded response per read slot.
  const std::vector<std::optional<modbus::Frame>>& last_responses() const noexcept { return last_; }

 private:
  void connect();
  void cycle(std::uint64_t k);
  void issue(std::size_t index);
  void fail_and_reconnect();

  Scheduler& scheduler_;
  SimNetwork& network_;
  PollerConfig config_;
  std::optional<ConnectionId> conn_;
  std::uint16_t next_tid_ = 1;
  Micros backoff_;
  Micros ready_at_ = 0;
  bool busy_ = false;
  bool stopped_ = false;
  std::uint64_t cycles_ = 0;
  std::uint64_t requests_ = 0;
  std::uint64_t responses_ = 0;
  std::uint64_t reconnects_ = 0;
  std::vector<std::optional<modbus::Frame>> last_;
};

// Tid counter that skips 0 on wrap.
inline std::uint16_t next_transaction_id(std::uint16_t& counter) {
  const std::uint16_t tid = counter;
  counter = counter == 0xFFFF ? 1 : static_cast<std::uint16_t>(counter + 1);
  return tid;
}

}  // namespace scadatb::net
