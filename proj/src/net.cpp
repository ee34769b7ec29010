#include "scadatb/net.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace scadatb::net {

using modbus::Frame;
using modbus::Table;

std::uint32_t parse_address(std::string_view dotted) {
  std::uint32_t out = 0;
  int parts = 0;
  const char* p = dotted.data();
  const char* end = p + dotted.size();
  while (parts < 4) {
    unsigned octet = 0;
    auto [next, ec] = std::from_chars(p, end, octet);
    if (ec != std::errc{} || octet > 255) break;
    out = (out << 8) | octet;
    ++parts;
    p = next;
    if (parts < 4) {
      if (p == end || *p != '.') break;
      ++p;
    }
  }
  if (parts != 4 || p != end) throw std::invalid_argument("bad IPv4 address: " + std::string(dotted));
  return out;
}

std::string format_address(std::uint32_t a) {
  return std::to_string(a >> 24) + "." + std::to_string((a >> 16) & 0xFF) + "." +
         std::to_string((a >> 8) & 0xFF) + "." + std::to_string(a & 0xFF);
}

std::string to_string(const Endpoint& ep) { return format_address(ep.address) + ":" + std::to_string(ep.port); }

Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  Endpoint ep;
  ep.address = parse_address(text.substr(0, colon));
  if (colon != std::string_view::npos) {
    unsigned port = 0;
    const auto rest = text.substr(colon + 1);
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), port);
    if (ec != std::errc{} || p != rest.data() + rest.size() || port > 0xFFFF) {
      throw std::invalid_argument("bad port in endpoint: " + std::string(text));
    }
    ep.port = static_cast<std::uint16_t>(port);
  }
  return ep;
}

const char* to_string(PacketKind kind) {
  switch (kind) {
    case PacketKind::HandshakeSyn: return "syn";
    case PacketKind::HandshakeSynAck: return "synack";
    case PacketKind::HandshakeAck: return "ack";
    case PacketKind::Data: return "data";
    case PacketKind::Fin: return "fin";
    case PacketKind::Rst: return "rst";
  }
  return "unknown";
}

PacketKind parse_packet_kind(std::string_view text) {
  for (auto k : {PacketKind::HandshakeSyn, PacketKind::HandshakeSynAck, PacketKind::HandshakeAck, PacketKind::Data,
                 PacketKind::Fin, PacketKind::Rst}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown packet kind: " + std::string(text));
}

bool tap_order(const PacketEvent& a, const PacketEvent& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  if (a.connection != b.connection) return a.connection < b.connection;
  return a.sequence < b.sequence;
}

void write_tap_log(std::ostream& out, std::span<const PacketEvent> events) {
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["v"] = kTapLogVersion;
    j["ts_us"] = e.timestamp;
    j["src"] = to_string(e.src);
    j["dst"] = to_string(e.dst);
    j["proto"] = kProtocolTcp;
    j["kind"] = to_string(e.kind);
    j["payload"] = e.payload_bytes;
    j["header"] = e.header_bytes;
    j["conn"] = e.connection;
    j["seq"] = e.sequence;
    out << j.dump() << '\n';
  }
}

std::vector<PacketEvent> read_tap_log(std::istream& in) {
  std::vector<PacketEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("v").get<int>() != kTapLogVersion) throw std::runtime_error("unsupported tap log version");
      PacketEvent e;
      e.timestamp = j.at("ts_us").get<Micros>();
      e.src = parse_endpoint(j.at("src").get<std::string>());
      e.dst = parse_endpoint(j.at("dst").get<std::string>());
      e.kind = parse_packet_kind(j.at("kind").get<std::string>());
      e.payload_bytes = j.at("payload").get<std::uint32_t>();
      e.header_bytes = j.at("header").get<std::uint32_t>();
      e.connection = j.at("conn").get<ConnectionId>();
      e.sequence = j.at("seq").get<std::uint32_t>();
      events.push_back(e);
    } catch (const std::exception& ex) {
      throw std::runtime_error("tap log line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return events;
}

// Scheduler ---------------------------------------------------------------------

void Scheduler::at(Micros when, Task task) {
  queue_.push(Item{std::max(when, now_), next_order_++, std::move(task)});
}

void Scheduler::run_until(Micros until) {
  while (!queue_.empty() && queue_.top().when <= until) {
    Item item = queue_.top();
    queue_.pop();
    now_ = item.when;
    item.task();
  }
  now_ = std::max(now_, until);
}

// SimNetwork --------------------------------------------------------------------

SimNetwork::SimNetwork(Scheduler& scheduler, NetworkTiming timing) : scheduler_(scheduler), timing_(timing) {}

void SimNetwork::listen(Endpoint at, RequestHandler handler) { listeners_[at] = std::move(handler); }

void SimNetwork::emit(Conn& c, ConnectionId id, Micros when, bool from_client, PacketKind kind,
                      std::uint32_t payload) {
  PacketEvent e;
  e.timestamp = when;
  e.src = from_client ? c.client : c.server;
  e.dst = from_client ? c.server : c.client;
  e.kind = kind;
  e.payload_bytes = payload;
  e.connection = id;
  e.sequence = c.next_seq++;
  pending_.push_back(e);
  ++event_count_;
}

ConnectResult SimNetwork::connect(Endpoint client, Endpoint server, ConnectionPolicy policy) {
  const Micros t = scheduler_.now();
  const Micros d = timing_.link_delay;
  const ConnectionId id = next_id_++;
  Conn& c = connections_[id];
  c.client = client;
  c.server = server;

  ConnectResult result;
  result.id = id;
  emit(c, id, t, true, PacketKind::HandshakeSyn, 0);
  if (!listeners_.contains(server)) {
    emit(c, id, t + d, false, PacketKind::Rst, 0);
    result.status = ConnectStatus::Refused;
    result.ready_at = t + d;
    connections_.erase(id);
    return result;
  }
  emit(c, id, t + d, false, PacketKind::HandshakeSynAck, 0);
  if (policy.mode == ConnectionMode::HalfOpen) {
    result.status = ConnectStatus::HalfOpen;
    result.ready_at = t + d;
    connections_.erase(id);
    return result;
  }
  emit(c, id, t + 2 * d, true, PacketKind::HandshakeAck, 0);
  c.established = true;
  c.open = true;
  result.status = ConnectStatus::Established;
  result.ready_at = t + 2 * d;
  return result;
}

SimNetwork::Exchange SimNetwork::send(ConnectionId id, std::span<const std::uint8_t> request) {
  auto it = connections_.find(id);
  if (it == connections_.end() || !it->second.open) {
    throw std::logic_error("send on a connection that is not established");
  }
  Conn& c = it->second;
  const Micros t = scheduler_.now();
  emit(c, id, t, true, PacketKind::Data, static_cast<std::uint32_t>(request.size()));

  Exchange ex;
  auto response = listeners_.at(c.server)(request);
  if (response) {
    emit(c, id, t + 2 * timing_.link_delay, false, PacketKind::Data, static_cast<std::uint32_t>(response->size()));
    ex.completes_at = t + 2 * timing_.link_delay;
    ex.response = std::move(response);
  } else {
    ex.completes_at = t + timing_.request_timeout;
  }
  return ex;
}

void SimNetwork::close(ConnectionId id) {
  auto it = connections_.find(id);
  if (it == connections_.end() || !it->second.open) return;
  Conn& c = it->second;
  const Micros t = scheduler_.now();
  emit(c, id, t, true, PacketKind::Fin, 0);
  emit(c, id, t + timing_.link_delay, false, PacketKind::Fin, 0);
  connections_.erase(it);
}

bool SimNetwork::is_open(ConnectionId id) const {
  auto it = connections_.find(id);
  return it != connections_.end() && it->second.open;
}

std::vector<PacketEvent> SimNetwork::drain(Micros up_to) {
  std::stable_sort(pending_.begin(), pending_.end(), tap_order);
  const auto split = std::partition_point(pending_.begin(), pending_.end(),
                                          [up_to](const PacketEvent& e) { return e.timestamp <= up_to; });
  std::vector<PacketEvent> out(pending_.begin(), split);
  pending_.erase(pending_.begin(), split);
  if (retain_) history_.insert(history_.end(), out.begin(), out.end());
  return out;
}

std::vector<PacketEvent> SimNetwork::tap() const {
  std::vector<PacketEvent> out = history_;
  std::vector<PacketEvent> rest = pending_;
  std::stable_sort(rest.begin(), rest.end(), tap_order);
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

// Modbus server -------------------------------------------------------------------

std::vector<modbus::DeviceObject> device_objects(const DeviceIdentity& id, modbus::DeviceIdCategory category) {
  using modbus::DeviceIdCategory;
  std::vector<modbus::DeviceObject> objs = {
      {0x00, id.vendor_name}, {0x01, id.product_code}, {0x02, id.revision}};
  if (category == DeviceIdCategory::Basic) return objs;
  objs.push_back({0x03, id.vendor_url});
  objs.push_back({0x04, id.product_name});
  objs.push_back({0x05, id.model_name});
  objs.push_back({0x06, id.application_name});
  if (category == DeviceIdCategory::Regular) return objs;
  objs.push_back({0x80, id.firmware_build});
  return objs;
}

namespace {

Table table_for(modbus::FunctionCode fc) {
  switch (fc) {
    case modbus::FunctionCode::ReadCoils: return Table::Coils;
    case modbus::FunctionCode::ReadDiscreteInputs: return Table::DiscreteInputs;
    case modbus::FunctionCode::ReadInputRegisters: return Table::InputRegisters;
    default: return Table::HoldingRegisters;
  }
}

modbus::ExceptionCode exception_for(const plant::PointError& e) {
  switch (e.kind()) {
    case plant::PointErrorKind::UnmappedAddress:
    case plant::PointErrorKind::ReadOnlyPoint: return modbus::ExceptionCode::IllegalDataAddress;
    case plant::PointErrorKind::IllegalValue: return modbus::ExceptionCode::IllegalDataValue;
  }
  return modbus::ExceptionCode::ServerDeviceFailure;
}

modbus::Pdu dispatch(const modbus::Pdu& pdu, plant::Plant& plant, const ServerConfig& config) {
  using namespace modbus;
  try {
    if (const auto* r = std::get_if<ReadRequest>(&pdu)) {
      const auto values = plant::read_point(plant.state, plant.config, table_for(r->function), r->start, r->quantity);
      if (r->function == FunctionCode::ReadCoils || r->function == FunctionCode::ReadDiscreteInputs) {
        const std::vector<bool> bits(values.begin(), values.end());
        return BitsResponse{r->function, pack_bits(bits)};
      }
      return RegistersResponse{r->function, values};
    }
    if (const auto* w = std::get_if<WriteSingleCoil>(&pdu)) {
      plant = plant::write_point(std::move(plant), Table::Coils, w->address, w->on ? 1 : 0);
      return *w;
    }
    if (const auto* w = std::get_if<WriteSingleRegister>(&pdu)) {
      plant = plant::write_point(std::move(plant), Table::HoldingRegisters, w->address, w->value);
      return *w;
    }
    if (const auto* d = std::get_if<ReadDeviceIdRequest>(&pdu)) {
      auto all = device_objects(config.identity, d->category == DeviceIdCategory::Specific ? DeviceIdCategory::Extended
                                                                                         : d->category);
      DeviceIdResponse resp;
      resp.category = d->category;
      if (d->category == DeviceIdCategory::Specific) {
        auto it = std::find_if(all.begin(), all.end(), [&](const DeviceObject& o) { return o.id == d->object_id; });
        if (it == all.end()) return make_exception(pdu, ExceptionCode::IllegalDataAddress);
        resp.objects = {*it};
        return resp;
      }
      // Stream access restarts at the first object when the requested id is unknown.
      const bool known = std::any_of(all.begin(), all.end(), [&](const DeviceObject& o) { return o.id == d->object_id; });
      for (const auto& o : all) {
        if (!known || o.id >= d->object_id) resp.objects.push_back(o);
      }
      return resp;
    }
  } catch (const plant::PointError& e) {
    return make_exception(pdu, exception_for(e));
  }
  return make_exception(pdu, ExceptionCode::IllegalFunction);
}

}  // namespace

std::optional<Frame> serve_request(const Frame& request, plant::Plant& plant, const ServerConfig& config) {
  if (!config.unit_ids.contains(request.unit_id)) return std::nullopt;
  return Frame{request.transaction_id, request.unit_id, dispatch(request.pdu, plant, config)};
}

ModbusServer::ModbusServer(plant::PlantController& controller, ServerConfig config)
    : controller_(controller), config_(std::move(config)) {}

std::optional<std::vector<std::uint8_t>> ModbusServer::handle(std::span<const std::uint8_t> request) {
  ++requests_;
  const auto decoded = modbus::decode_frame(request, modbus::Direction::Request);
  if (!decoded) {
    if (decoded.error() != modbus::DecodeError::UnknownFunctionCode) return std::nullopt;
    // Header parsed, so tid/uid/fc are at fixed offsets.
    const std::uint16_t tid = static_cast<std::uint16_t>((request[0] << 8) | request[1]);
    const std::uint8_t uid = request[6];
    if (!config_.unit_ids.contains(uid)) return std::nullopt;
    const std::uint8_t fc = request[7] & 0x7F;
    return modbus::encode_frame(
        Frame{tid, uid, modbus::ExceptionResponse{fc == 0 ? std::uint8_t{0x7F} : fc, modbus::ExceptionCode::IllegalFunction}});
  }
  auto response = serve_request(decoded.frame(), controller_.mutable_plant(), config_);
  if (!response) return std::nullopt;
  return modbus::encode_frame(*response);
}

// Polling client ----------------------------------------------------------------

std::vector<ReadSpec> default_hmi_reads() {
  return {{Table::DiscreteInputs, 0, 2}, {Table::Coils, 0, 4}, {Table::InputRegisters, 0, 1}};
}

PollingClient::PollingClient(Scheduler& scheduler, SimNetwork& network, PollerConfig config)
    : scheduler_(scheduler), network_(network), config_(std::move(config)), backoff_(config_.reconnect_backoff) {
  last_.resize(config_.reads.size());
}

void PollingClient::start() {
  scheduler_.at(config_.start, [this] { connect(); });
  scheduler_.at(config_.start + config_.period, [this] { cycle(1); });
}

void PollingClient::connect() {
  if (stopped_) return;
  const auto r = network_.connect(config_.client, config_.server);
  if (r.status == ConnectStatus::Established) {
    conn_ = r.id;
    ready_at_ = r.ready_at;
    return;
  }
  conn_.reset();
  ++reconnects_;
  scheduler_.after(backoff_, [this] { connect(); });
  backoff_ = std::min(backoff_ * 2, config_.max_backoff);
}

void PollingClient::cycle(std::uint64_t k) {
  if (stopped_) return;
  scheduler_.at(config_.start + static_cast<Micros>(k + 1) * config_.period, [this, k] { cycle(k + 1); });
  if (!conn_ || busy_ || scheduler_.now() < ready_at_ || config_.reads.empty()) return;
  ++cycles_;
  busy_ = true;
  issue(0);
}

void PollingClient::issue(std::size_t index) {
  if (!conn_ || !network_.is_open(*conn_)) {
    busy_ = false;
    return;
  }
  const auto& read = config_.reads[index];
  const modbus::FunctionCode fc = read.table == Table::Coils            ? modbus::FunctionCode::ReadCoils
                                  : read.table == Table::DiscreteInputs ? modbus::FunctionCode::ReadDiscreteInputs
                                  : read.table == Table::InputRegisters ? modbus::FunctionCode::ReadInputRegisters
                                                                        : modbus::FunctionCode::ReadHoldingRegisters;
  const Frame request{next_transaction_id(next_tid_), config_.unit_id, modbus::ReadRequest{fc, read.offset, read.count}};
  ++requests_;
  auto ex = network_.send(*conn_, modbus::encode_frame(request));
  if (!ex.response) {
    scheduler_.at(ex.completes_at, [this] { fail_and_reconnect(); });
    return;
  }
  ++responses_;
  auto decoded = modbus::decode_frame(*ex.response, modbus::Direction::Response);
  last_[index] = decoded ? std::optional<Frame>(decoded.frame()) : std::nullopt;
  backoff_ = config_.reconnect_backoff;
  if (index + 1 < config_.reads.size()) {
    scheduler_.at(ex.completes_at, [this, index] { issue(index + 1); });
  } else {
    scheduler_.at(ex.completes_at, [this] { busy_ = false; });
  }
}

void PollingClient::fail_and_reconnect() {
  busy_ = false;
  if (conn_) network_.close(*conn_);
  conn_.reset();
  ++reconnects_;
  scheduler_.after(backoff_, [this] { connect(); });
  backoff_ = std::min(backoff_ * 2, config_.max_backoff);
}

}  // namespace scadatb::net
