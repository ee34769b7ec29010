#include "scadatb/attacks.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace scadatb::attacks {

using modbus::Frame;
using net::ConnectionMode;
using net::ConnectStatus;

const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::PortScan: return "PortScan";
    case AttackKind::AddressScan: return "AddressScan";
    case AttackKind::DeviceId: return "DeviceId";
    case AttackKind::DeviceIdAggressive: return "DeviceIdAggressive";
    case AttackKind::CoilReadExploit: return "CoilReadExploit";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view text) {
  for (auto k : kAllAttackKinds) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown attack kind: " + std::string(text));
}

AttackSpec default_spec(AttackKind kind) {
  AttackSpec s;
  s.kind = kind;
  s.target = net::Endpoint{net::parse_address("10.0.0.2"), net::kModbusPort};
  s.attacker = net::parse_address("10.0.0.66");
  switch (kind) {
    case AttackKind::PortScan:
      s.ports = {21, 22, 23, 80, 102, 443, 502, 20000, 44818, 47808};
      s.interval_min_s = 1.0;
      s.interval_max_s = 3.0;
      break;
    case AttackKind::AddressScan:
    case AttackKind::DeviceId:
    case AttackKind::DeviceIdAggressive:
      for (int uid = 1; uid <= 16; ++uid) s.unit_ids.push_back(static_cast<std::uint8_t>(uid));
      s.interval_min_s = 0.1;
      s.interval_max_s = 0.5;
      break;
    case AttackKind::CoilReadExploit:
      s.interval_min_s = 1.0;
      s.interval_max_s = 2.0;
      break;
  }
  return s;
}

void validate(const AttackSpec& s) {
  if (s.start < 0) throw std::invalid_argument("attack start must be non-negative");
  if (!(s.interval_min_s >= 0.0 && s.interval_min_s <= s.interval_max_s)) {
    throw std::invalid_argument("attack interval bounds must satisfy 0 <= min <= max");
  }
  switch (s.kind) {
    case AttackKind::PortScan:
      if (s.interval_min_s < 1.0 || s.interval_max_s > 3.0) {
        throw std::invalid_argument("port-scan probe gaps must lie within [1, 3] s");
      }
      break;
    case AttackKind::CoilReadExploit:
      if (!(s.duration_s > 0.0)) throw std::invalid_argument("exploit duration must be positive");
      if (s.coil_count < 1 || s.coil_count > modbus::kMaxReadBits) {
        throw std::invalid_argument("exploit coil count out of range");
      }
      if (!(s.interval_max_s > 0.0)) throw std::invalid_argument("exploit interval must be positive");
      break;
    default:
      break;
  }
}

void to_json(nlohmann::json& j, const AttackSpec& s) {
  j = nlohmann::json{
      {"kind", to_string(s.kind)},
      {"start_s", to_seconds(s.start)},
      {"attacker", net::format_address(s.attacker)},
      {"target", net::to_string(s.target)},
      {"seed", s.seed},
      {"interval_min_s", s.interval_min_s},
      {"interval_max_s", s.interval_max_s},
  };
  switch (s.kind) {
    case AttackKind::PortScan: j["ports"] = s.ports; break;
    case AttackKind::AddressScan:
    case AttackKind::DeviceId:
    case AttackKind::DeviceIdAggressive: j["unit_ids"] = s.unit_ids; break;
    case AttackKind::CoilReadExploit:
      j["unit_id"] = s.unit_id;
      j["coil_start"] = s.coil_start;
      j["coil_count"] = s.coil_count;
      j["duration_s"] = s.duration_s;
      break;
  }
}

void from_json(const nlohmann::json& j, AttackSpec& s) {
  s = default_spec(parse_attack_kind(j.at("kind").get<std::string>()));
  if (j.contains("start_s")) s.start = from_seconds(j["start_s"].get<double>());
  if (j.contains("attacker")) s.attacker = net::parse_endpoint(j["attacker"].get<std::string>()).address;
  if (j.contains("target")) {
    s.target = net::parse_endpoint(j["target"].get<std::string>());
    if (s.target.port == 0) s.target.port = net::kModbusPort;
  }
  s.seed = j.value("seed", s.seed);
  s.interval_min_s = j.value("interval_min_s", s.interval_min_s);
  s.interval_max_s = j.value("interval_max_s", s.interval_max_s);
  if (j.contains("ports")) s.ports = j["ports"].get<std::vector<std::uint16_t>>();
  if (j.contains("unit_ids")) s.unit_ids = j["unit_ids"].get<std::vector<std::uint8_t>>();
  if (j.contains("unit_id_range")) {
    const auto range = j["unit_id_range"].get<std::vector<int>>();
    if (range.size() != 2 || range[0] < 0 || range[1] > 255 || range[0] > range[1]) {
      throw std::invalid_argument("unit_id_range must be [first, last] within 0..255");
    }
    s.unit_ids.clear();
    for (int u = range[0]; u <= range[1]; ++u) s.unit_ids.push_back(static_cast<std::uint8_t>(u));
  }
  s.unit_id = j.value("unit_id", s.unit_id);
  s.coil_start = j.value("coil_start", s.coil_start);
  s.coil_count = j.value("coil_count", s.coil_count);
  s.duration_s = j.value("duration_s", s.duration_s);
  validate(s);
}

// Registry ----------------------------------------------------------------------

std::size_t GroundTruthRegistry::open(std::uint32_t attacker, Micros start, AttackKind kind) {
  entries_.push_back(RegistryEntry{attacker, start, std::nullopt, kind});
  return entries_.size() - 1;
}

void GroundTruthRegistry::close(std::size_t entry, Micros end) { entries_.at(entry).end = end; }

std::optional<AttackKind> GroundTruthRegistry::lookup(std::uint32_t address, Micros when) const {
  for (const auto& e : entries_) {
    if (e.attacker == address && e.start <= when && (!e.end || when <= *e.end)) return e.kind;
  }
  return std::nullopt;
}

nlohmann::json GroundTruthRegistry::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& e : entries_) {
    nlohmann::json j{{"attacker", net::format_address(e.attacker)},
                     {"start_us", e.start},
                     {"kind", attacks::to_string(e.kind)}};
    j["end_us"] = e.end ? nlohmann::json(*e.end) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return nlohmann::json{{"version", 1}, {"entries", std::move(arr)}};
}

GroundTruthRegistry GroundTruthRegistry::from_json(const nlohmann::json& j) {
  GroundTruthRegistry r;
  for (const auto& e : j.at("entries")) {
    RegistryEntry entry;
    entry.attacker = net::parse_address(e.at("attacker").get<std::string>());
    entry.start = e.at("start_us").get<Micros>();
    if (!e.at("end_us").is_null()) entry.end = e.at("end_us").get<Micros>();
    entry.kind = parse_attack_kind(e.at("kind").get<std::string>());
    r.entries_.push_back(entry);
  }
  return r;
}

// Runner ------------------------------------------------------------------------

AttackRunner::AttackRunner(net::Scheduler& scheduler, net::SimNetwork& network, GroundTruthRegistry& registry,
                           AttackSpec spec)
    : scheduler_(scheduler), network_(network), registry_(registry), spec_(std::move(spec)), rng_(spec_.seed) {
  validate(spec_);
  report_.kind = spec_.kind;
  // Consecutive source ports from a seeded base, so no tuple is reused within
  // one attack while an earlier flow may still be open.
  port_cursor_ = static_cast<std::uint32_t>(rng_.uniform_int(kEphemeralLow, kEphemeralHigh));
}

void AttackRunner::launch() {
  scheduler_.at(spec_.start, [this] {
    report_.started = scheduler_.now();
    registry_entry_ = registry_.open(spec_.attacker, scheduler_.now(), spec_.kind);
    switch (spec_.kind) {
      case AttackKind::PortScan: port_probe(0); break;
      case AttackKind::AddressScan: unit_probe(0); break;
      case AttackKind::DeviceId:
      case AttackKind::DeviceIdAggressive: device_id_probe(0, 0); break;
      case AttackKind::CoilReadExploit: {
        const auto r = network_.connect(next_source(), spec_.target);
        report_.connections.push_back(r.id);
        if (r.status != ConnectStatus::Established) {
          scheduler_.at(r.ready_at, [this] { finish(); });
          return;
        }
        scheduler_.at(r.ready_at, [this, id = r.id] { exploit_step(id); });
        break;
      }
    }
  });
}

net::Endpoint AttackRunner::next_source() {
  const auto port = static_cast<std::uint16_t>(port_cursor_);
  port_cursor_ = port_cursor_ >= kEphemeralHigh ? kEphemeralLow : port_cursor_ + 1;
  report_.source_ports.push_back(port);
  return net::Endpoint{spec_.attacker, port};
}

Micros AttackRunner::draw_interval() {
  return from_seconds(rng_.uniform(spec_.interval_min_s, spec_.interval_max_s));
}

void AttackRunner::finish() {
  // The last scheduled segment may sit one link delay past now.
  const Micros end = scheduler_.now() + network_.timing().link_delay;
  report_.finished = end;
  registry_.close(registry_entry_, end);
}

void AttackRunner::port_probe(std::size_t index) {
  if (index >= spec_.ports.size()) {
    finish();
    return;
  }
  const auto port = spec_.ports[index];
  const auto r = network_.connect(next_source(), net::Endpoint{spec_.target.address, port},
                                  net::ConnectionPolicy{ConnectionMode::HalfOpen});
  report_.connections.push_back(r.id);
  ++report_.requests;
  if (r.status == ConnectStatus::HalfOpen) {
    report_.open_ports.push_back(port);
  } else {
    report_.closed_ports.push_back(port);
  }
  if (index + 1 >= spec_.ports.size()) {
    scheduler_.at(r.ready_at, [this, index] { port_probe(index + 1); });
    return;
  }
  const Micros gap = draw_interval();
  report_.probe_gaps.push_back(gap);
  scheduler_.after(gap, [this, index] { port_probe(index + 1); });
}

void AttackRunner::unit_probe(std::size_t index) {
  if (index >= spec_.unit_ids.size()) {
    finish();
    return;
  }
  const auto uid = spec_.unit_ids[index];
  const auto r = network_.connect(next_source(), spec_.target);
  report_.connections.push_back(r.id);
  if (r.status != ConnectStatus::Established) {
    scheduler_.at(r.ready_at + draw_interval(), [this, index] { unit_probe(index + 1); });
    return;
  }
  scheduler_.at(r.ready_at, [this, index, uid, id = r.id] {
    const Frame probe{net::next_transaction_id(next_tid_), uid,
                      modbus::ReadRequest{modbus::FunctionCode::ReadHoldingRegisters, 0, 1}};
    ++report_.requests;
    const auto ex = network_.send(id, modbus::encode_frame(probe));
    if (ex.response) {
      ++report_.responses;
      report_.responding_units.push_back(uid);
    } else {
      ++report_.timeouts;
    }
    scheduler_.at(ex.completes_at, [this, index, id] {
      network_.close(id);
      scheduler_.after(draw_interval(), [this, index] { unit_probe(index + 1); });
    });
  });
}

void AttackRunner::device_id_probe(std::size_t index, std::size_t category_index) {
  static constexpr modbus::DeviceIdCategory kAggressiveCategories[] = {modbus::DeviceIdCategory::Basic,
                                                                       modbus::DeviceIdCategory::Extended};
  const bool aggressive = spec_.kind == AttackKind::DeviceIdAggressive;
  const std::size_t categories = aggressive ? 2 : 1;
  if (index >= spec_.unit_ids.size()) {
    finish();
    return;
  }
  const auto uid = spec_.unit_ids[index];
  const auto category = kAggressiveCategories[category_index];

  auto advance = [this, index, category_index, categories](bool stop) {
    if (stop) {
      finish();
    } else if (category_index + 1 < categories) {
      device_id_probe(index, category_index + 1);
    } else {
      device_id_probe(index + 1, 0);
    }
  };

  const auto r = network_.connect(next_source(), spec_.target);
  report_.connections.push_back(r.id);
  if (r.status != ConnectStatus::Established) {
    scheduler_.at(r.ready_at + draw_interval(), [advance] { advance(false); });
    return;
  }
  scheduler_.at(r.ready_at, [this, uid, category, aggressive, advance, id = r.id] {
    const Frame query{net::next_transaction_id(next_tid_), uid, modbus::ReadDeviceIdRequest{category, 0}};
    ++report_.requests;
    const auto ex = network_.send(id, modbus::encode_frame(query));
    bool found = false;
    if (ex.response) {
      ++report_.responses;
      const auto decoded = modbus::decode_frame(*ex.response, modbus::Direction::Response);
      if (decoded) {
        if (const auto* d = std::get_if<modbus::DeviceIdResponse>(&decoded.frame().pdu)) {
          found = true;
          auto& objects = report_.identification[uid];
          for (const auto& o : d->objects) {
            auto it = std::find_if(objects.begin(), objects.end(), [&](const auto& x) { return x.id == o.id; });
            if (it == objects.end()) objects.push_back(o);
          }
          if (category == modbus::DeviceIdCategory::Basic) report_.responding_units.push_back(uid);
        }
      }
    } else {
      ++report_.timeouts;
    }
    // Non-aggressive mode stops at the first unit that identifies itself.
    const bool stop = found && !aggressive;
    scheduler_.at(ex.completes_at, [this, id, stop, advance] {
      network_.close(id);
      if (stop) {
        advance(true);
      } else {
        scheduler_.after(draw_interval(), [advance] { advance(false); });
      }
    });
  });
}

void AttackRunner::exploit_step(net::ConnectionId conn) {
  const Micros deadline = report_.started + from_seconds(spec_.duration_s);
  if (scheduler_.now() >= deadline) {
    network_.close(conn);
    finish();
    return;
  }
  const Frame read{net::next_transaction_id(next_tid_), spec_.unit_id,
                   modbus::ReadRequest{modbus::FunctionCode::ReadCoils, spec_.coil_start, spec_.coil_count}};
  ++report_.requests;
  const auto ex = network_.send(conn, modbus::encode_frame(read));
  if (ex.response) {
    ++report_.responses;
    const auto decoded = modbus::decode_frame(*ex.response, modbus::Direction::Response);
    if (decoded) {
      if (const auto* bits = std::get_if<modbus::BitsResponse>(&decoded.frame().pdu)) {
        report_.coil_reads.push_back({ex.completes_at, modbus::unpack_bits(bits->packed, spec_.coil_count)});
      }
    }
  } else {
    ++report_.timeouts;
  }
  const Micros next = std::max(ex.completes_at, scheduler_.now() + draw_interval());
  scheduler_.at(next, [this, conn] { exploit_step(conn); });
}

}  // namespace scadatb::attacks
