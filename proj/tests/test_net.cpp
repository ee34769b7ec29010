#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "scadatb/net.hpp"
#include "scadatb/testbed.hpp"
#include "support/generators.hpp"

using namespace scadatb;
using namespace scadatb::net;
using modbus::Table;

namespace {

const Endpoint kClient{parse_address("10.0.0.10"), 49152};
const Endpoint kServer{parse_address("10.0.0.2"), kModbusPort};

std::vector<PacketKind> kinds(const std::vector<PacketEvent>& events) {
  std::vector<PacketKind> out;
  for (const auto& e : events) out.push_back(e.kind);
  return out;
}

RequestHandler echo() {
  return [](std::span<const std::uint8_t> b) { return std::optional(std::vector<std::uint8_t>(b.begin(), b.end())); };
}

}  // namespace

TEST_CASE("addresses and endpoints") {
  CHECK(parse_address("10.0.0.2") == 0x0A000002u);
  CHECK(format_address(0xC0A80101u) == "192.168.1.1");
  CHECK(to_string(kServer) == "10.0.0.2:502");
  CHECK(parse_endpoint("10.0.0.10:49152") == kClient);
  CHECK(parse_endpoint("10.0.0.10").port == 0);
  CHECK_THROWS(parse_address("10.0.0"));
  CHECK_THROWS(parse_address("10.0.0.256"));
}

TEST_CASE("scheduler runs in (time, insertion) order") {
  Scheduler s;
  std::vector<int> order;
  s.at(20, [&] { order.push_back(2); });
  s.at(10, [&] { order.push_back(1); });
  s.at(20, [&] { order.push_back(3); });
  s.at(10, [&] {
    s.after(0, [&] { order.push_back(4); });
  });
  s.run_until(15);
  CHECK(s.now() == 15);
  s.run_until(100);
  CHECK(order == std::vector<int>{1, 4, 2, 3});
  CHECK(s.idle());
}

TEST_CASE("full handshake, exchange and close timing") {
  Scheduler sched;
  SimNetwork net(sched);
  net.listen(kServer, echo());
  sched.run_until(1000);
  const auto r = net.connect(kClient, kServer);
  CHECK(r.status == ConnectStatus::Established);
  CHECK(r.ready_at == 1500);
  sched.run_until(r.ready_at);
  const std::vector<std::uint8_t> payload(12, 0xAA);
  const auto ex = net.send(r.id, payload);
  CHECK(ex.completes_at == 2000);
  REQUIRE(ex.response);
  sched.run_until(3000);
  net.close(r.id);
  CHECK_FALSE(net.is_open(r.id));
  net.close(r.id);

  const auto events = net.drain(10'000);
  CHECK(kinds(events) == std::vector{PacketKind::HandshakeSyn, PacketKind::HandshakeSynAck, PacketKind::HandshakeAck,
                                     PacketKind::Data, PacketKind::Data, PacketKind::Fin, PacketKind::Fin});
  const std::vector<Micros> times = {1000, 1250, 1500, 1500, 2000, 3000, 3250};
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].timestamp == times[i]);
    CHECK(events[i].sequence == i);
    CHECK(events[i].connection == r.id);
  }
  CHECK(events[3].src == kClient);
  CHECK(events[4].src == kServer);
  CHECK(events[3].wire_bytes() == 54 + 12);
  CHECK(events[0].wire_bytes() == 54);
}

TEST_CASE("refused and half-open connections") {
  Scheduler sched;
  SimNetwork net(sched);
  const auto refused = net.connect(kClient, kServer);
  CHECK(refused.status == ConnectStatus::Refused);
  CHECK(kinds(net.drain(1000)) == std::vector{PacketKind::HandshakeSyn, PacketKind::Rst});
  CHECK_FALSE(net.is_open(refused.id));
  CHECK_THROWS_AS(net.send(refused.id, std::vector<std::uint8_t>{1}), std::logic_error);

  net.listen(kServer, echo());
  const auto half = net.connect(kClient, kServer, {ConnectionMode::HalfOpen});
  CHECK(half.status == ConnectStatus::HalfOpen);
  CHECK(kinds(net.drain(1000)) == std::vector{PacketKind::HandshakeSyn, PacketKind::HandshakeSynAck});
  CHECK_FALSE(net.is_open(half.id));
}

TEST_CASE("drain only returns due events and tap keeps everything in order") {
  Scheduler sched;
  SimNetwork net(sched);
  net.listen(kServer, echo());
  const auto a = net.connect(kClient, kServer);
  const auto b = net.connect(Endpoint{kClient.address, 49153}, kServer);
  CHECK(net.drain(0).size() == 2);
  CHECK(net.drain(249).empty());
  const auto rest = net.drain(10'000);
  CHECK(rest.size() == 4);
  CHECK(std::is_sorted(rest.begin(), rest.end(), tap_order));
  CHECK(rest[0].connection == a.id);
  CHECK(rest[1].connection == b.id);
  CHECK(net.tap().size() == 6);
  CHECK(net.event_count() == 6);
}

TEST_CASE("tap log round-trips") {
  Rng rng(5);
  std::vector<PacketEvent> events;
  for (int i = 0; i < 500; ++i) {
    PacketEvent e;
    e.timestamp = static_cast<Micros>(rng.uniform_int(0, 1ull << 40));
    e.src = {static_cast<std::uint32_t>(rng.next()), testing::any_u16(rng)};
    e.dst = {static_cast<std::uint32_t>(rng.next()), testing::any_u16(rng)};
    e.kind = static_cast<PacketKind>(rng.uniform_int(0, 5));
    e.payload_bytes = static_cast<std::uint32_t>(rng.uniform_int(0, 260));
    e.connection = rng.uniform_int(1, 1000);
    e.sequence = static_cast<std::uint32_t>(rng.uniform_int(0, 50));
    events.push_back(e);
  }
  std::stringstream ss;
  write_tap_log(ss, events);
  CHECK(read_tap_log(ss) == events);

  std::stringstream bad("{\"not\":\"an event\"}\n");
  CHECK_THROWS(read_tap_log(bad));
}

TEST_CASE("serve_request against the plant") {
  plant::Plant p{{}, plant::initial_state({})};
  const ServerConfig cfg;
  using namespace modbus;

  const auto read = serve_request(Frame{9, 1, ReadRequest{FunctionCode::ReadInputRegisters, 0, 1}}, p, cfg);
  REQUIRE(read);
  CHECK(read->transaction_id == 9);
  CHECK(std::get<RegistersResponse>(read->pdu).values == std::vector<std::uint16_t>{500});

  CHECK_FALSE(serve_request(Frame{1, 7, ReadRequest{FunctionCode::ReadCoils, 0, 1}}, p, cfg));

  const auto bad = serve_request(Frame{1, 1, ReadRequest{FunctionCode::ReadCoils, 3, 5}}, p, cfg);
  CHECK(std::get<ExceptionResponse>(bad->pdu).code == ExceptionCode::IllegalDataAddress);

  const auto ro = serve_request(Frame{1, 1, WriteSingleCoil{0, true}}, p, cfg);
  CHECK(std::get<ExceptionResponse>(ro->pdu).code == ExceptionCode::IllegalDataAddress);

  const auto val = serve_request(Frame{1, 1, WriteSingleRegister{0, 2000}}, p, cfg);
  CHECK(std::get<ExceptionResponse>(val->pdu).code == ExceptionCode::IllegalDataValue);

  const auto ok = serve_request(Frame{1, 1, WriteSingleRegister{0, 850}}, p, cfg);
  CHECK(std::holds_alternative<WriteSingleRegister>(ok->pdu));
  CHECK(p.config.level_max == 850.0);

  SUBCASE("device identification") {
    const auto basic = serve_request(Frame{1, 1, ReadDeviceIdRequest{DeviceIdCategory::Basic, 0}}, p, cfg);
    CHECK(std::get<DeviceIdResponse>(basic->pdu).objects.size() == 3);
    const auto ext = serve_request(Frame{1, 1, ReadDeviceIdRequest{DeviceIdCategory::Extended, 0}}, p, cfg);
    CHECK(std::get<DeviceIdResponse>(ext->pdu).objects.size() == 8);
    const auto one = serve_request(Frame{1, 1, ReadDeviceIdRequest{DeviceIdCategory::Specific, 0x80}}, p, cfg);
    CHECK(std::get<DeviceIdResponse>(one->pdu).objects.at(0).value == cfg.identity.firmware_build);
    const auto miss = serve_request(Frame{1, 1, ReadDeviceIdRequest{DeviceIdCategory::Specific, 0x42}}, p, cfg);
    CHECK(std::holds_alternative<ExceptionResponse>(miss->pdu));
  }
}

TEST_CASE("byte-level server answers unsupported functions with exception 01") {
  plant::PlantController pc{{}};
  ModbusServer server(pc);
  const std::vector<std::uint8_t> fc16{0x00, 0x05, 0x00, 0x00, 0x00, 0x02, 0x01, 0x10};
  const auto reply = server.handle(fc16);
  REQUIRE(reply);
  CHECK(*reply == std::vector<std::uint8_t>{0x00, 0x05, 0x00, 0x00, 0x00, 0x03, 0x01, 0x90, 0x01});
  CHECK_FALSE(server.handle(std::vector<std::uint8_t>{0x00, 0x01}));
  CHECK(server.requests_seen() == 2);
}

TEST_CASE("transaction ids skip zero on wrap") {
  std::uint16_t c = 0xFFFF;
  CHECK(next_transaction_id(c) == 0xFFFF);
  CHECK(next_transaction_id(c) == 1);
}

TEST_CASE("poller keeps one connection and reads every period") {
  TestbedConfig cfg;
  cfg.pollers.push_back(default_hmi_poller(cfg.server));
  Testbed tb(cfg);
  tb.start();
  tb.run_until(from_seconds(10.5));
  const auto& p = *tb.pollers().at(0);
  CHECK(p.cycles() == 10);
  CHECK(p.requests() == 30);
  CHECK(p.responses() == 30);
  CHECK(p.reconnects() == 0);
  REQUIRE(p.last_responses().at(2));
  const auto level = std::get<modbus::RegistersResponse>(p.last_responses()[2]->pdu).values.at(0);
  // Sampled at 10.0 s; the plant moves at most 10 L per tick for the remaining five ticks.
  CHECK(std::abs(static_cast<double>(level) - tb.controller().state().level) <= 50.0);

  const auto tap = tb.network().tap();
  std::set<ConnectionId> conns;
  for (const auto& e : tap) conns.insert(e.connection);
  CHECK(conns.size() == 1);
  CHECK(std::count_if(tap.begin(), tap.end(), [](const auto& e) { return e.kind == PacketKind::Data; }) == 60);
}

TEST_CASE("poller backs off while the server is absent") {
  Scheduler sched;
  SimNetwork net(sched);
  PollerConfig pc;
  pc.client = kClient;
  pc.server = kServer;
  PollingClient poller(sched, net, pc);
  poller.start();
  sched.run_until(from_seconds(20));
  // Attempts at 0, 1, 3, 7, 15 s.
  CHECK(poller.reconnects() == 5);
  CHECK(poller.cycles() == 0);
  CHECK_FALSE(poller.connection());
}
