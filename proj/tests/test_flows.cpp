#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "scadatb/flows.hpp"
#include "scadatb/testbed.hpp"
#include "support/generators.hpp"

using namespace scadatb;
using namespace scadatb::flows;
using net::Endpoint;
using net::PacketEvent;
using net::PacketKind;

namespace {

const Endpoint kClient{net::parse_address("10.0.0.10"), 49152};
const Endpoint kServer{net::parse_address("10.0.0.2"), 502};

PacketEvent ev(Micros t, bool from_client, PacketKind kind, std::uint32_t payload = 0, Endpoint client = kClient) {
  PacketEvent e;
  e.timestamp = t;
  e.src = from_client ? client : kServer;
  e.dst = from_client ? kServer : client;
  e.kind = kind;
  e.payload_bytes = payload;
  return e;
}

std::vector<PacketEvent> one_exchange(Micros t0) {
  return {ev(t0, true, PacketKind::HandshakeSyn),       ev(t0 + 250, false, PacketKind::HandshakeSynAck),
          ev(t0 + 500, true, PacketKind::HandshakeAck), ev(t0 + 500, true, PacketKind::Data, 12),
          ev(t0 + 1000, false, PacketKind::Data, 11),   ev(t0 + 2000, true, PacketKind::Fin),
          ev(t0 + 2250, false, PacketKind::Fin)};
}

}  // namespace

TEST_CASE("one complete exchange, counted by hand") {
  const auto events = one_exchange(0);
  const auto flows = aggregate(events);
  REQUIRE(flows.size() == 1);
  const auto& f = flows[0];
  CHECK(f.state == FlowState::ClosedFin);
  CHECK(f.key.src == kClient);
  CHECK(f.src_pkts == 4);
  CHECK(f.dst_pkts == 3);
  CHECK(f.src_bytes == 3 * 54 + 66);
  CHECK(f.dst_bytes == 2 * 54 + 65);
  CHECK(f.first_ts == 0);
  CHECK(f.last_ts == 2250);
  const auto v = featurize(f);
  CHECK(v.tot_pkts == 7);
  CHECK(v.tot_bytes == 228 + 173);
  CHECK(v.sport == 49152);
  CHECK(v.as_array()[5] == 49152.0);
}

TEST_CASE("rst and half-open flows") {
  std::vector<PacketEvent> events = {ev(0, true, PacketKind::HandshakeSyn, 0, {kClient.address, 40000}),
                                     ev(250, false, PacketKind::Rst, 0, {kClient.address, 40000}),
                                     ev(1000, true, PacketKind::HandshakeSyn, 0, {kClient.address, 40001}),
                                     ev(1250, false, PacketKind::HandshakeSynAck, 0, {kClient.address, 40001})};
  FlowTable table;
  for (const auto& e : events) table.ingest(e);
  auto closed = table.close_flows(2000);
  REQUIRE(closed.size() == 1);
  CHECK(closed[0].state == FlowState::ClosedRst);
  CHECK(closed[0].src_pkts == 1);
  CHECK(closed[0].dst_pkts == 1);
  CHECK(table.close_flows(1250 + 59 * kMicrosPerSecond).empty());
  closed = table.close_flows(1250 + 60 * kMicrosPerSecond);
  REQUIRE(closed.size() == 1);
  CHECK(closed[0].state == FlowState::HalfOpen);
  CHECK(table.active() == 0);
}

TEST_CASE("established flows that go quiet close as idle") {
  auto events = one_exchange(0);
  events.resize(5);
  FlowTable table;
  for (const auto& e : events) table.ingest(e);
  const auto closed = table.close_flows(from_seconds(61));
  REQUIRE(closed.size() == 1);
  CHECK(closed[0].state == FlowState::ClosedIdle);
}

TEST_CASE("out-of-order input is rejected") {
  FlowTable table;
  table.ingest(ev(100, true, PacketKind::HandshakeSyn));
  table.ingest(ev(100, false, PacketKind::HandshakeSynAck));
  CHECK_THROWS_AS(table.ingest(ev(99, true, PacketKind::HandshakeAck)), OutOfOrderError);
}

TEST_CASE("active timeout slices long-lived flows") {
  std::vector<PacketEvent> events = {ev(0, true, PacketKind::HandshakeSyn), ev(250, false, PacketKind::HandshakeSynAck),
                                     ev(500, true, PacketKind::HandshakeAck)};
  for (int s = 1; s <= 20; ++s) {
    events.push_back(ev(from_seconds(s), true, PacketKind::Data, 12));
    events.push_back(ev(from_seconds(s) + 500, false, PacketKind::Data, 11));
  }
  const auto flows = aggregate(events, FlowTableConfig{60 * kMicrosPerSecond, 5 * kMicrosPerSecond});
  // Slices start at 0, 5, 10, 15 and 20 s.
  REQUIRE(flows.size() == 5);
  std::uint64_t pkts = 0;
  for (const auto& f : flows) {
    pkts += f.src_pkts + f.dst_pkts;
    CHECK(f.last_ts - f.first_ts < 5 * kMicrosPerSecond);
    CHECK(f.key.src == kClient);
  }
  CHECK(pkts == events.size());
  CHECK(flows.front().src_pkts == 2 + 4);
  CHECK(flows.back().state == FlowState::Open);
}

TEST_CASE("property: packets and bytes are conserved") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PacketEvent> events;
    Micros t = 0;
    const auto n = rng.uniform_int(1, 400);
    for (std::uint64_t i = 0; i < n; ++i) {
      t += static_cast<Micros>(rng.uniform_int(0, 30 * kMicrosPerSecond));
      const Endpoint client{net::parse_address("10.0.0.66"), static_cast<std::uint16_t>(rng.uniform_int(40000, 40005))};
      events.push_back(ev(t, testing::coin(rng), static_cast<PacketKind>(rng.uniform_int(0, 5)),
                          static_cast<std::uint32_t>(rng.uniform_int(0, 40)), client));
    }
    FlowTableConfig cfg;
    if (testing::coin(rng)) cfg.active_timeout = 5 * kMicrosPerSecond;
    const auto flows = aggregate(events, cfg);
    std::uint64_t pkts = 0, bytes = 0, want_bytes = 0;
    for (const auto& f : flows) {
      pkts += f.src_pkts + f.dst_pkts;
      bytes += f.src_bytes + f.dst_bytes;
      const auto v = featurize(f);
      CHECK(v.tot_pkts == v.src_pkts + v.dst_pkts);
      CHECK(v.tot_bytes >= v.src_bytes);
      CHECK(f.first_ts <= f.last_ts);
    }
    for (const auto& e : events) want_bytes += e.wire_bytes();
    CHECK(pkts == events.size());
    CHECK(bytes == want_bytes);
  }
}

TEST_CASE("labels come from the registry, not the traffic") {
  attacks::GroundTruthRegistry reg;
  const auto attacker = net::parse_address("10.0.0.66");
  const auto entry = reg.open(attacker, 1000, attacks::AttackKind::AddressScan);
  reg.close(entry, 5000);

  FlowRecord f;
  f.key = {Endpoint{attacker, 40000}, kServer};
  f.first_ts = 3000;
  auto l = label(f, reg);
  CHECK(l.label == Label::Attack);
  CHECK(l.attack_kind == attacks::AttackKind::AddressScan);

  f.first_ts = 6000;
  CHECK(label(f, reg).label == Label::Normal);
  f.first_ts = 3000;
  f.key.src = kClient;
  CHECK(label(f, reg).label == Label::Normal);
  CHECK_FALSE(label(f, reg).attack_kind);
}

TEST_CASE("testbed traffic aggregates into labeled flows") {
  TestbedConfig cfg;
  cfg.pollers.push_back(net::PollerConfig(default_hmi_poller(cfg.server)));
  Testbed tb(cfg);
  tb.start();
  auto spec = attacks::default_spec(attacks::AttackKind::AddressScan);
  spec.start = from_seconds(30);
  spec.seed = 3;
  tb.launch(spec);
  tb.run_until(from_seconds(120));
  const auto tap = tb.network().tap();
  const auto flows = aggregate(tap, FlowTableConfig{60 * kMicrosPerSecond, 5 * kMicrosPerSecond});
  std::map<Label, int> by_label;
  for (const auto& f : flows) {
    const auto l = label(f, tb.registry());
    ++by_label[l.label];
    CHECK((l.label == Label::Attack) == (f.key.src.address == spec.attacker));
  }
  CHECK(by_label[Label::Attack] == 16);
  CHECK(by_label[Label::Normal] >= 20);
}
