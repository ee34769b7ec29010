#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "scadatb/flows.hpp"
#include "scadatb/loopback.hpp"

using namespace scadatb;
using namespace scadatb::loopback;
using namespace std::chrono_literals;

TEST_CASE("real sockets serve the plant and feed the tap queue") {
  plant::PlantController pc{{}};
  net::ModbusServer modbus(pc);
  TapQueue tap;
  LoopbackServer server(modbus.handler(), tap);
  server.start();
  REQUIRE(server.port() != 0);

  net::Endpoint client_ep;
  {
    LoopbackClient client("127.0.0.1", server.port());
    client_ep = client.local_endpoint();
    const auto read = modbus::encode_frame({3, 1, modbus::ReadRequest{modbus::FunctionCode::ReadInputRegisters, 0, 1}});
    const auto reply = modbus::decode_frame(client.exchange(read), modbus::Direction::Response);
    REQUIRE(reply);
    CHECK(reply.frame().transaction_id == 3);
    CHECK(std::get<modbus::RegistersResponse>(reply.frame().pdu).values == std::vector<std::uint16_t>{500});

    const auto coil = modbus::encode_frame({4, 1, modbus::WriteSingleCoil{0, true}});
    const auto ex = modbus::decode_frame(client.exchange(coil), modbus::Direction::Response);
    REQUIRE(ex);
    CHECK(std::get<modbus::ExceptionResponse>(ex.frame().pdu).code == modbus::ExceptionCode::IllegalDataAddress);
  }
  // Syn, SynAck, Ack, 2 x (request, response), Fin, Fin.
  REQUIRE(tap.wait_for_total(9, 5s));
  const auto events = tap.drain();
  REQUIRE(events.size() == 9);
  CHECK(events[0].kind == net::PacketKind::HandshakeSyn);
  CHECK(events[0].src == client_ep);
  CHECK(events[3].kind == net::PacketKind::Data);
  CHECK(events[3].payload_bytes == 12);
  CHECK(events[4].src.port == server.port());
  CHECK(events[8].kind == net::PacketKind::Fin);
  for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i].timestamp >= events[i - 1].timestamp);

  const auto flows = flows::aggregate(events);
  REQUIRE(flows.size() == 1);
  CHECK(flows[0].state == flows::FlowState::ClosedFin);
  CHECK(flows[0].src_pkts == 5);
  CHECK(flows[0].dst_pkts == 4);
  CHECK(flows::featurize(flows[0]).sport == client_ep.port);
  CHECK(modbus.requests_seen() == 2);
  server.stop();
}

TEST_CASE("concurrent clients and stop with a connection still open") {
  plant::PlantController pc{{}};
  net::ModbusServer modbus(pc);
  TapQueue tap;
  LoopbackServer server(modbus.handler(), tap);
  server.start();

  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      LoopbackClient client("127.0.0.1", server.port());
      for (int i = 0; i < 25; ++i) {
        const auto req = modbus::encode_frame(
            {static_cast<std::uint16_t>(t * 100 + i), 1, modbus::ReadRequest{modbus::FunctionCode::ReadCoils, 0, 4}});
        const auto r = modbus::decode_frame(client.exchange(req), modbus::Direction::Response);
        if (r && r.frame().transaction_id == t * 100 + i) ++ok;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(ok == 100);
  CHECK(server.connections() == 4);

  LoopbackClient idle("127.0.0.1", server.port());
  REQUIRE(tap.wait_for_total(4 * (3 + 50 + 2) + 3, 5s));
  server.stop();
  CHECK_THROWS(idle.exchange(modbus::encode_frame({1, 1, modbus::ReadRequest{}})));
}
