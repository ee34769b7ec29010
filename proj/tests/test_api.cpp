#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "scadatb/session.hpp"

using namespace scadatb;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

scenario::ScenarioConfig live_config() {
  auto c = scenario::default_config();
  c.flows.active_timeout = 5 * kMicrosPerSecond;
  return c;
}

// A DT trained on a capture with several exploit windows, each from a
// different source port.
ids::TrainedModel exploit_model() {
  auto c = live_config();
  c.duration_s = 1800;
  for (int i = 0; i < 6; ++i) {
    auto a = attacks::default_spec(attacks::AttackKind::CoilReadExploit);
    a.start = from_seconds(100 + 250 * i);
    a.duration_s = 120;
    a.seed = static_cast<std::uint64_t>(i + 1);
    c.attacks.push_back(a);
  }
  const auto cap = scenario::capture(c, 5, c.duration_s);
  return ids::train(ids::Algorithm::DecisionTree, scenario::to_dataset(cap, "api-test"));
}

class WsClient {
 public:
  explicit WsClient(std::uint16_t port) : ws_(ioc_) {
    boost::asio::ip::tcp::resolver resolver(ioc_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/ws");
  }

  // Reads until a message of the given type arrives or `limit` messages pass.
  std::optional<json> wait_for(const std::string& type, int limit = 3000) {
    for (int i = 0; i < limit; ++i) {
      boost::beast::flat_buffer buf;
      ws_.read(buf);
      auto msg = json::parse(boost::beast::buffers_to_string(buf.data()));
      if (msg.value("type", "") == type) return msg;
    }
    return std::nullopt;
  }

  void close() { ws_.close(boost::beast::websocket::close_code::normal); }

 private:
  boost::asio::io_context ioc_;
  boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
};

struct Fixture {
  explicit Fixture(SessionOptions opts = {}) : session(live_config(), std::move(opts)), api(session, "127.0.0.1", 0) {
    session.start();
    api.start();
    client = std::make_unique<httplib::Client>("127.0.0.1", api.port());
    client->set_read_timeout(10, 0);
  }
  ~Fixture() {
    api.stop();
    session.stop();
  }

  json get(const std::string& path, int expect = 200) {
    auto res = client->Get(path);
    REQUIRE(res);
    CHECK(res->status == expect);
    return json::parse(res->body);
  }
  json post(const std::string& path, const std::string& body, int expect = 200) {
    auto res = client->Post(path, body, "application/json");
    REQUIRE(res);
    CHECK_MESSAGE(res->status == expect, res->body);
    return json::parse(res->body);
  }

  LiveSession session;
  ApiServer api;
  std::unique_ptr<httplib::Client> client;
};

SessionOptions fast() {
  SessionOptions o;
  o.tick_wall = 1ms;
  o.publish_every = 10;
  return o;
}

}  // namespace

TEST_CASE("state endpoint and the on button") {
  Fixture f(fast());
  const auto before = f.get("/api/state");
  CHECK(before["running"] == false);
  CHECK(before["level"] == 500.0);
  CHECK(before["phase"] == "Idle");

  WsClient ws(f.api.port());
  f.post("/api/command", R"({"button":"on"})");
  const auto cmd = ws.wait_for("command");
  REQUIRE(cmd);
  CHECK((*cmd)["button"] == "on");
  const auto tick = ws.wait_for("tick");
  REQUIRE(tick);
  CHECK((*tick)["state"]["running"] == true);
  ws.close();

  std::this_thread::sleep_for(50ms);
  const auto after = f.get("/api/state");
  CHECK(after["running"] == true);
  CHECK(after["light"] == true);
  CHECK(after["tick"].get<std::int64_t>() > before["tick"].get<std::int64_t>());

  f.post("/api/command", R"({"button":"off"})");
  CHECK(f.get("/api/state")["running"] == false);
}

TEST_CASE("request validation") {
  Fixture f(fast());
  CHECK(f.post("/api/command", R"({"button":"maybe"})", 400)["error"] == "invalid-command");
  CHECK(f.post("/api/command", "not json", 400)["error"] == "invalid-command");
  CHECK(f.post("/api/attack", R"({"kind":"Teardrop"})", 400)["error"] == "invalid-command");
  CHECK(f.get("/api/nowhere", 404)["error"] == "not-found");
  auto res = f.client->Get("/api/command");
  REQUIRE(res);
  CHECK(res->status == 405);
}

TEST_CASE("a second attack of the same kind conflicts while the first runs") {
  Fixture f(fast());
  const std::string spec = R"({"kind":"CoilReadExploit","duration_s":600})";
  const auto first = f.post("/api/attack", spec);
  CHECK(first["kind"] == "CoilReadExploit");
  CHECK(f.post("/api/attack", spec, 409)["error"] == "conflicting-command");
  f.post("/api/attack", R"({"kind":"PortScan"})");
}

TEST_CASE("commands fail once the session stops") {
  Fixture f(fast());
  f.session.stop();
  CHECK(f.get("/api/state", 503)["error"] == "session-not-live");
  CHECK(f.post("/api/command", R"({"button":"on"})", 503)["error"] == "session-not-live");
}

TEST_CASE("deployed model raises alerts for a live exploit") {
  auto opts = fast();
  opts.model = exploit_model();
  Fixture f(opts);
  WsClient ws(f.api.port());
  f.post("/api/command", R"({"button":"on"})");
  f.post("/api/attack", R"({"kind":"CoilReadExploit","duration_s":60})");
  const auto started = ws.wait_for("attack");
  REQUIRE(started);
  CHECK((*started)["event"] == "started");
  const auto alert = ws.wait_for("alert");
  REQUIRE(alert);
  CHECK((*alert)["model"] == "DecisionTree");
  CHECK((*alert)["truth"] == "CoilReadExploit");
  ws.close();

  const auto m = f.get("/api/metrics");
  CHECK(m["model"] == "DecisionTree");
  CHECK(m["alerts"].get<int>() >= 1);
  CHECK(m["confusion"]["tp"].get<int>() >= 1);
}

TEST_CASE("metrics without a model") {
  Fixture f(fast());
  const auto m = f.get("/api/metrics");
  CHECK(m["model"].is_null());
}
