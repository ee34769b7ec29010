#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scadatb/scenario.hpp"

using namespace scadatb;
using namespace scadatb::scenario;
namespace fs = std::filesystem;

namespace {

ScenarioConfig small_config() {
  auto c = default_config();
  c.name = "small";
  c.master_seed = 77;
  c.duration_s = 900;
  c.flows.active_timeout = 5 * kMicrosPerSecond;
  double start = 60;
  for (auto kind : attacks::kAllAttackKinds) {
    auto a = attacks::default_spec(kind);
    a.start = from_seconds(start);
    if (kind == attacks::AttackKind::CoilReadExploit) a.duration_s = 120;
    c.attacks.push_back(a);
    start += 160;
  }
  for (auto& m : c.models) {
    m.hyperparameters.trees = 10;
    m.hyperparameters.epochs = 100;
  }
  c.online_duration_s = 900;
  c.write_tap = false;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("scadatb_test_scenario_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config json round-trips and hashes stably") {
  const auto c = small_config();
  nlohmann::json j = c;
  const auto back = j.get<ScenarioConfig>();
  CHECK(back == c);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  auto other = c;
  other.master_seed = 78;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("config validation") {
  auto bad = small_config();
  bad.models.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config();
  bad.attacks.back().start = from_seconds(850);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config();
  bad.models.push_back(bad.models.front());
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config();
  bad.split.train_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_config();
  bad.plant.level_min = 950;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(small_config().validate());
  CHECK_THROWS(nlohmann::json::parse(R"({"normal_clients":[{"reads":[{"table":"files"}]}]})").get<ScenarioConfig>());
}

TEST_CASE("bundled reference scenario loads") {
  const auto c = load_config(fs::path(SCADATB_SOURCE_DIR) / "scenarios" / "reference.json");
  CHECK_NOTHROW(c.validate());
  CHECK(c.models.size() == 5);
  CHECK(c.attacks.size() >= 5);
}

TEST_CASE("capture labels attack flows and nothing else") {
  const auto c = small_config();
  const auto cap = capture(c, 1, c.duration_s);
  std::map<attacks::AttackKind, int> kinds;
  for (std::size_t i = 0; i < cap.rows.size(); ++i) {
    const bool from_attacker = cap.flows[i].key.src.address == c.attacks.front().attacker;
    CHECK((cap.rows[i].label == flows::Label::Attack) == from_attacker);
    if (cap.rows[i].attack_kind) ++kinds[*cap.rows[i].attack_kind];
  }
  CHECK(kinds.size() == 5);
  CHECK(cap.tap_events == cap.flow_packets);
}

TEST_CASE("a full run is deterministic and writes every artifact") {
  const auto c = small_config();
  const auto a_dir = scratch("a");
  const auto b_dir = scratch("b");
  const auto a = run_scenario(c, a_dir);
  const auto b = run_scenario(c, b_dir);
  CHECK(a == b);
  for (const auto& [key, rel] : a.artifacts) {
    CAPTURE(key);
    REQUIRE(fs::exists(a_dir / rel));
    CHECK(slurp(a_dir / rel) == slurp(b_dir / rel));
  }
  CHECK(a.train_rows + a.test_rows == a.dataset.total);
  CHECK(a.models.size() == 5);
  for (const auto& m : a.models) {
    REQUIRE(m.online);
    CHECK(m.offline.confusion.total() == a.test_rows);
    CHECK(m.online->confusion.total() == a.online_dataset->total);
  }

  const auto reread = report_from_json(nlohmann::json::parse(slurp(a_dir / "report.json")));
  CHECK(reread == a);
  CHECK(report_from_json(to_json(a)) == a);

  const auto chart = slurp(a_dir / "accuracy.csv");
  CHECK(chart.rfind("model,offline,online\n", 0) == 0);
  CHECK(std::count(chart.begin(), chart.end(), '\n') == 6);
  CHECK(chart == chart_csv(a, "accuracy"));
  CHECK(render_markdown(a).find("DecisionTree") != std::string::npos);

  auto other = c;
  other.master_seed = 78;
  const auto c_dir = scratch("c");
  run_scenario(other, c_dir);
  CHECK(slurp(c_dir / "dataset.csv") != slurp(a_dir / "dataset.csv"));
  for (const auto& d : {a_dir, b_dir, c_dir}) fs::remove_all(d);
}

TEST_CASE("replay mode streams the test split") {
  auto c = small_config();
  c.online = OnlineMode::Replay;
  c.models.resize(2);
  const auto dir = scratch("replay");
  const auto r = run_scenario(c, dir);
  CHECK_FALSE(r.online_dataset);
  for (const auto& m : r.models) {
    REQUIRE(m.online);
    CHECK(*m.online == m.offline);
  }
  fs::remove_all(dir);
}

TEST_CASE("online mode none skips the live phase") {
  auto c = small_config();
  c.online = OnlineMode::None;
  c.models.resize(1);
  const auto dir = scratch("none");
  const auto r = run_scenario(c, dir);
  CHECK_FALSE(r.models[0].online);
  CHECK_FALSE(r.artifacts.contains("alerts"));
  const auto chart = chart_csv(r, "far");
  CHECK(chart.substr(chart.rfind(',') + 1) == "\n");
  fs::remove_all(dir);
}

TEST_CASE("phase errors name the failing phase") {
  auto c = small_config();
  c.attacks.clear();
  c.models.resize(1);
  const auto dir = scratch("err");
  try {
    run_scenario(c, dir);
    FAIL("expected a PhaseError");
  } catch (const PhaseError& e) {
    CHECK(e.phase() == "dataset");
  }
  fs::remove_all(dir);
}
