#include "scadatb/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace scadatb::scenario {

using nlohmann::json;

namespace {

modbus::Table parse_table(std::string_view text) {
  for (auto t : {modbus::Table::Coils, modbus::Table::DiscreteInputs, modbus::Table::InputRegisters,
                 modbus::Table::HoldingRegisters}) {
    if (text == modbus::to_string(t)) return t;
  }
  throw std::invalid_argument("unknown table: " + std::string(text));
}

json poller_json(const net::PollerConfig& p) {
  json reads = json::array();
  for (const auto& r : p.reads) {
    reads.push_back({{"table", modbus::to_string(r.table)}, {"offset", r.offset}, {"count", r.count}});
  }
  return {{"name", p.name},
          {"client", net::to_string(p.client)},
          {"server", net::to_string(p.server)},
          {"unit_id", p.unit_id},
          {"period_s", to_seconds(p.period)},
          {"start_s", to_seconds(p.start)},
          {"reads", std::move(reads)}};
}

net::PollerConfig poller_from_json(const json& j, net::Endpoint server) {
  net::PollerConfig p;
  p.server = server;
  p.name = j.value("name", p.name);
  p.client = net::parse_endpoint(j.at("client").get<std::string>());
  if (j.contains("server")) p.server = net::parse_endpoint(j["server"].get<std::string>());
  p.unit_id = j.value("unit_id", p.unit_id);
  p.period = from_seconds(j.value("period_s", to_seconds(p.period)));
  p.start = from_seconds(j.value("start_s", 0.0));
  if (j.contains("reads")) {
    p.reads.clear();
    for (const auto& r : j["reads"]) {
      p.reads.push_back(net::ReadSpec{parse_table(r.at("table").get<std::string>()), r.value("offset", std::uint16_t{0}),
                                      r.value("count", std::uint16_t{1})});
    }
  }
  if (p.period <= 0) throw std::invalid_argument("client period must be positive");
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string pct_text(double v) {
  std::string s = fmt::format("{}", v);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string short_pct(double v) { return fmt::format("{:.3f}", v); }

std::string opt_text(const std::optional<double>& v) { return v ? short_pct(*v) : "n/a"; }

json phase_json(const PhaseResult& p) { return {{"confusion", p.confusion}, {"metrics", p.metrics}}; }

PhaseResult phase_from_json(const json& j) {
  return PhaseResult{j.at("confusion").get<ids::ConfusionMatrix>(), j.at("metrics").get<ids::Metrics>()};
}

template <typename F>
auto in_phase(const std::string& phase, F&& f) {
  try {
    return f();
  } catch (const PhaseError&) {
    throw;
  } catch (const std::exception& e) {
    throw PhaseError(phase, e.what());
  }
}

}  // namespace

const char* to_string(OnlineMode mode) {
  switch (mode) {
    case OnlineMode::Fresh: return "fresh";
    case OnlineMode::Replay: return "replay";
    case OnlineMode::None: return "none";
  }
  return "unknown";
}

OnlineMode parse_online_mode(std::string_view text) {
  for (auto m : {OnlineMode::Fresh, OnlineMode::Replay, OnlineMode::None}) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown online mode: " + std::string(text));
}

ScenarioConfig default_config() {
  ScenarioConfig c;
  c.normal_clients.push_back(default_hmi_poller(c.server));
  for (auto a : ids::kAllAlgorithms) c.models.push_back(ModelSpec{a, {}});
  return c;
}

void ScenarioConfig::validate() const {
  plant.validate();
  if (!(duration_s > 0)) throw std::invalid_argument("duration_s must be positive");
  if (online_duration_s && !(*online_duration_s > 0)) throw std::invalid_argument("online duration must be positive");
  if (tick <= 0) throw std::invalid_argument("tick must be positive");
  if (models.empty()) throw std::invalid_argument("at least one model is required");
  std::set<ids::Algorithm> seen;
  for (const auto& m : models) {
    if (!seen.insert(m.algorithm).second) {
      throw std::invalid_argument(fmt::format("model {} listed twice", ids::to_string(m.algorithm)));
    }
  }
  const Micros end = from_seconds(duration_s);
  for (const auto& a : attacks) {
    attacks::validate(a);
    if (a.start < 0 || a.start > end) {
      throw std::invalid_argument(fmt::format("{} starts outside the scenario window", attacks::to_string(a.kind)));
    }
    if (a.kind == attacks::AttackKind::CoilReadExploit && a.start + from_seconds(a.duration_s) > end) {
      throw std::invalid_argument("CoilReadExploit window ends after the scenario");
    }
  }
  if (!(split.train_fraction > 0 && split.train_fraction < 1)) {
    throw std::invalid_argument("split.train_fraction must lie in (0, 1)");
  }
  if (flows.idle_timeout <= 0 || flows.active_timeout < 0) throw std::invalid_argument("bad flow timeouts");
}

void to_json(json& j, const ScenarioConfig& c) {
  j = json::object();
  j["name"] = c.name;
  j["master_seed"] = c.master_seed;
  j["duration_s"] = c.duration_s;
  j["plant"] = {{"capacity", c.plant.capacity},       {"level_max", c.plant.level_max},
                {"level_min", c.plant.level_min},     {"fill_rate", c.plant.fill_rate},
                {"drain_rate", c.plant.drain_rate},   {"initial_level", c.plant.initial_level}};
  j["tick_ms"] = static_cast<double>(c.tick) / 1000.0;
  j["network"] = {{"link_delay_us", c.timing.link_delay}, {"request_timeout_s", to_seconds(c.timing.request_timeout)}};
  j["server"] = net::to_string(c.server);
  j["normal_clients"] = json::array();
  for (const auto& p : c.normal_clients) j["normal_clients"].push_back(poller_json(p));
  j["flows"] = {{"idle_timeout_s", to_seconds(c.flows.idle_timeout)},
                {"active_timeout_s", to_seconds(c.flows.active_timeout)}};
  j["attacks"] = c.attacks;
  j["split"] = {{"train_fraction", c.split.train_fraction},
                {"stratified", c.split.stratified},
                {"time_ordered", c.split.time_ordered}};
  j["models"] = json::array();
  for (const auto& m : c.models) {
    j["models"].push_back({{"algorithm", ids::to_string(m.algorithm)}, {"hyperparameters", m.hyperparameters}});
  }
  j["online"] = {{"mode", to_string(c.online)}};
  if (c.online_duration_s) j["online"]["duration_s"] = *c.online_duration_s;
  json targets = json::object();
  if (c.traffic_targets.normal_pct) targets["normal_pct"] = *c.traffic_targets.normal_pct;
  targets["tolerance_pct"] = c.traffic_targets.tolerance_pct;
  json kinds = json::object();
  for (const auto& [k, v] : c.traffic_targets.kind_pct) kinds[attacks::to_string(k)] = v;
  targets["kinds"] = std::move(kinds);
  j["traffic_targets"] = std::move(targets);
  j["write_tap"] = c.write_tap;
}

void from_json(const json& j, ScenarioConfig& c) {
  c = ScenarioConfig{};
  c.name = j.value("name", c.name);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.duration_s = j.value("duration_s", c.duration_s);
  if (j.contains("plant")) {
    const auto& p = j["plant"];
    c.plant.capacity = p.value("capacity", c.plant.capacity);
    c.plant.level_max = p.value("level_max", c.plant.level_max);
    c.plant.level_min = p.value("level_min", c.plant.level_min);
    c.plant.fill_rate = p.value("fill_rate", c.plant.fill_rate);
    c.plant.drain_rate = p.value("drain_rate", c.plant.drain_rate);
    c.plant.initial_level = p.value("initial_level", c.plant.initial_level);
  }
  c.tick = static_cast<Micros>(std::llround(j.value("tick_ms", 100.0) * 1000.0));
  if (j.contains("network")) {
    c.timing.link_delay = j["network"].value("link_delay_us", c.timing.link_delay);
    c.timing.request_timeout =
        from_seconds(j["network"].value("request_timeout_s", to_seconds(c.timing.request_timeout)));
  }
  if (j.contains("server")) {
    c.server = net::parse_endpoint(j["server"].get<std::string>());
    if (c.server.port == 0) c.server.port = net::kModbusPort;
  }
  if (j.contains("normal_clients")) {
    for (const auto& p : j["normal_clients"]) c.normal_clients.push_back(poller_from_json(p, c.server));
  } else {
    c.normal_clients.push_back(default_hmi_poller(c.server));
  }
  if (j.contains("flows")) {
    c.flows.idle_timeout = from_seconds(j["flows"].value("idle_timeout_s", 60.0));
    c.flows.active_timeout = from_seconds(j["flows"].value("active_timeout_s", 0.0));
  }
  if (j.contains("attacks")) {
    for (const auto& a : j["attacks"]) {
      auto spec = a.get<attacks::AttackSpec>();
      if (!a.contains("target")) spec.target = c.server;
      c.attacks.push_back(spec);
    }
  }
  if (j.contains("split")) {
    c.split.train_fraction = j["split"].value("train_fraction", c.split.train_fraction);
    c.split.stratified = j["split"].value("stratified", c.split.stratified);
    c.split.time_ordered = j["split"].value("time_ordered", c.split.time_ordered);
  }
  if (j.contains("models")) {
    for (const auto& m : j["models"]) {
      ModelSpec spec;
      spec.algorithm = ids::parse_algorithm(m.at("algorithm").get<std::string>());
      if (m.contains("hyperparameters")) spec.hyperparameters = m["hyperparameters"].get<ids::Hyperparameters>();
      c.models.push_back(spec);
    }
  } else {
    for (auto a : ids::kAllAlgorithms) c.models.push_back(ModelSpec{a, {}});
  }
  if (j.contains("online")) {
    c.online = parse_online_mode(j["online"].value("mode", std::string("fresh")));
    if (j["online"].contains("duration_s")) c.online_duration_s = j["online"]["duration_s"].get<double>();
  }
  if (j.contains("traffic_targets")) {
    const auto& t = j["traffic_targets"];
    if (t.contains("normal_pct")) c.traffic_targets.normal_pct = t["normal_pct"].get<double>();
    c.traffic_targets.tolerance_pct = t.value("tolerance_pct", c.traffic_targets.tolerance_pct);
    if (t.contains("kinds")) {
      for (const auto& [k, v] : t["kinds"].items()) {
        c.traffic_targets.kind_pct[attacks::parse_attack_kind(k)] = v.get<double>();
      }
    }
  }
  c.write_tap = j.value("write_tap", c.write_tap);
  c.validate();
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in, nullptr, true, true).get<ScenarioConfig>();
}

std::string config_hash(const ScenarioConfig& c) {
  return fmt::format("{:016x}", fnv1a64(json(c).dump()));
}

// Capture ------------------------------------------------------------------------------

Capture capture(const ScenarioConfig& c, std::uint64_t phase_seed, double duration_s) {
  TestbedConfig tc;
  tc.plant = c.plant;
  tc.tick = c.tick;
  tc.timing = c.timing;
  tc.server = c.server;
  tc.pollers = c.normal_clients;
  Testbed tb(tc);
  for (std::size_t i = 0; i < c.attacks.size(); ++i) {
    auto spec = c.attacks[i];
    spec.seed = derive_seed(phase_seed ^ spec.seed, "attack", i);
    tb.launch(spec);
  }
  tb.run_until(from_seconds(duration_s));

  Capture cap;
  cap.duration_s = duration_s;
  cap.tap = tb.network().tap();
  cap.tap_events = cap.tap.size();
  cap.registry = tb.registry();
  cap.flows = flows::aggregate(cap.tap, c.flows);
  cap.rows.reserve(cap.flows.size());
  for (const auto& f : cap.flows) {
    cap.rows.push_back(flows::label(f, cap.registry));
    cap.flow_packets += f.src_pkts + f.dst_pkts;
  }
  for (const auto& a : tb.attacks()) cap.attack_requests[a.spec().kind] += a.report().requests;
  return cap;
}

dataset::Dataset to_dataset(const Capture& cap, const std::string& provenance) {
  dataset::Dataset d;
  d.rows = cap.rows;
  d.provenance = provenance;
  d.duration_seconds = cap.duration_s;
  return d;
}

dataset::Dataset build_dataset(const ScenarioConfig& c, const std::filesystem::path& out_dir) {
  c.validate();
  std::filesystem::create_directories(out_dir);
  const auto seed = derive_seed(c.master_seed, "capture");
  const Capture cap = in_phase("capture", [&] { return capture(c, seed, c.duration_s); });
  if (c.write_tap) {
    std::ofstream tap(out_dir / "tap.ndjson", std::ios::binary);
    net::write_tap_log(tap, cap.tap);
  }
  write_text(out_dir / "registry.json", cap.registry.to_json().dump(2) + "\n");
  auto ds = to_dataset(cap, fmt::format("{}:{}", config_hash(c), c.master_seed));
  dataset::write_csv(ds, out_dir / "dataset.csv");
  return ds;
}

// Report -------------------------------------------------------------------------------

json to_json(const RunReport& r) {
  json j;
  j["format"] = r.format;
  j["scenario"] = r.scenario;
  j["config_hash"] = r.config_hash;
  j["master_seed"] = r.master_seed;
  j["online_mode"] = r.online_mode;
  j["dataset"] = dataset::to_json(r.dataset);
  j["online_dataset"] = r.online_dataset ? dataset::to_json(*r.online_dataset) : json(nullptr);
  j["train_rows"] = r.train_rows;
  j["test_rows"] = r.test_rows;
  j["tap_events"] = r.tap_events;
  j["flow_packets"] = r.flow_packets;
  j["models"] = json::array();
  for (const auto& m : r.models) {
    j["models"].push_back({{"algorithm", ids::to_string(m.algorithm)},
                           {"offline", phase_json(m.offline)},
                           {"online", m.online ? phase_json(*m.online) : json(nullptr)},
                           {"alerts", m.alerts},
                           {"model_path", m.model_path}});
  }
  j["artifacts"] = r.artifacts;
  return j;
}

RunReport report_from_json(const json& j) {
  RunReport r;
  r.format = j.at("format").get<std::string>();
  if (r.format != "scadatb-report/1") throw std::runtime_error("unsupported report format " + r.format);
  r.scenario = j.at("scenario").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.online_mode = j.at("online_mode").get<std::string>();
  r.dataset = dataset::composition_from_json(j.at("dataset"));
  if (!j.at("online_dataset").is_null()) r.online_dataset = dataset::composition_from_json(j["online_dataset"]);
  r.train_rows = j.at("train_rows").get<std::size_t>();
  r.test_rows = j.at("test_rows").get<std::size_t>();
  r.tap_events = j.at("tap_events").get<std::uint64_t>();
  r.flow_packets = j.at("flow_packets").get<std::uint64_t>();
  for (const auto& m : j.at("models")) {
    ModelResult mr;
    mr.algorithm = ids::parse_algorithm(m.at("algorithm").get<std::string>());
    mr.offline = phase_from_json(m.at("offline"));
    if (!m.at("online").is_null()) mr.online = phase_from_json(m["online"]);
    mr.alerts = m.at("alerts").get<std::uint64_t>();
    mr.model_path = m.at("model_path").get<std::string>();
    r.models.push_back(mr);
  }
  r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  return r;
}

std::string chart_csv(const RunReport& r, std::string_view metric) {
  auto pick = [&](const ids::Metrics& m) -> std::optional<double> {
    if (metric == "accuracy") return m.accuracy;
    if (metric == "far") return m.far;
    if (metric == "und") return m.und;
    throw std::invalid_argument("unknown metric: " + std::string(metric));
  };
  std::string out = "model,offline,online\n";
  for (const auto& m : r.models) {
    const auto off = pick(m.offline.metrics);
    const auto on = m.online ? pick(m.online->metrics) : std::nullopt;
    out += fmt::format("{},{},{}\n", ids::to_string(m.algorithm), off ? pct_text(*off) : "", on ? pct_text(*on) : "");
  }
  return out;
}

std::string render_markdown(const RunReport& r) {
  std::string out = fmt::format("# Run report: {}\n\n", r.scenario);
  out += fmt::format("- config hash: `{}`\n- master seed: {}\n- online mode: {}\n\n", r.config_hash, r.master_seed,
                     r.online_mode);
  auto composition = [&](const dataset::CompositionReport& c, const std::string& title) {
    out += fmt::format("## {}\n\n", title);
    out += fmt::format("{} flows over {} s of virtual time.\n\n", c.total, pct_text(c.duration_seconds));
    out += "| class | flows | share % |\n|---|---:|---:|\n";
    out += fmt::format("| normal | {} | {:.2f} |\n", c.normal, c.normal_pct);
    for (const auto& [k, n] : c.per_kind) {
      out += fmt::format("| {} | {} | {:.2f} |\n", attacks::to_string(k), n, c.per_kind_pct.at(k));
    }
    out += fmt::format("| all attacks | {} | {:.2f} |\n\n", c.attack, c.attack_pct);
  };
  composition(r.dataset, "Training capture");
  out += fmt::format("Split: {} train rows, {} test rows.\n\n", r.train_rows, r.test_rows);
  if (r.online_dataset) composition(*r.online_dataset, "Online capture");

  out += "## Detection\n\n";
  out += "| model | phase | TP | TN | FP | FN | accuracy % | FAR % | UND % |\n";
  out += "|---|---|---:|---:|---:|---:|---:|---:|---:|\n";
  auto row = [&](const ModelResult& m, const char* phase, const PhaseResult& p) {
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", ids::to_string(m.algorithm), phase,
                       p.confusion.tp, p.confusion.tn, p.confusion.fp, p.confusion.fn, short_pct(p.metrics.accuracy),
                       opt_text(p.metrics.far), opt_text(p.metrics.und));
  };
  for (const auto& m : r.models) {
    row(m, "offline", m.offline);
    if (m.online) row(m, "online", *m.online);
  }
  out += "\n## Artifacts\n\n";
  for (const auto& [k, v] : r.artifacts) out += fmt::format("- {}: `{}`\n", k, v);
  return out;
}

void render_report(const RunReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", to_json(r).dump(2) + "\n");
  write_text(out_dir / "report.md", render_markdown(r));
  for (const char* metric : {"accuracy", "far", "und"}) {
    write_text(out_dir / fmt::format("{}.csv", metric), chart_csv(r, metric));
  }
}

// Pipeline -----------------------------------------------------------------------------

RunReport run_scenario(const ScenarioConfig& c, const std::filesystem::path& out_dir) {
  in_phase("config", [&] {
    c.validate();
    return 0;
  });
  std::filesystem::create_directories(out_dir / "models");

  RunReport report;
  report.scenario = c.name;
  report.config_hash = config_hash(c);
  report.master_seed = c.master_seed;
  report.online_mode = to_string(c.online);

  const auto capture_seed = derive_seed(c.master_seed, "capture");
  const Capture cap = in_phase("capture", [&] { return capture(c, capture_seed, c.duration_s); });
  report.tap_events = cap.tap_events;
  report.flow_packets = cap.flow_packets;
  in_phase("capture", [&] {
    if (c.write_tap) {
      std::ofstream tap(out_dir / "tap.ndjson", std::ios::binary);
      net::write_tap_log(tap, cap.tap);
      report.artifacts["tap_log"] = "tap.ndjson";
    }
    write_text(out_dir / "registry.json", cap.registry.to_json().dump(2) + "\n");
    report.artifacts["registry"] = "registry.json";
    return 0;
  });

  const auto ds = to_dataset(cap, fmt::format("{}:{}", report.config_hash, c.master_seed));
  report.dataset = dataset::stats(ds);
  auto split_spec = c.split;
  split_spec.seed = derive_seed(c.master_seed, "split");
  const auto parts = in_phase("dataset", [&] {
    dataset::write_csv(ds, out_dir / "dataset.csv");
    auto s = dataset::split(ds, split_spec);
    dataset::write_csv(s.train, out_dir / "train.csv");
    dataset::write_csv(s.test, out_dir / "test.csv");
    return s;
  });
  report.artifacts["dataset"] = "dataset.csv";
  report.artifacts["train"] = "train.csv";
  report.artifacts["test"] = "test.csv";
  report.train_rows = parts.train.rows.size();
  report.test_rows = parts.test.rows.size();

  std::vector<ids::TrainedModel> models;
  for (std::size_t i = 0; i < c.models.size(); ++i) {
    const auto& spec = c.models[i];
    ModelResult mr;
    mr.algorithm = spec.algorithm;
    mr.model_path = fmt::format("models/{}.json", ids::to_string(spec.algorithm));
    auto model = in_phase("train", [&] {
      auto m = ids::train(spec.algorithm, parts.train, spec.hyperparameters, derive_seed(c.master_seed, "model", i));
      ids::save_model(m, out_dir / mr.model_path);
      return m;
    });
    const auto e = in_phase("evaluate", [&] { return ids::evaluate(model, parts.test); });
    mr.offline = PhaseResult{e.confusion, e.metrics};
    report.models.push_back(mr);
    models.push_back(std::move(model));
  }

  if (c.online != OnlineMode::None) {
    std::vector<ids::Alert> all_alerts;
    in_phase("online", [&] {
      std::optional<Capture> live;
      if (c.online == OnlineMode::Fresh) {
        live = capture(c, derive_seed(c.master_seed, "online"), c.online_duration_s.value_or(c.duration_s));
        auto online_ds = to_dataset(*live, fmt::format("{}:{}:online", report.config_hash, c.master_seed));
        report.online_dataset = dataset::stats(online_ds);
      }
      for (std::size_t i = 0; i < models.size(); ++i) {
        ids::OnlineDetector detector(models[i]);
        if (live) {
          for (std::size_t f = 0; f < live->flows.size(); ++f) {
            detector.observe(live->flows[f], live->rows[f], live->flows[f].last_ts);
          }
        } else {
          for (const auto& row : parts.test.rows) detector.observe(row);
        }
        report.models[i].online = PhaseResult{detector.confusion(), detector.metrics()};
        report.models[i].alerts = detector.alerts().size();
        all_alerts.insert(all_alerts.end(), detector.alerts().begin(), detector.alerts().end());
      }
      write_text(out_dir / "alerts.ndjson", ids::to_ndjson(all_alerts));
      return 0;
    });
    report.artifacts["alerts"] = "alerts.ndjson";
  }
  for (const auto& m : report.models) report.artifacts["model:" + std::string(ids::to_string(m.algorithm))] = m.model_path;
  report.artifacts["report"] = "report.json";
  report.artifacts["report_markdown"] = "report.md";
  report.artifacts["chart_accuracy"] = "accuracy.csv";
  report.artifacts["chart_far"] = "far.csv";
  report.artifacts["chart_und"] = "und.csv";
  in_phase("report", [&] {
    render_report(report, out_dir);
    return 0;
  });
  return report;
}

}  // namespace scadatb::scenario
