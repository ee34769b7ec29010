#pragma once

// Scenario runner: capture, flow extraction, dataset, training, offline and
// online evaluation, report. Everything downstream of master_seed is
// deterministic.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scadatb/attacks.hpp"
#include "scadatb/dataset.hpp"
#include "scadatb/flows.hpp"
#include "scadatb/ids.hpp"
#include "scadatb/testbed.hpp"

namespace scadatb::scenario {

struct ModelSpec {
  ids::Algorithm algorithm = ids::Algorithm::DecisionTree;
  ids::Hyperparameters hyperparameters;
  bool operator==(const ModelSpec&) const = default;
};

enum class OnlineMode { Fresh, Replay, None };

const char* to_string(OnlineMode mode);
OnlineMode parse_online_mode(std::string_view text);

struct TrafficTargets {
  std::optional<double> normal_pct;
  std::map<attacks::AttackKind, double> kind_pct;
  double tolerance_pct = 1.0;
  bool operator==(const TrafficTargets&) const = default;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t master_seed = 1;
  double duration_s = 600.0;
  plant::PlantConfig plant;
  Micros tick = kDefaultTick;
  net::NetworkTiming timing;
  net::Endpoint server{0x0A000002, net::kModbusPort};
  std::vector<net::PollerConfig> normal_clients;
  flows::FlowTableConfig flows;
  std::vector<attacks::AttackSpec> attacks;
  dataset::SplitSpec split;  // seed is derived from master_seed
  std::vector<ModelSpec> models;
  OnlineMode online = OnlineMode::Fresh;
  std::optional<double> online_duration_s;  // defaults to duration_s
  TrafficTargets traffic_targets;
  bool write_tap = true;

  // Throws std::invalid_argument (attack windows outside [0, duration], no
  // models, bad plant parameters, ...).
  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

// Defaults: one HMI client, all five models, no attacks.
ScenarioConfig default_config();

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);
ScenarioConfig load_config(const std::filesystem::path& path);

// FNV-1a of the canonical config JSON, as 16 hex digits.
std::string config_hash(const ScenarioConfig& c);

// One traffic phase on the virtual clock.
struct Capture {
  std::vector<net::PacketEvent> tap;
  std::uint64_t tap_events = 0;
  attacks::GroundTruthRegistry registry;
  std::vector<flows::FlowRecord> flows;
  std::vector<flows::LabeledFlow> rows;  // parallel to flows
  std::uint64_t flow_packets = 0;
  std::map<attacks::AttackKind, std::uint64_t> attack_requests;
  double duration_s = 0.0;
};

// Runs plant, clients and attacks for `duration_s`; attack seeds are derived
// from `phase_seed`, so a new phase seed yields fresh attack traffic from the
// same generators.
Capture capture(const ScenarioConfig& c, std::uint64_t phase_seed, double duration_s);

dataset::Dataset to_dataset(const Capture& cap, const std::string& provenance);

struct PhaseResult {
  ids::ConfusionMatrix confusion;
  ids::Metrics metrics;
  bool operator==(const PhaseResult&) const = default;
};

struct ModelResult {
  ids::Algorithm algorithm = ids::Algorithm::DecisionTree;
  PhaseResult offline;
  std::optional<PhaseResult> online;
  std::uint64_t alerts = 0;
  std::string model_path;
  bool operator==(const ModelResult&) const = default;
};

struct RunReport {
  std::string format = "scadatb-report/1";
  std::string scenario;
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::string online_mode;
  dataset::CompositionReport dataset;
  std::optional<dataset::CompositionReport> online_dataset;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::uint64_t tap_events = 0;
  std::uint64_t flow_packets = 0;
  std::vector<ModelResult> models;
  std::map<std::string, std::string> artifacts;  // relative to the output directory
  bool operator==(const RunReport&) const = default;
};

nlohmann::json to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

// report.md plus accuracy.csv, far.csv, und.csv (model,offline,online).
void render_report(const RunReport& r, const std::filesystem::path& out_dir);
std::string render_markdown(const RunReport& r);
std::string chart_csv(const RunReport& r, std::string_view metric);

class PhaseError : public std::runtime_error {
 public:
  PhaseError(std::string phase, const std::string& what)
      : std::runtime_error(phase + ": " + what), phase_(std::move(phase)) {}
  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

// Full pipeline. Artifacts go to out_dir, which is created if missing.
RunReport run_scenario(const ScenarioConfig& c, const std::filesystem::path& out_dir);

// Pieces reused by the CLI verbs.
dataset::Dataset build_dataset(const ScenarioConfig& c, const std::filesystem::path& out_dir);

}  // namespace scadatb::scenario
