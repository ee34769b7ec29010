#pragma once

// Seeded generators for the five reconnaissance/exploit attacks. Each one
// registers its attacker host in the ground-truth registry before sending
// anything, so flow labeling never depends on traffic content.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scadatb/common.hpp"
#include "scadatb/modbus.hpp"
#include "scadatb/net.hpp"

namespace scadatb::attacks {

enum class AttackKind { PortScan, AddressScan, DeviceId, DeviceIdAggressive, CoilReadExploit };

inline constexpr AttackKind kAllAttackKinds[] = {AttackKind::PortScan, AttackKind::AddressScan, AttackKind::DeviceId,
                                                 AttackKind::DeviceIdAggressive, AttackKind::CoilReadExploit};

const char* to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view text);

inline constexpr std::uint16_t kEphemeralLow = 32768;
inline constexpr std::uint16_t kEphemeralHigh = 60999;

struct AttackSpec {
  AttackKind kind = AttackKind::PortScan;
  Micros start = 0;
  std::uint32_t attacker = 0;  // host address; source ports come from the seeded generator
  net::Endpoint target;
  std::uint64_t seed = 0;

  // Delay between consecutive probes/requests, drawn uniformly in seconds.
  double interval_min_s = 1.0;
  double interval_max_s = 3.0;

  std::vector<std::uint16_t> ports;       // PortScan
  std::vector<std::uint8_t> unit_ids;     // AddressScan, DeviceId, DeviceIdAggressive

  // CoilReadExploit
  std::uint8_t unit_id = 1;
  std::uint16_t coil_start = 0;
  std::uint16_t coil_count = 4;
  double duration_s = 300.0;

  bool operator==(const AttackSpec&) const = default;
};

// Spec with the per-kind defaults filled in (port list, uid range, intervals).
AttackSpec default_spec(AttackKind kind);

// Throws std::invalid_argument on an inconsistent spec (e.g. a port-scan gap
// outside [1, 3] s or an empty exploit window).
void validate(const AttackSpec& spec);

void to_json(nlohmann::json& j, const AttackSpec& spec);
// Missing fields take the defaults of the given kind.
void from_json(const nlohmann::json& j, AttackSpec& spec);

// Ground truth ---------------------------------------------------------------------

struct RegistryEntry {
  std::uint32_t attacker = 0;
  Micros start = 0;
  std::optional<Micros> end;  // open while the attack runs
  AttackKind kind = AttackKind::PortScan;
  bool operator==(const RegistryEntry&) const = default;
};

// Append-only apart from closing an entry's interval.
class GroundTruthRegistry {
 public:
  std::size_t open(std::uint32_t attacker, Micros start, AttackKind kind);
  void close(std::size_t entry, Micros end);

  // Kind of the first entry for this host whose interval covers `when`.
  std::optional<AttackKind> lookup(std::uint32_t address, Micros when) const;

  const std::vector<RegistryEntry>& entries() const noexcept { return entries_; }
  bool operator==(const GroundTruthRegistry&) const = default;

  nlohmann::json to_json() const;
  static GroundTruthRegistry from_json(const nlohmann::json& j);

 private:
  std::vector<RegistryEntry> entries_;
};

// Results -------------------------------------------------------------------------

struct CoilObservation {
  Micros at = 0;
  std::vector<bool> coils;  // pump1, pump2, valve, light for the default range
};

struct AttackReport {
  AttackKind kind = AttackKind::PortScan;
  Micros started = 0;
  std::optional<Micros> finished;
  std::vector<net::ConnectionId> connections;
  std::vector<std::uint16_t> source_ports;
  std::uint64_t requests = 0;
  std::uint64_t responses = 0;
  std::uint64_t timeouts = 0;

  std::vector<Micros> probe_gaps;                  // PortScan
  std::vector<std::uint16_t> open_ports;           // PortScan: SynAck
  std::vector<std::uint16_t> closed_ports;         // PortScan: Rst
  std::vector<std::uint8_t> responding_units;      // AddressScan, DeviceId*
  std::map<std::uint8_t, std::vector<modbus::DeviceObject>> identification;  // DeviceId*
  std::vector<CoilObservation> coil_reads;         // CoilReadExploit

  std::optional<std::uint8_t> discovered_unit() const {
    return responding_units.empty() ? std::nullopt : std::optional(responding_units.front());
  }
};

// Runner --------------------------------------------------------------------------

// Drives one attack on the virtual clock. Create through launch(); the object
// must outlive the scheduler run.
class AttackRunner {
 public:
  AttackRunner(net::Scheduler& scheduler, net::SimNetwork& network, GroundTruthRegistry& registry, AttackSpec spec);

  // Registers the attacker and schedules the first step at spec.start.
  void launch();

  bool finished() const noexcept { return report_.finished.has_value(); }
  const AttackSpec& spec() const noexcept { return spec_; }
  const AttackReport& report() const noexcept { return report_; }

 private:
  net::Endpoint next_source();
  Micros draw_interval();
  void finish();

  void port_probe(std::size_t index);
  void unit_probe(std::size_t index);
  void device_id_probe(std::size_t index, std::size_t category_index);
  void exploit_step(net::ConnectionId conn);

  net::Scheduler& scheduler_;
  net::SimNetwork& network_;
  GroundTruthRegistry& registry_;
  AttackSpec spec_;
  Rng rng_;
  std::uint32_t port_cursor_ = 0;
  std::uint16_t next_tid_ = 1;
  std::size_t registry_entry_ = 0;
  AttackReport report_;
};

}  // namespace scadatb::attacks
