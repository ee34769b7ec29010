#pragma once

// Water storage tank with two-level (LS1/LS2) hysteresis control, scanned
// like a PLC: physics first, then sensing and actuation within the same tick.

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "scadatb/modbus.hpp"

namespace scadatb::plant {

enum class Phase { Idle, Filling, Draining };

const char* to_string(Phase phase);

struct PlantConfig {
  double capacity = 1000.0;       // liters
  double level_max = 900.0;       // LS1 threshold
  double level_min = 100.0;       // LS2 threshold
  double fill_rate = 10.0;        // liters per tick, pump 1
  double drain_rate = 8.0;        // liters per tick, pump 2
  double initial_level = 500.0;

  // Throws std::invalid_argument unless 0 <= min < max <= capacity and rates > 0.
  void validate() const;
  bool operator==(const PlantConfig&) const = default;
};

struct PlantState {
  double level = 0.0;
  bool running = false;
  bool light = false;
  bool ls1 = false;
  bool ls2 = false;
  bool pump1 = false;
  bool pump2 = false;
  bool valve = false;
  Phase phase = Phase::Idle;
  std::int64_t tick = 0;

  // Push buttons are one-scan pulses; they read as 1 until the next step.
  bool on_button = false;
  bool off_button = false;

  // Manual mode: coil writes accepted, control scan suspended.
  bool maintenance = false;

  bool operator==(const PlantState&) const = default;
};

struct Plant {
  PlantConfig config;
  PlantState state;
  bool operator==(const Plant&) const = default;
};

PlantState initial_state(const PlantConfig& config);

// One tick: level +/- rate per active pump (clamped to [0, capacity]), then
// the control scan.
PlantState step(const PlantState& state, const PlantConfig& config);

// Returns a description of the first violated invariant, or empty.
std::string check_invariants(const PlantState& state, const PlantConfig& config);

// Point map -------------------------------------------------------------------

struct PointInfo {
  int reference;
  const char* name;
  modbus::Table table;
  std::uint16_t offset;
  bool writable;
};

// Coils 00001-00004 pump1/pump2/valve/light, discrete inputs 10001-10004
// ls1/ls2/on_button/off_button, input register 30001 level (0-1000), holding
// registers 40001-40002 level_max/level_min (0-1000).
const std::vector<PointInfo>& point_map();

inline constexpr std::uint16_t kScaleFullRange = 1000;

enum class PointErrorKind { UnmappedAddress, ReadOnlyPoint, IllegalValue };

class PointError : public std::runtime_error {
 public:
  PointError(PointErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  PointErrorKind kind() const noexcept { return kind_; }

 private:
  PointErrorKind kind_;
};

// Bits read as 0/1. Throws PointError(UnmappedAddress) if any point in
// [offset, offset + count) is not in the point map.
std::vector<std::uint16_t> read_point(const PlantState& state, const PlantConfig& config,
                                      modbus::Table table, std::uint16_t offset, std::uint16_t count);

// Writable points: discrete inputs 2/3 (on/off button pulse, any nonzero
// value presses), holding registers 0/1 (thresholds), coils only in
// maintenance mode.
Plant write_point(Plant plant, modbus::Table table, std::uint16_t offset, std::uint16_t value);

// Single-owner stepper with a command queue. advance() steps once and then
// applies queued commands, so a button pulse is visible until the next step.
class PlantController {
 public:
  struct Write {
    modbus::Table table;
    std::uint16_t offset;
    std::uint16_t value;
  };

  explicit PlantController(PlantConfig config);

  const Plant& plant() const noexcept { return plant_; }
  const PlantState& state() const noexcept { return plant_.state; }
  const PlantConfig& config() const noexcept { return plant_.config; }

  // For the Modbus server, which runs in the owning context.
  Plant& mutable_plant() noexcept { return plant_; }

  void press_on() { enqueue({modbus::Table::DiscreteInputs, 2, 1}); }
  void press_off() { enqueue({modbus::Table::DiscreteInputs, 3, 1}); }
  void enqueue(Write w) { pending_.push_back(w); }

  // Immediate write from the Modbus server, which runs in the owning context.
  void apply(const Write& w) { plant_ = write_point(std::move(plant_), w.table, w.offset, w.value); }

  void set_maintenance(bool on) { plant_.state.maintenance = on; }

  // Steps once, then drains the command queue. Invalid commands are dropped.
  void advance();

 private:
  Plant plant_;
  std::deque<Write> pending_;
};

}  // namespace scadatb::plant
