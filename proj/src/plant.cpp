#include "scadatb/plant.hpp"

#include <algorithm>
#include <cmath>

namespace scadatb::plant {

using modbus::Table;

namespace {

void apply_outputs(PlantState& s) {
  s.light = s.running;
  s.pump1 = s.running && s.phase == Phase::Filling;
  s.pump2 = s.running && s.phase == Phase::Draining;
  s.valve = s.pump2;
}

std::uint16_t scale(double liters, double capacity) {
  const double v = std::round(liters / capacity * kScaleFullRange);
  return static_cast<std::uint16_t>(std::clamp(v, 0.0, static_cast<double>(kScaleFullRange)));
}

std::uint16_t table_size(Table table) {
  switch (table) {
    case Table::Coils: return 4;
    case Table::DiscreteInputs: return 4;
    case Table::InputRegisters: return 1;
    case Table::HoldingRegisters: return 2;
  }
  return 0;
}

[[noreturn]] void unmapped(Table table, std::uint32_t offset) {
  throw PointError(PointErrorKind::UnmappedAddress,
                   std::string("no point at ") + modbus::to_string(table) + " offset " + std::to_string(offset));
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Idle: return "Idle";
    case Phase::Filling: return "Filling";
    case Phase::Draining: return "Draining";
  }
  return "unknown";
}

void PlantConfig::validate() const {
  if (!(capacity > 0.0)) throw std::invalid_argument("capacity must be positive");
  if (!(level_min >= 0.0 && level_min < level_max && level_max <= capacity)) {
    throw std::invalid_argument("thresholds must satisfy 0 <= level_min < level_max <= capacity");
  }
  if (!(fill_rate > 0.0 && drain_rate > 0.0)) throw std::invalid_argument("rates must be positive");
  if (!(initial_level >= 0.0 && initial_level <= capacity)) {
    throw std::invalid_argument("initial level must lie in [0, capacity]");
  }
}

PlantState initial_state(const PlantConfig& config) {
  PlantState s;
  s.level = config.initial_level;
  s.ls1 = s.level >= config.level_max;
  s.ls2 = s.level <= config.level_min;
  return s;
}

PlantState step(const PlantState& state, const PlantConfig& config) {
  PlantState s = state;
  s.tick += 1;
  s.on_button = false;
  s.off_button = false;

  if (s.pump1) s.level += config.fill_rate;
  if (s.pump2 && s.valve) s.level -= config.drain_rate;
  s.level = std::clamp(s.level, 0.0, config.capacity);

  s.ls1 = s.level >= config.level_max;
  s.ls2 = s.level <= config.level_min;

  if (s.maintenance) return s;

  if (!s.running) {
    s.phase = Phase::Idle;
  } else if (s.phase == Phase::Filling && s.ls1) {
    s.phase = Phase::Draining;
  } else if (s.phase == Phase::Draining && s.ls2) {
    s.phase = Phase::Filling;
  } else if (s.phase == Phase::Idle) {
    s.phase = Phase::Filling;
  }
  apply_outputs(s);
  return s;
}

std::string check_invariants(const PlantState& s, const PlantConfig& config) {
  if (!(s.level >= 0.0 && s.level <= config.capacity)) return "level outside [0, capacity]";
  if (s.pump1 && s.pump2) return "both pumps on";
  if (s.maintenance) return {};
  if (!s.running && (s.pump1 || s.pump2 || s.valve || s.phase != Phase::Idle)) {
    return "stopped plant with active actuators or non-idle phase";
  }
  if (s.light != s.running) return "light does not follow running";
  if (s.running) {
    const bool draining = s.phase == Phase::Draining;
    if (draining != s.valve || s.valve != s.pump2) return "valve/pump2/Draining disagree";
    if (s.phase == Phase::Filling && !s.pump1) return "filling without pump1";
  }
  return {};
}

const std::vector<PointInfo>& point_map() {
  static const std::vector<PointInfo> map = {
      {1, "pump1", Table::Coils, 0, false},
      {2, "pump2", Table::Coils, 1, false},
      {3, "valve", Table::Coils, 2, false},
      {4, "light", Table::Coils, 3, false},
      {10001, "ls1", Table::DiscreteInputs, 0, false},
      {10002, "ls2", Table::DiscreteInputs, 1, false},
      {10003, "on_button", Table::DiscreteInputs, 2, true},
      {10004, "off_button", Table::DiscreteInputs, 3, true},
      {30001, "level_scaled", Table::InputRegisters, 0, false},
      {40001, "level_max_scaled", Table::HoldingRegisters, 0, true},
      {40002, "level_min_scaled", Table::HoldingRegisters, 1, true},
  };
  return map;
}

std::vector<std::uint16_t> read_point(const PlantState& s, const PlantConfig& config, Table table,
                                      std::uint16_t offset, std::uint16_t count) {
  if (static_cast<std::uint32_t>(offset) + count > table_size(table)) {
    unmapped(table, static_cast<std::uint32_t>(offset) + count - 1);
  }
  std::vector<std::uint16_t> out;
  out.reserve(count);
  for (std::uint16_t i = offset; i < offset + count; ++i) {
    switch (table) {
      case Table::Coils: {
        const bool bits[] = {s.pump1, s.pump2, s.valve, s.light};
        out.push_back(bits[i]);
        break;
      }
      case Table::DiscreteInputs: {
        const bool bits[] = {s.ls1, s.ls2, s.on_button, s.off_button};
        out.push_back(bits[i]);
        break;
      }
      case Table::InputRegisters:
        out.push_back(scale(s.level, config.capacity));
        break;
      case Table::HoldingRegisters:
        out.push_back(scale(i == 0 ? config.level_max : config.level_min, config.capacity));
        break;
    }
  }
  return out;
}

Plant write_point(Plant plant, Table table, std::uint16_t offset, std::uint16_t value) {
  if (offset >= table_size(table)) unmapped(table, offset);
  auto& s = plant.state;
  auto& c = plant.config;

  switch (table) {
    case Table::DiscreteInputs:
      if (offset < 2) throw PointError(PointErrorKind::ReadOnlyPoint, "level sensors are read-only");
      if (value == 0) return plant;
      if (offset == 2) {
        s.on_button = true;
        if (!s.running) {
          s.running = true;
          s.phase = Phase::Filling;
        }
      } else {
        s.off_button = true;
        s.running = false;
        s.phase = Phase::Idle;
      }
      if (!s.maintenance) apply_outputs(s);
      return plant;

    case Table::HoldingRegisters: {
      if (value > kScaleFullRange) {
        throw PointError(PointErrorKind::IllegalValue, "threshold above full scale");
      }
      const double liters = static_cast<double>(value) / kScaleFullRange * c.capacity;
      const double new_max = offset == 0 ? liters : c.level_max;
      const double new_min = offset == 1 ? liters : c.level_min;
      if (!(new_min < new_max)) throw PointError(PointErrorKind::IllegalValue, "level_min must stay below level_max");
      c.level_max = new_max;
      c.level_min = new_min;
      return plant;
    }

    case Table::Coils: {
      if (!s.maintenance) {
        throw PointError(PointErrorKind::ReadOnlyPoint, "coils are driven by the control program");
      }
      bool* coils[] = {&s.pump1, &s.pump2, &s.valve, &s.light};
      const bool other_pump = offset == 0 ? s.pump2 : offset == 1 ? s.pump1 : false;
      if (value != 0 && other_pump) {
        throw PointError(PointErrorKind::IllegalValue, "pumps are mutually exclusive");
      }
      *coils[offset] = value != 0;
      return plant;
    }

    case Table::InputRegisters:
      throw PointError(PointErrorKind::ReadOnlyPoint, "input registers are read-only");
  }
  return plant;
}

PlantController::PlantController(PlantConfig config) {
  config.validate();
  plant_.config = config;
  plant_.state = initial_state(config);
}

void PlantController::advance() {
  plant_.state = step(plant_.state, plant_.config);
  while (!pending_.empty()) {
    const Write w = pending_.front();
    pending_.pop_front();
    try {
      apply(w);
    } catch (const PointError&) {
    }
  }
}

}  // namespace scadatb::plant
