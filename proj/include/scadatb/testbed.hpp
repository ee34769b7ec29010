#pragma once

// Wires plant, PLC Modbus server, normal pollers and attack generators onto
// one virtual clock.

#include <deque>
#include <memory>
#include <vector>

#include "scadatb/attacks.hpp"
#include "scadatb/net.hpp"
#include "scadatb/plant.hpp"

namespace scadatb {

inline constexpr Micros kDefaultTick = 100'000;

struct TestbedConfig {
  plant::PlantConfig plant;
  Micros tick = kDefaultTick;
  bool press_on_at_start = true;
  net::NetworkTiming timing;
  net::Endpoint server{0x0A000002, net::kModbusPort};  // 10.0.0.2:502
  net::ServerConfig server_config;
  std::vector<net::PollerConfig> pollers;
};

// Default HMI poller: 10.0.0.10 with stable source port 49152, 1 s period.
net::PollerConfig default_hmi_poller(net::Endpoint server);

class Testbed {
 public:
  explicit Testbed(TestbedConfig config);

  Testbed(const Testbed&) = delete;
  Testbed& operator=(const Testbed&) = delete;

  // Schedules plant ticks and starts the pollers. Idempotent.
  void start();

  // Schedules the attack at spec.start; the runner lives as long as the testbed.
  attacks::AttackRunner& launch(const attacks::AttackSpec& spec);

  void run_until(Micros until);
  Micros now() const noexcept { return scheduler_.now(); }

  const TestbedConfig& config() const noexcept { return config_; }
  net::Scheduler& scheduler() noexcept { return scheduler_; }
  net::SimNetwork& network() noexcept { return network_; }
  plant::PlantController& controller() noexcept { return controller_; }
  net::ModbusServer& server() noexcept { return server_; }
  attacks::GroundTruthRegistry& registry() noexcept { return registry_; }
  const std::vector<std::unique_ptr<net::PollingClient>>& pollers() const noexcept { return pollers_; }
  const std::deque<attacks::AttackRunner>& attacks() const noexcept { return attacks_; }

 private:
  void tick(std::int64_t k);

  TestbedConfig config_;
  net::Scheduler scheduler_;
  net::SimNetwork network_;
  plant::PlantController controller_;
  net::ModbusServer server_;
  attacks::GroundTruthRegistry registry_;
  std::vector<std::unique_ptr<net::PollingClient>> pollers_;
  std::deque<attacks::AttackRunner> attacks_;
  bool started_ = false;
};

}  // namespace scadatb
