#include "scadatb/testbed.hpp"

namespace scadatb {

net::PollerConfig default_hmi_poller(net::Endpoint server) {
  net::PollerConfig p;
  p.name = "hmi";
  p.client = net::Endpoint{net::parse_address("10.0.0.10"), 49152};
  p.server = server;
  p.period = kMicrosPerSecond;
  p.reads = net::default_hmi_reads();
  return p;
}

Testbed::Testbed(TestbedConfig config)
    : config_(std::move(config)),
      network_(scheduler_, config_.timing),
      controller_(config_.plant),
      server_(controller_, config_.server_config) {
  network_.listen(config_.server, server_.handler());
  for (const auto& p : config_.pollers) {
    pollers_.push_back(std::make_unique<net::PollingClient>(scheduler_, network_, p));
  }
}

void Testbed::start() {
  if (started_) return;
  started_ = true;
  if (config_.press_on_at_start) controller_.press_on();
  scheduler_.at(0, [this] { tick(0); });
  for (auto& p : pollers_) p->start();
}

void Testbed::tick(std::int64_t k) {
  if (k > 0) controller_.advance();
  scheduler_.at((k + 1) * config_.tick, [this, k] { tick(k + 1); });
}

attacks::AttackRunner& Testbed::launch(const attacks::AttackSpec& spec) {
  auto& runner = attacks_.emplace_back(scheduler_, network_, registry_, spec);
  runner.launch();
  return runner;
}

void Testbed::run_until(Micros until) {
  start();
  scheduler_.run_until(until);
}

}  // namespace scadatb
