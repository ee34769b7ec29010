#include "scadatb/session.hpp"

#include <fmt/format.h>

namespace scadatb {

using nlohmann::json;

const char* to_string(SessionErrorKind kind) {
  switch (kind) {
    case SessionErrorKind::ConflictingCommand: return "conflicting-command";
    case SessionErrorKind::SessionNotLive: return "session-not-live";
    case SessionErrorKind::InvalidCommand: return "invalid-command";
  }
  return "unknown";
}

namespace {

CommandResult failure(SessionErrorKind kind, std::string message) {
  CommandResult r;
  r.ok = false;
  r.error = kind;
  r.message = std::move(message);
  r.body = {{"error", to_string(kind)}, {"message", r.message}};
  return r;
}

json features_json(const flows::FeatureVector& v) {
  return {{"TotPkts", v.tot_pkts}, {"TotBytes", v.tot_bytes}, {"SrcPkts", v.src_pkts},
          {"DstPkts", v.dst_pkts}, {"SrcBytes", v.src_bytes}, {"Sport", v.sport}};
}

}  // namespace

json state_json(const plant::PlantState& s, const plant::PlantConfig& c) {
  return {{"level", s.level},
          {"level_pct", s.level / c.capacity * 100.0},
          {"running", s.running},
          {"light", s.light},
          {"ls1", s.ls1},
          {"ls2", s.ls2},
          {"pump1", s.pump1},
          {"pump2", s.pump2},
          {"valve", s.valve},
          {"phase", plant::to_string(s.phase)},
          {"tick", s.tick},
          {"maintenance", s.maintenance}};
}

LiveSession::LiveSession(scenario::ScenarioConfig config, SessionOptions options)
    : config_(std::move(config)), options_(std::move(options)), table_(config_.flows) {
  TestbedConfig tc;
  tc.plant = config_.plant;
  tc.tick = config_.tick;
  tc.timing = config_.timing;
  tc.server = config_.server;
  tc.pollers = config_.normal_clients;
  tc.press_on_at_start = false;
  testbed_ = std::make_unique<Testbed>(tc);
  testbed_->network().set_retain_history(false);
  if (options_.model) detector_.emplace(*options_.model);
}

LiveSession::~LiveSession() { stop(); }

void LiveSession::start() {
  if (running_.exchange(true)) return;
  stop_requested_ = false;
  thread_ = std::thread([this] { loop(); });
}

void LiveSession::stop() {
  stop_requested_ = true;
  if (thread_.joinable()) thread_.join();
  running_ = false;
}

std::future<CommandResult> LiveSession::submit(Command command) {
  std::promise<CommandResult> reply;
  auto future = reply.get_future();
  if (!running_ || stop_requested_) {
    reply.set_value(failure(SessionErrorKind::SessionNotLive, "the live session is not running"));
    return future;
  }
  std::lock_guard lock(queue_mutex_);
  queue_.push_back(Pending{std::move(command), std::move(reply)});
  return future;
}

std::future<CommandResult> LiveSession::press(bool on) { return submit(Press{on}); }
std::future<CommandResult> LiveSession::launch_attack(attacks::AttackSpec spec) { return submit(Launch{std::move(spec)}); }
std::future<CommandResult> LiveSession::snapshot() { return submit(Snapshot{}); }
std::future<CommandResult> LiveSession::metrics() { return submit(Metrics{}); }

std::uint64_t LiveSession::subscribe(Listener listener) {
  std::lock_guard lock(listener_mutex_);
  const auto id = next_listener_++;
  listeners_.emplace(id, std::move(listener));
  return id;
}

void LiveSession::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(listener_mutex_);
  listeners_.erase(id);
}

void LiveSession::publish(const json& message) {
  const std::string text = message.dump();
  std::vector<Listener> targets;
  {
    std::lock_guard lock(listener_mutex_);
    for (const auto& [id, l] : listeners_) targets.push_back(l);
  }
  for (const auto& l : targets) l(text);
}

void LiveSession::loop() {
  testbed_->start();
  auto deadline = std::chrono::steady_clock::now();
  while (!stop_requested_) {
    std::deque<Pending> batch;
    {
      std::lock_guard lock(queue_mutex_);
      batch.swap(queue_);
    }
    for (auto& p : batch) p.reply.set_value(apply(p.command));
    step();
    if (options_.tick_wall.count() > 0) {
      deadline += options_.tick_wall;
      std::this_thread::sleep_until(deadline);
    }
  }
  std::deque<Pending> rest;
  {
    std::lock_guard lock(queue_mutex_);
    rest.swap(queue_);
  }
  for (auto& p : rest) p.reply.set_value(failure(SessionErrorKind::SessionNotLive, "session stopped"));
}

CommandResult LiveSession::apply(const Command& command) {
  CommandResult r;
  const Micros now = testbed_->now();
  if (const auto* press = std::get_if<Press>(&command)) {
    auto& c = testbed_->controller();
    press->on ? c.press_on() : c.press_off();
    r.body = {{"accepted", press->on ? "on" : "off"}, {"t", to_seconds(now)}};
    publish({{"type", "command"}, {"button", press->on ? "on" : "off"}, {"t", to_seconds(now)}});
  } else if (const auto* launch = std::get_if<Launch>(&command)) {
    for (const auto& a : testbed_->attacks()) {
      if (a.spec().kind == launch->spec.kind && !a.finished()) {
        return failure(SessionErrorKind::ConflictingCommand,
                       fmt::format("a {} attack is already running", attacks::to_string(a.spec().kind)));
      }
    }
    auto spec = launch->spec;
    spec.start = now;
    if (spec.seed == 0) spec.seed = derive_seed(options_.seed, "live-attack", attacks_launched_);
    try {
      attacks::validate(spec);
    } catch (const std::exception& e) {
      return failure(SessionErrorKind::InvalidCommand, e.what());
    }
    const auto id = ++attacks_launched_;
    auto& runner = testbed_->launch(spec);
    announced_finished_[&runner] = false;
    r.body = {{"attack_id", id}, {"kind", attacks::to_string(spec.kind)}, {"t", to_seconds(now)}};
    publish({{"type", "attack"},
             {"event", "started"},
             {"attack_id", id},
             {"kind", attacks::to_string(spec.kind)},
             {"attacker", net::format_address(spec.attacker)},
             {"t", to_seconds(now)}});
  } else if (std::holds_alternative<Snapshot>(command)) {
    r.body = state_json(testbed_->controller().state(), testbed_->controller().config());
    r.body["t"] = to_seconds(now);
  } else {
    r.body = {{"flows", flows_closed_}, {"model", nullptr}, {"t", to_seconds(now)}};
    if (detector_) {
      r.body["model"] = ids::to_string(options_.model->algorithm);
      r.body["confusion"] = detector_->confusion();
      r.body["metrics"] = detector_->metrics();
      r.body["alerts"] = detector_->alerts().size();
    }
  }
  return r;
}

void LiveSession::step() {
  ++tick_;
  const Micros t = static_cast<Micros>(tick_) * config_.tick;
  testbed_->run_until(t);
  for (const auto& e : testbed_->network().drain(t)) table_.ingest(e);
  for (const auto& flow : table_.close_flows(t)) {
    ++flows_closed_;
    const auto truth = flows::label(flow, testbed_->registry());
    publish({{"type", "flow"},
             {"t", to_seconds(t)},
             {"src", net::to_string(flow.key.src)},
             {"dst", net::to_string(flow.key.dst)},
             {"state", flows::to_string(flow.state)},
             {"features", features_json(truth.features)},
             {"label", truth.label == flows::Label::Attack ? "attack" : "normal"},
             {"attack_kind", truth.attack_kind ? json(attacks::to_string(*truth.attack_kind)) : json(nullptr)}});
    if (detector_) {
      if (auto alert = detector_->observe(flow, truth, t)) {
        json msg = ids::to_json(*alert);
        msg["type"] = "alert";
        publish(msg);
      }
    }
  }
  std::uint64_t id = 0;
  for (const auto& a : testbed_->attacks()) {
    ++id;
    auto it = announced_finished_.find(&a);
    if (it != announced_finished_.end() && !it->second && a.finished()) {
      it->second = true;
      publish({{"type", "attack"},
               {"event", "finished"},
               {"attack_id", id},
               {"kind", attacks::to_string(a.spec().kind)},
               {"t", to_seconds(t)}});
    }
  }
  if (options_.publish_every > 0 && tick_ % options_.publish_every == 0) {
    publish({{"type", "tick"},
             {"t", to_seconds(t)},
             {"state", state_json(testbed_->controller().state(), testbed_->controller().config())}});
  }
}

}  // namespace scadatb
