#pragma once

// Live session: the testbed paced against the wall clock, driven through a
// command queue, publishing state ticks, closed flows, alerts and attack
// lifecycle messages to subscribers. ApiServer exposes it over HTTP and
// WebSocket.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include <nlohmann/json.hpp>

#include "scadatb/ids.hpp"
#include "scadatb/scenario.hpp"

namespace scadatb {

struct SessionOptions {
  std::chrono::microseconds tick_wall{100'000};  // 0 = as fast as possible
  std::uint64_t seed = 1;
  std::optional<ids::TrainedModel> model;
  std::uint32_t publish_every = 1;  // tick messages every N ticks
};

enum class SessionErrorKind { ConflictingCommand, SessionNotLive, InvalidCommand };

const char* to_string(SessionErrorKind kind);

struct CommandResult {
  bool ok = true;
  std::optional<SessionErrorKind> error;
  std::string message;
  nlohmann::json body;
};

nlohmann::json state_json(const plant::PlantState& s, const plant::PlantConfig& c);

class LiveSession {
 public:
  using Listener = std::function<void(const std::string&)>;

  LiveSession(scenario::ScenarioConfig config, SessionOptions options = {});
  ~LiveSession();

  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  void start();
  void stop();
  bool live() const noexcept { return running_.load(); }

  // Commands are applied by the simulation thread between ticks.
  std::future<CommandResult> press(bool on);
  std::future<CommandResult> launch_attack(attacks::AttackSpec spec);
  std::future<CommandResult> snapshot();
  std::future<CommandResult> metrics();

  // Listeners run on the simulation thread and must not block.
  std::uint64_t subscribe(Listener listener);
  void unsubscribe(std::uint64_t id);

  const scenario::ScenarioConfig& config() const noexcept { return config_; }

 private:
  struct Press {
    bool on;
  };
  struct Launch {
    attacks::AttackSpec spec;
  };
  struct Snapshot {};
  struct Metrics {};
  using Command = std::variant<Press, Launch, Snapshot, Metrics>;
  struct Pending {
    Command command;
    std::promise<CommandResult> reply;
  };

  std::future<CommandResult> submit(Command command);
  void loop();
  CommandResult apply(const Command& command);
  void step();
  void publish(const nlohmann::json& message);

  scenario::ScenarioConfig config_;
  SessionOptions options_;
  std::unique_ptr<Testbed> testbed_;
  flows::FlowTable table_;
  std::optional<ids::OnlineDetector> detector_;
  std::uint64_t flows_closed_ = 0;
  std::uint64_t tick_ = 0;
  std::uint64_t attacks_launched_ = 0;
  std::map<const attacks::AttackRunner*, bool> announced_finished_;

  std::mutex queue_mutex_;
  std::deque<Pending> queue_;

  std::mutex listener_mutex_;
  std::map<std::uint64_t, Listener> listeners_;
  std::uint64_t next_listener_ = 1;

  std::atomic<bool> running_{false};
  std::atomic<bool> stop_requested_{false};
  std::thread thread_;
};

// HTTP + WebSocket front end on one port:
//   GET  /api/state     plant snapshot
//   POST /api/command   {"button": "on" | "off"}
//   POST /api/attack    AttackSpec JSON (start is taken as "now")
//   GET  /api/metrics   running confusion matrix of the deployed model
//   GET  /ws            WebSocket stream of session messages
class ApiServer {
 public:
  ApiServer(LiveSession& session, const std::string& address, std::uint16_t port, unsigned threads = 4);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  void start();
  void stop();
  void wait();
  std::uint16_t port() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace scadatb
