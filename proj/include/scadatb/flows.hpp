#pragma once

// Bidirectional flow aggregation over the tap stream and the six transport
// features exported per flow (TotPkts, TotBytes, SrcPkts, DstPkts, SrcBytes,
// Sport). Flows are oriented by whoever sent the first packet.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scadatb/attacks.hpp"
#include "scadatb/common.hpp"
#include "scadatb/net.hpp"

namespace scadatb::flows {

enum class FlowState { Open, ClosedFin, ClosedRst, ClosedIdle, HalfOpen };

const char* to_string(FlowState state);

struct FiveTuple {
  net::Endpoint src;  // initiator
  net::Endpoint dst;
  std::uint8_t protocol = net::kProtocolTcp;
  bool operator==(const FiveTuple&) const = default;
};

struct FlowRecord {
  FiveTuple key;
  Micros first_ts = 0;
  Micros last_ts = 0;
  std::uint64_t src_pkts = 0;
  std::uint64_t dst_pkts = 0;
  std::uint64_t src_bytes = 0;
  std::uint64_t dst_bytes = 0;
  FlowState state = FlowState::Open;
  bool operator==(const FlowRecord&) const = default;
};

inline constexpr std::size_t kFeatureCount = 6;

struct FeatureVector {
  std::uint64_t tot_pkts = 0;
  std::uint64_t tot_bytes = 0;
  std::uint64_t src_pkts = 0;
  std::uint64_t dst_pkts = 0;
  std::uint64_t src_bytes = 0;
  std::uint16_t sport = 0;

  std::array<double, kFeatureCount> as_array() const {
    return {static_cast<double>(tot_pkts),  static_cast<double>(tot_bytes), static_cast<double>(src_pkts),
            static_cast<double>(dst_pkts),  static_cast<double>(src_bytes), static_cast<double>(sport)};
  }
  bool operator==(const FeatureVector&) const = default;
};

enum class Label { Normal, Attack };

struct LabeledFlow {
  FeatureVector features;
  Label label = Label::Normal;
  std::optional<attacks::AttackKind> attack_kind;
  bool operator==(const LabeledFlow&) const = default;
};

class OutOfOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowTableConfig {
  Micros idle_timeout = 60 * kMicrosPerSecond;
  // Long-lived flows are reported in slices of this length (0 = never).
  Micros active_timeout = 0;
  bool operator==(const FlowTableConfig&) const = default;
};

class FlowTable {
 public:
  explicit FlowTable(FlowTableConfig config = {}) : config_(config) {}

  // Accounts the event to its flow (header + payload bytes). Fin from both
  // sides or any Rst closes the flow; an active-timeout slice is cut before
  // the event that crosses it. Throws OutOfOrderError if the timestamp is
  // below the watermark.
  void ingest(const net::PacketEvent& event);

  // Flows closed since the last call plus those idle for >= idle_timeout at
  // `now`. Idle flows that never completed a handshake close as HalfOpen.
  std::vector<FlowRecord> close_flows(Micros now) { return close_flows(now, config_.idle_timeout); }
  std::vector<FlowRecord> close_flows(Micros now, Micros idle_timeout);

  // Closes everything still active (end of capture). Established flows keep
  // state Open, unestablished ones report HalfOpen.
  std::vector<FlowRecord> flush();

  std::size_t active() const noexcept { return active_.size(); }
  Micros watermark() const noexcept { return watermark_; }
  const FlowTableConfig& config() const noexcept { return config_; }

 private:
  struct Entry {
    FlowRecord record;
    bool established = false;
    bool fin_src = false;
    bool fin_dst = false;
  };
  using Key = std::pair<net::Endpoint, net::Endpoint>;

  FlowTableConfig config_;
  std::map<Key, Entry> active_;
  std::vector<FlowRecord> closed_;
  Micros watermark_ = INT64_MIN;
};

// Whole-stream convenience: ingest every event, sweeping for idle flows as
// time advances, then flush.
std::vector<FlowRecord> aggregate(std::span<const net::PacketEvent> events, FlowTableConfig config = {});

FeatureVector featurize(const FlowRecord& flow);

LabeledFlow label(const FlowRecord& flow, const attacks::GroundTruthRegistry& registry);

}  // namespace scadatb::flows
