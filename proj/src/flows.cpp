#include "scadatb/flows.hpp"

#include <algorithm>

namespace scadatb::flows {

using net::PacketKind;

const char* to_string(FlowState state) {
  switch (state) {
    case FlowState::Open: return "Open";
    case FlowState::ClosedFin: return "ClosedFin";
    case FlowState::ClosedRst: return "ClosedRst";
    case FlowState::ClosedIdle: return "ClosedIdle";
    case FlowState::HalfOpen: return "HalfOpen";
  }
  return "unknown";
}

void FlowTable::ingest(const net::PacketEvent& e) {
  if (e.timestamp < watermark_) {
    throw OutOfOrderError("event at " + std::to_string(e.timestamp) + " us is behind the watermark " +
                          std::to_string(watermark_) + " us");
  }
  watermark_ = e.timestamp;

  const Key key = e.src < e.dst ? Key{e.src, e.dst} : Key{e.dst, e.src};
  auto it = active_.find(key);
  if (it == active_.end()) {
    Entry entry;
    entry.record.key = FiveTuple{e.src, e.dst, net::kProtocolTcp};
    entry.record.first_ts = e.timestamp;
    it = active_.emplace(key, entry).first;
  } else if (config_.active_timeout > 0 && e.timestamp - it->second.record.first_ts >= config_.active_timeout) {
    FlowRecord slice = it->second.record;
    slice.state = it->second.established ? FlowState::Open : FlowState::HalfOpen;
    closed_.push_back(slice);
    auto& r = it->second.record;
    r.first_ts = e.timestamp;
    r.src_pkts = r.dst_pkts = r.src_bytes = r.dst_bytes = 0;
  }

  Entry& entry = it->second;
  FlowRecord& r = entry.record;
  const bool from_src = e.src == r.key.src;
  if (from_src) {
    ++r.src_pkts;
    r.src_bytes += e.wire_bytes();
  } else {
    ++r.dst_pkts;
    r.dst_bytes += e.wire_bytes();
  }
  r.last_ts = e.timestamp;

  switch (e.kind) {
    case PacketKind::HandshakeAck:
    case PacketKind::Data: entry.established = true; break;
    case PacketKind::Fin: (from_src ? entry.fin_src : entry.fin_dst) = true; break;
    default: break;
  }

  if (e.kind == PacketKind::Rst || (entry.fin_src && entry.fin_dst)) {
    r.state = e.kind == PacketKind::Rst ? FlowState::ClosedRst : FlowState::ClosedFin;
    closed_.push_back(r);
    active_.erase(it);
  }
}

std::vector<FlowRecord> FlowTable::close_flows(Micros now, Micros idle_timeout) {
  std::vector<FlowRecord> out = std::move(closed_);
  closed_.clear();
  std::vector<FlowRecord> idle;
  for (auto it = active_.begin(); it != active_.end();) {
    if (now - it->second.record.last_ts >= idle_timeout) {
      FlowRecord r = it->second.record;
      r.state = it->second.established ? FlowState::ClosedIdle : FlowState::HalfOpen;
      idle.push_back(r);
      it = active_.erase(it);
    } else {
      ++it;
    }
  }
  std::stable_sort(idle.begin(), idle.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.first_ts < b.first_ts; });
  out.insert(out.end(), idle.begin(), idle.end());
  return out;
}

std::vector<FlowRecord> FlowTable::flush() {
  std::vector<FlowRecord> out = std::move(closed_);
  closed_.clear();
  std::vector<FlowRecord> rest;
  for (auto& [key, entry] : active_) {
    FlowRecord r = entry.record;
    r.state = entry.established ? FlowState::Open : FlowState::HalfOpen;
    rest.push_back(r);
  }
  active_.clear();
  std::stable_sort(rest.begin(), rest.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.first_ts < b.first_ts; });
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::vector<FlowRecord> aggregate(std::span<const net::PacketEvent> events, FlowTableConfig config) {
  FlowTable table(config);
  std::vector<FlowRecord> out;
  Micros next_sweep = INT64_MIN;
  for (const auto& e : events) {
    table.ingest(e);
    if (e.timestamp >= next_sweep) {
      auto closed = table.close_flows(e.timestamp);
      out.insert(out.end(), closed.begin(), closed.end());
      next_sweep = e.timestamp + kMicrosPerSecond;
    }
  }
  auto closed = table.close_flows(table.watermark());
  out.insert(out.end(), closed.begin(), closed.end());
  auto rest = table.flush();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

FeatureVector featurize(const FlowRecord& f) {
  FeatureVector v;
  v.src_pkts = f.src_pkts;
  v.dst_pkts = f.dst_pkts;
  v.tot_pkts = f.src_pkts + f.dst_pkts;
  v.src_bytes = f.src_bytes;
  v.tot_bytes = f.src_bytes + f.dst_bytes;
  v.sport = f.key.src.port;
  return v;
}

LabeledFlow label(const FlowRecord& flow, const attacks::GroundTruthRegistry& registry) {
  LabeledFlow out;
  out.features = featurize(flow);
  out.attack_kind = registry.lookup(flow.key.src.address, flow.first_ts);
  out.label = out.attack_kind ? Label::Attack : Label::Normal;
  return out;
}

}  // namespace scadatb::flows
