#include "scadatb/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace scadatb::dataset {

using flows::Label;
using flows::LabeledFlow;

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_uint(std::string_view text, T& out) {
  if (text.empty()) return false;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && p == text.data() + text.size();
}

LabeledFlow parse_row(std::string_view line, std::size_t row) {
  auto bad = [row](const std::string& why) {
    return DatasetError(DatasetErrorKind::MalformedRow, fmt::format("row {}: {}", row, why), row);
  };
  const auto f = split_fields(line);
  if (f.size() != 8) throw bad(fmt::format("expected 8 fields, got {}", f.size()));
  LabeledFlow out;
  auto& v = out.features;
  if (!parse_uint(f[0], v.tot_pkts)) throw bad("TotPkts is not a non-negative integer");
  if (!parse_uint(f[1], v.tot_bytes)) throw bad("TotBytes is not a non-negative integer");
  if (!parse_uint(f[2], v.src_pkts)) throw bad("SrcPkts is not a non-negative integer");
  if (!parse_uint(f[3], v.dst_pkts)) throw bad("DstPkts is not a non-negative integer");
  if (!parse_uint(f[4], v.src_bytes)) throw bad("SrcBytes is not a non-negative integer");
  if (!parse_uint(f[5], v.sport)) throw bad("Sport is not a port number");
  if (v.tot_pkts != v.src_pkts + v.dst_pkts) throw bad("TotPkts != SrcPkts + DstPkts");
  if (v.tot_bytes < v.src_bytes) throw bad("TotBytes < SrcBytes");
  if (f[6] == "normal") {
    out.label = Label::Normal;
  } else if (f[6] == "attack") {
    out.label = Label::Attack;
  } else {
    throw bad("Label must be normal or attack");
  }
  if (!f[7].empty()) {
    if (out.label == Label::Normal) throw bad("normal row with an AttackKind");
    try {
      out.attack_kind = attacks::parse_attack_kind(f[7]);
    } catch (const std::invalid_argument&) {
      throw bad("unknown AttackKind");
    }
  }
  return out;
}

double pct(std::size_t part, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(part) / static_cast<double>(total) * 100.0;
}

}  // namespace

std::string to_csv(const Dataset& d) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : d.rows) {
    const auto& v = r.features;
    out += fmt::format("{},{},{},{},{},{},{},{}\n", v.tot_pkts, v.tot_bytes, v.src_pkts, v.dst_pkts, v.src_bytes,
                       v.sport, r.label == Label::Attack ? "attack" : "normal",
                       r.attack_kind ? attacks::to_string(*r.attack_kind) : "");
  }
  return out;
}

Dataset parse_csv(const std::string& text) {
  Dataset d;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DatasetError(DatasetErrorKind::SchemaMismatch, "empty file, no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw DatasetError(DatasetErrorKind::SchemaMismatch, "header does not match " + std::string(kCsvHeader));
  }
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    d.rows.push_back(parse_row(line, row));
  }
  return d;
}

void write_csv(const Dataset& d, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError(DatasetErrorKind::Io, "cannot write " + path.string());
    out << to_csv(d);
  }
  std::ofstream meta(path.string() + ".meta.json", std::ios::binary);
  if (!meta) throw DatasetError(DatasetErrorKind::Io, "cannot write metadata for " + path.string());
  nlohmann::ordered_json j;
  j["schema_version"] = d.schema_version;
  j["provenance"] = d.provenance;
  j["duration_seconds"] = d.duration_seconds;
  j["rows"] = d.rows.size();
  meta << j.dump(2) << '\n';
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrorKind::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Dataset d = parse_csv(buf.str());
  std::ifstream meta(path.string() + ".meta.json");
  if (meta) {
    const auto j = nlohmann::json::parse(meta);
    d.schema_version = j.value("schema_version", std::string(kSchemaVersion));
    if (d.schema_version != kSchemaVersion) {
      throw DatasetError(DatasetErrorKind::SchemaMismatch, "unsupported schema " + d.schema_version);
    }
    d.provenance = j.value("provenance", std::string());
    d.duration_seconds = j.value("duration_seconds", 0.0);
  }
  return d;
}

Split split(const Dataset& d, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  const std::size_t n = d.rows.size();
  const auto target_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction + 1e-9));
  std::vector<bool> in_train(n, false);

  if (spec.time_ordered) {
    for (std::size_t i = 0; i < target_train; ++i) in_train[i] = true;
  } else {
    std::vector<std::vector<std::size_t>> groups(spec.stratified ? 2 : 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = spec.stratified && d.rows[i].label == Label::Attack ? 1 : 0;
      groups[g].push_back(i);
    }
    if (spec.stratified) {
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) {
          throw DatasetError(DatasetErrorKind::ClassTooSmall,
                             fmt::format("no {} rows; a stratified split needs both classes", g ? "attack" : "normal"));
        }
      }
    }

    Rng rng(spec.seed);
    std::vector<std::size_t> quota(groups.size());
    std::vector<double> remainder(groups.size());
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      auto& idx = groups[g];
      for (std::size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.uniform_int(0, i - 1)]);
      }
      const double exact = static_cast<double>(idx.size()) * spec.train_fraction;
      quota[g] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainder[g] = exact - static_cast<double>(quota[g]);
      assigned += quota[g];
    }
    std::vector<std::size_t> order(groups.size());
    for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < target_train && k < order.size(); ++k) {
      if (quota[order[k]] < groups[order[k]].size()) {
        ++quota[order[k]];
        ++assigned;
      }
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i = 0; i < quota[g]; ++i) in_train[groups[g][i]] = true;
    }
  }

  Split out;
  out.train.schema_version = out.test.schema_version = d.schema_version;
  out.train.provenance = d.provenance + "#train";
  out.test.provenance = d.provenance + "#test";
  out.train.duration_seconds = out.test.duration_seconds = d.duration_seconds;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_train[i]) {
      out.train_rows.push_back(i);
      out.train.rows.push_back(d.rows[i]);
    } else {
      out.test_rows.push_back(i);
      out.test.rows.push_back(d.rows[i]);
    }
  }
  return out;
}

CompositionReport stats(const Dataset& d) {
  CompositionReport r;
  r.total = d.rows.size();
  r.duration_seconds = d.duration_seconds;
  for (auto k : attacks::kAllAttackKinds) r.per_kind[k] = 0;
  for (const auto& row : d.rows) {
    if (row.label == Label::Attack) {
      ++r.attack;
      if (row.attack_kind) ++r.per_kind[*row.attack_kind];
    } else {
      ++r.normal;
    }
  }
  r.percentages_defined = r.total > 0;
  r.normal_pct = pct(r.normal, r.total);
  r.attack_pct = pct(r.attack, r.total);
  for (const auto& [k, c] : r.per_kind) r.per_kind_pct[k] = pct(c, r.total);
  return r;
}

nlohmann::json to_json(const CompositionReport& r) {
  nlohmann::ordered_json kinds = nlohmann::ordered_json::object();
  for (const auto& [k, c] : r.per_kind) {
    kinds[attacks::to_string(k)] = {{"count", c}, {"pct", r.per_kind_pct.at(k)}};
  }
  nlohmann::ordered_json j;
  j["total"] = r.total;
  j["normal"] = r.normal;
  j["attack"] = r.attack;
  j["normal_pct"] = r.normal_pct;
  j["attack_pct"] = r.attack_pct;
  j["percentages_defined"] = r.percentages_defined;
  j["duration_seconds"] = r.duration_seconds;
  j["per_kind"] = std::move(kinds);
  return nlohmann::json::parse(j.dump());
}

CompositionReport composition_from_json(const nlohmann::json& j) {
  CompositionReport r;
  r.total = j.at("total").get<std::size_t>();
  r.normal = j.at("normal").get<std::size_t>();
  r.attack = j.at("attack").get<std::size_t>();
  r.normal_pct = j.at("normal_pct").get<double>();
  r.attack_pct = j.at("attack_pct").get<double>();
  r.percentages_defined = j.at("percentages_defined").get<bool>();
  r.duration_seconds = j.at("duration_seconds").get<double>();
  for (const auto& [name, v] : j.at("per_kind").items()) {
    const auto k = attacks::parse_attack_kind(name);
    r.per_kind[k] = v.at("count").get<std::size_t>();
    r.per_kind_pct[k] = v.at("pct").get<double>();
  }
  return r;
}

}  // namespace scadatb::dataset
