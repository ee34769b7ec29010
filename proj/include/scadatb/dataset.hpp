#pragma once

// Labeled flow datasets: CSV persistence, stratified train/test splitting
// and class-composition statistics.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scadatb/flows.hpp"

namespace scadatb::dataset {

inline constexpr const char* kSchemaVersion = "scadatb-flows/1";
inline constexpr const char* kCsvHeader = "TotPkts,TotBytes,SrcPkts,DstPkts,SrcBytes,Sport,Label,AttackKind";

struct Dataset {
  std::vector<flows::LabeledFlow> rows;
  std::string schema_version = kSchemaVersion;
  std::string provenance;         // scenario hash + seed
  double duration_seconds = 0.0;  // virtual capture time the rows cover
  bool operator==(const Dataset&) const = default;
};

enum class DatasetErrorKind { SchemaMismatch, MalformedRow, ClassTooSmall, Io };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what, std::size_t row = 0)
      : std::runtime_error(what), kind_(kind), row_(row) {}
  DatasetErrorKind kind() const noexcept { return kind_; }
  // 1-based data row (header excluded) for MalformedRow.
  std::size_t row() const noexcept { return row_; }

 private:
  DatasetErrorKind kind_;
  std::size_t row_;
};

// Writes `path` (CSV) and `path` + ".meta.json" (schema, provenance, duration).
void write_csv(const Dataset& dataset, const std::filesystem::path& path);
// Reads the CSV; the sidecar is optional.
Dataset read_csv(const std::filesystem::path& path);

std::string to_csv(const Dataset& dataset);
Dataset parse_csv(const std::string& text);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool stratified = true;
  bool time_ordered = false;  // first rows train, rest test; overrides stratified
  bool operator==(const SplitSpec&) const = default;
};

struct Split {
  Dataset train;
  Dataset test;
  // Row indices into the source dataset, ascending.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

// Stratified by label: per-class shuffle, floor(n_c * f) rows to train, then
// the leftover up to floor(N * f) handed to the classes with the largest
// fractional remainders. Deterministic for a fixed seed.
Split split(const Dataset& dataset, const SplitSpec& spec);

struct CompositionReport {
  std::size_t total = 0;
  std::size_t normal = 0;
  std::size_t attack = 0;
  std::map<attacks::AttackKind, std::size_t> per_kind;
  double normal_pct = 0.0;
  double attack_pct = 0.0;
  std::map<attacks::AttackKind, double> per_kind_pct;
  bool percentages_defined = false;  // false for an empty dataset
  double duration_seconds = 0.0;
  bool operator==(const CompositionReport&) const = default;
};

CompositionReport stats(const Dataset& dataset);

nlohmann::json to_json(const CompositionReport& report);
CompositionReport composition_from_json(const nlohmann::json& j);

}  // namespace scadatb::dataset
