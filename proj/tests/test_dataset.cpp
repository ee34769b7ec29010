#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "scadatb/dataset.hpp"
#include "support/generators.hpp"

using namespace scadatb;
using namespace scadatb::dataset;
using flows::Label;
using flows::LabeledFlow;

namespace {

LabeledFlow random_row(Rng& rng, bool attack) {
  LabeledFlow r;
  r.features.src_pkts = rng.uniform_int(1, 50);
  r.features.dst_pkts = rng.uniform_int(0, 50);
  r.features.tot_pkts = r.features.src_pkts + r.features.dst_pkts;
  r.features.src_bytes = r.features.src_pkts * 54 + rng.uniform_int(0, 500);
  r.features.tot_bytes = r.features.src_bytes + r.features.dst_pkts * 54;
  r.features.sport = testing::any_u16(rng);
  r.label = attack ? Label::Attack : Label::Normal;
  if (attack) r.attack_kind = attacks::kAllAttackKinds[rng.uniform_int(0, 4)];
  return r;
}

Dataset make(std::size_t normal, std::size_t attack, std::uint64_t seed = 1) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < normal; ++i) d.rows.push_back(random_row(rng, false));
  for (std::size_t i = 0; i < attack; ++i) d.rows.push_back(random_row(rng, true));
  d.provenance = "test";
  d.duration_seconds = 12.5;
  return d;
}

std::size_t count(const Dataset& d, Label l) {
  return std::count_if(d.rows.begin(), d.rows.end(), [&](const auto& r) { return r.label == l; });
}

DatasetErrorKind parse_error(const std::string& text, std::size_t* row = nullptr) {
  try {
    parse_csv(text);
  } catch (const DatasetError& e) {
    if (row) *row = e.row();
    return e.kind();
  }
  FAIL("no error");
  return DatasetErrorKind::Io;
}

}  // namespace

TEST_CASE("csv round-trip") {
  const auto d = make(50, 10);
  const auto text = to_csv(d);
  CHECK(text.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
  const auto back = parse_csv(text);
  CHECK(back.rows == d.rows);

  const auto dir = std::filesystem::temp_directory_path() / "scadatb_test_dataset";
  std::filesystem::create_directories(dir);
  write_csv(d, dir / "d.csv");
  CHECK(std::filesystem::exists(dir / "d.csv.meta.json"));
  CHECK(read_csv(dir / "d.csv") == d);
  std::filesystem::remove(dir / "d.csv.meta.json");
  const auto bare = read_csv(dir / "d.csv");
  CHECK(bare.rows == d.rows);
  CHECK(bare.schema_version == kSchemaVersion);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_csv(dir / "missing.csv"), DatasetError);
}

TEST_CASE("csv validation") {
  const std::string h = std::string(kCsvHeader) + "\n";
  CHECK(parse_error("TotPkts,TotBytes\n1,2\n") == DatasetErrorKind::SchemaMismatch);
  std::size_t row = 0;
  CHECK(parse_error(h + "7,401,4,3,228,49152,normal,\n4,1,2,1,1,1,normal,\n", &row) == DatasetErrorKind::MalformedRow);
  CHECK(row == 2);
  CHECK(parse_error(h + "7,401,4,3,228,49152,normal\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,401,4,3,228,49152,benign,\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,401,4,3,228,49152,normal,PortScan\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,401,4,3,228,49152,attack,Teardrop\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,401,4,3,-1,49152,normal,\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,100,4,3,228,49152,normal,\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_error(h + "7,401,4,3,228,70000,normal,\n") == DatasetErrorKind::MalformedRow);
  CHECK(parse_csv(h + "7,401,4,3,228,49152,normal,\r\n").rows.size() == 1);
}

TEST_CASE("stratified split of 94 normal / 6 attack") {
  const auto d = make(94, 6);
  const auto s = split(d, SplitSpec{0.8, 11, true, false});
  CHECK(count(s.train, Label::Normal) == 75);
  CHECK(count(s.train, Label::Attack) == 5);
  CHECK(count(s.test, Label::Normal) == 19);
  CHECK(count(s.test, Label::Attack) == 1);
  CHECK(s.train.provenance == "test#train");
  CHECK(s.test.provenance == "test#test");
}

TEST_CASE("property: splits partition the rows and are deterministic") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n_normal = rng.uniform_int(1, 300);
    const auto n_attack = rng.uniform_int(1, 60);
    const auto d = make(n_normal, n_attack, trial);
    SplitSpec spec{rng.uniform(0.05, 0.95), rng.next(), true, false};
    const auto s = split(d, spec);
    const std::size_t n = d.rows.size();
    CHECK(s.train.rows.size() == static_cast<std::size_t>(std::floor(n * spec.train_fraction)));
    CHECK(s.train.rows.size() + s.test.rows.size() == n);
    std::set<std::size_t> all(s.train_rows.begin(), s.train_rows.end());
    all.insert(s.test_rows.begin(), s.test_rows.end());
    CHECK(all.size() == n);
    CHECK(std::is_sorted(s.train_rows.begin(), s.train_rows.end()));
    for (std::size_t i = 0; i < s.train_rows.size(); ++i) CHECK(s.train.rows[i] == d.rows[s.train_rows[i]]);
    for (auto l : {Label::Normal, Label::Attack}) {
      const double exact = static_cast<double>(count(d, l)) * spec.train_fraction;
      const auto got = static_cast<double>(count(s.train, l));
      CHECK(got >= std::floor(exact));
      CHECK(got <= std::floor(exact) + 1);
    }
    const auto again = split(d, spec);
    CHECK(again.train_rows == s.train_rows);
  }
}

TEST_CASE("time-ordered split takes a prefix") {
  const auto d = make(10, 3);
  const auto s = split(d, SplitSpec{0.5, 0, false, true});
  CHECK(s.train_rows == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(s.test.rows.size() == 7);
}

TEST_CASE("stratified split needs both classes") {
  const auto d = make(10, 0);
  try {
    split(d, SplitSpec{});
    FAIL("expected ClassTooSmall");
  } catch (const DatasetError& e) {
    CHECK(e.kind() == DatasetErrorKind::ClassTooSmall);
  }
  CHECK_NOTHROW(split(d, SplitSpec{0.8, 0, false, false}));
}

TEST_CASE("composition statistics") {
  Dataset d = make(94, 0);
  for (int i = 0; i < 6; ++i) {
    LabeledFlow r;
    r.label = Label::Attack;
    r.attack_kind = i < 4 ? attacks::AttackKind::CoilReadExploit : attacks::AttackKind::PortScan;
    d.rows.push_back(r);
  }
  const auto c = stats(d);
  CHECK(c.total == 100);
  CHECK(c.normal_pct == doctest::Approx(94.0));
  CHECK(c.attack_pct == doctest::Approx(6.0));
  CHECK(c.per_kind.at(attacks::AttackKind::CoilReadExploit) == 4);
  CHECK(c.per_kind.at(attacks::AttackKind::DeviceId) == 0);
  CHECK(c.per_kind_pct.at(attacks::AttackKind::PortScan) == doctest::Approx(2.0));
  CHECK(c.percentages_defined);
  CHECK(composition_from_json(to_json(c)) == c);

  const auto empty = stats(Dataset{});
  CHECK_FALSE(empty.percentages_defined);
  CHECK(empty.total == 0);
}
