#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "scadatb/dataset.hpp"
#include "scadatb/ids.hpp"
#include "scadatb/scenario.hpp"
#include "scadatb/session.hpp"

namespace fs = std::filesystem;
using namespace scadatb;

namespace {

void print_metrics(const std::string& name, const ids::Evaluation& e) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("n/a"); };
  fmt::print("{:<20} acc {:>8.3f}  far {:>8}  und {:>8}  (tp {} tn {} fp {} fn {})\n", name, e.metrics.accuracy,
             opt(e.metrics.far), opt(e.metrics.und), e.confusion.tp, e.confusion.tn, e.confusion.fp, e.confusion.fn);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modbus water-tank testbed: traffic capture, flow datasets and IDS evaluation"};
  app.require_subcommand(1);

  fs::path config_path;
  fs::path out_dir = "out";
  auto* run = app.add_subcommand("run", "full pipeline: capture, dataset, train, offline and online evaluation");
  run->add_option("config", config_path, "scenario JSON")->required()->envname("SCADATB_CONFIG");
  run->add_option("-o,--out", out_dir, "output directory")->envname("SCADATB_OUT");
  std::optional<std::uint64_t> seed_override;
  run->add_option("--seed", seed_override, "override master_seed");
  bool no_tap = false;
  run->add_flag("--no-tap", no_tap, "skip writing tap.ndjson");

  auto* ds_cmd = app.add_subcommand("dataset", "capture and featurize only");
  ds_cmd->add_option("config", config_path, "scenario JSON")->required()->envname("SCADATB_CONFIG");
  ds_cmd->add_option("-o,--out", out_dir, "output directory")->envname("SCADATB_OUT");
  ds_cmd->add_option("--seed", seed_override, "override master_seed");
  ds_cmd->add_flag("--no-tap", no_tap, "skip writing tap.ndjson");

  fs::path train_csv;
  fs::path model_path = "model.json";
  std::string algorithm = "DecisionTree";
  std::uint64_t seed = 0;
  fs::path hyper_path;
  auto* train = app.add_subcommand("train", "train one model on a dataset CSV");
  train->add_option("dataset", train_csv, "training CSV")->required()->check(CLI::ExistingFile);
  train->add_option("-a,--algorithm", algorithm, "LogisticRegression|RandomForest|DecisionTree|NaiveBayes|KNN");
  train->add_option("-m,--model", model_path, "output model file")->envname("SCADATB_MODEL");
  train->add_option("--seed", seed, "training seed");
  train->add_option("--hyperparameters", hyper_path, "JSON file with hyperparameters")->check(CLI::ExistingFile);

  fs::path test_csv;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved model on a dataset CSV");
  evaluate->add_option("model", model_path, "model file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("dataset", test_csv, "test CSV")->required()->check(CLI::ExistingFile);
  bool as_json = false;
  evaluate->add_flag("--json", as_json, "print the evaluation as JSON");

  fs::path report_path;
  auto* report = app.add_subcommand("report", "re-render report.md and chart CSVs from report.json");
  report->add_option("report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--out", out_dir, "output directory (default: next to report.json)");

  SessionOptions serve_opts;
  std::string listen = "127.0.0.1:8080";
  fs::path serve_model;
  fs::path serve_config;
  double tick_ms = 100.0;
  auto* serve = app.add_subcommand("serve", "live session with HTTP/WebSocket API");
  serve->add_option("--listen", listen, "address:port for the API")->envname("SCADATB_LISTEN");
  serve->add_option("--config", serve_config, "scenario JSON (plant, clients, flows)")
      ->envname("SCADATB_CONFIG")
      ->check(CLI::ExistingFile);
  serve->add_option("--model", serve_model, "model deployed for online detection")
      ->envname("SCADATB_MODEL")
      ->check(CLI::ExistingFile);
  serve->add_option("--tick-ms", tick_ms, "wall-clock milliseconds per plant tick")->envname("SCADATB_TICK_MS");
  serve->add_option("--seed", serve_opts.seed, "seed for launched attacks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run || *ds_cmd) {
      auto config = scenario::load_config(config_path);
      if (seed_override) config.master_seed = *seed_override;
      if (no_tap) config.write_tap = false;
      if (*ds_cmd) {
        const auto ds = scenario::build_dataset(config, out_dir);
        const auto st = dataset::stats(ds);
        fmt::print("{}\n", dataset::to_json(st).dump(2));
        fmt::print("wrote {}\n", (out_dir / "dataset.csv").string());
        return 0;
      }
      const auto r = scenario::run_scenario(config, out_dir);
      fmt::print("{}", scenario::render_markdown(r));
      return 0;
    }
    if (*train) {
      ids::Hyperparameters h;
      if (!hyper_path.empty()) {
        std::ifstream in(hyper_path);
        h = nlohmann::json::parse(in).get<ids::Hyperparameters>();
      }
      const auto ds = dataset::read_csv(train_csv);
      const auto model = ids::train(ids::parse_algorithm(algorithm), ds, h, seed);
      ids::save_model(model, model_path);
      fmt::print("trained {} on {} rows -> {}\n", algorithm, ds.rows.size(), model_path.string());
      return 0;
    }
    if (*evaluate) {
      const auto model = ids::load_model(model_path);
      const auto e = ids::evaluate(model, dataset::read_csv(test_csv));
      if (as_json) {
        fmt::print("{}\n", nlohmann::json{{"algorithm", ids::to_string(model.algorithm)},
                                          {"confusion", e.confusion},
                                          {"metrics", e.metrics}}
                               .dump(2));
      } else {
        print_metrics(ids::to_string(model.algorithm), e);
      }
      return 0;
    }
    if (*report) {
      std::ifstream in(report_path);
      const auto r = scenario::report_from_json(nlohmann::json::parse(in));
      const fs::path dir = out_dir == "out" ? report_path.parent_path() : out_dir;
      scenario::render_report(r, dir.empty() ? fs::path(".") : dir);
      fmt::print("{}", scenario::render_markdown(r));
      return 0;
    }
    if (*serve) {
      auto config = serve_config.empty() ? scenario::default_config() : scenario::load_config(serve_config);
      serve_opts.tick_wall = std::chrono::microseconds(static_cast<std::int64_t>(tick_ms * 1000.0));
      if (!serve_model.empty()) serve_opts.model = ids::load_model(serve_model);
      const auto ep = net::parse_endpoint(listen);
      LiveSession session(config, serve_opts);
      ApiServer server(session, net::format_address(ep.address), ep.port);
      session.start();
      server.start();
      fmt::print("serving on http://{}:{}\n", net::format_address(ep.address), server.port());
      std::fflush(stdout);
      server.wait();
      session.stop();
      return 0;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
