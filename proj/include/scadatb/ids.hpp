#pragma once

// Flow classifiers, confusion-matrix metrics and the online detector.
// Every model works on plain d-dimensional double rows so the same code
// serves the six flow features and the small hand-built fixtures in tests.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "scadatb/dataset.hpp"
#include "scadatb/flows.hpp"

namespace scadatb::ids {

using flows::Label;
using Row = std::vector<double>;

enum class Algorithm { LogisticRegression, RandomForest, DecisionTree, NaiveBayes, KNN };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::LogisticRegression, Algorithm::RandomForest,
                                               Algorithm::DecisionTree, Algorithm::NaiveBayes, Algorithm::KNN};

const char* to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view text);

enum class IdsErrorKind { SingleClassTrainingSet, NonFiniteFeature, EmptyTestSet, EmptyTrainingSet, ModelFormat };

class IdsError : public std::runtime_error {
 public:
  IdsError(IdsErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IdsErrorKind kind() const noexcept { return kind_; }

 private:
  IdsErrorKind kind_;
};

struct Hyperparameters {
  std::size_t trees = 100;
  std::size_t max_features = 0;  // per-split feature subsample; 0 = ceil(sqrt(d))
  std::size_t max_depth = 0;     // 0 = unlimited
  std::size_t min_samples_split = 2;
  double learning_rate = 0.1;
  std::size_t epochs = 500;
  double var_smoothing = 1e-9;
  std::size_t k = 5;
  bool operator==(const Hyperparameters&) const = default;
};

void to_json(nlohmann::json& j, const Hyperparameters& h);
void from_json(const nlohmann::json& j, Hyperparameters& h);

// Standardization with population stddev; constant features get stddev 1.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Scaler fit(const std::vector<Row>& x);
  Row transform(std::span<const double> row) const;
  bool operator==(const Scaler&) const = default;
};

// CART, Gini impurity. Splits send x <= threshold left; thresholds are
// midpoints between consecutive distinct values. Equal gains keep the lowest
// feature index and then the lowest threshold.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    Label leaf = Label::Normal;
    bool operator==(const Node&) const = default;
  };

  struct Options {
    std::size_t max_depth = 0;
    std::size_t min_samples_split = 2;
    std::size_t max_features = 0;  // 0 = consider every feature
  };

  static DecisionTree fit(const std::vector<Row>& x, const std::vector<Label>& y, const Options& options,
                          std::uint64_t seed = 0);
  // Fit on a multiset of row indices (bootstrap samples repeat indices).
  static DecisionTree fit(const std::vector<Row>& x, const std::vector<Label>& y, std::vector<std::size_t> sample,
                          const Options& options, std::uint64_t seed);

  Label predict(std::span<const double> row) const;
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t depth() const;
  static DecisionTree from_nodes(std::vector<Node> nodes);
  bool operator==(const DecisionTree&) const = default;

 private:
  std::vector<Node> nodes_;
};

class RandomForest {
 public:
  static RandomForest fit(const std::vector<Row>& x, const std::vector<Label>& y, const Hyperparameters& h,
                          std::uint64_t seed);
  // Hard majority vote; an even split goes to Attack.
  Label predict(std::span<const double> row) const;
  std::size_t attack_votes(std::span<const double> row) const;
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
  static RandomForest from_trees(std::vector<DecisionTree> trees);
  bool operator==(const RandomForest&) const = default;

 private:
  std::vector<DecisionTree> trees_;
};

// Binary cross-entropy, full-batch gradient descent, zero initialisation.
// Operates on rows already standardized by the model's scaler.
class LogisticRegression {
 public:
  std::vector<double> weights;
  double bias = 0.0;

  static LogisticRegression fit(const std::vector<Row>& x, const std::vector<Label>& y, const Hyperparameters& h,
                                std::vector<double>* loss_history = nullptr);

  double probability(std::span<const double> row) const;
  Label predict(std::span<const double> row) const;

  // Mean loss and its gradient (weights..., bias) at the given parameters.
  static double loss(const std::vector<Row>& x, const std::vector<Label>& y, std::span<const double> w, double b);
  static std::vector<double> gradient(const std::vector<Row>& x, const std::vector<Label>& y,
                                      std::span<const double> w, double b);
  bool operator==(const LogisticRegression&) const = default;
};

class NaiveBayes {
 public:
  struct ClassStats {
    double log_prior = 0.0;
    std::vector<double> mean;
    std::vector<double> var;  // smoothed
    bool operator==(const ClassStats&) const = default;
  };
  // Indexed by Label (Normal = 0, Attack = 1).
  std::array<ClassStats, 2> classes;
  double epsilon = 0.0;

  static NaiveBayes fit(const std::vector<Row>& x, const std::vector<Label>& y, const Hyperparameters& h);

  // log P(c) + sum_i log N(x_i; mean, var), per class.
  std::array<double, 2> joint_log_likelihood(std::span<const double> row) const;
  // Normalized posteriors P(Normal|x), P(Attack|x).
  std::array<double, 2> posterior(std::span<const double> row) const;
  Label predict(std::span<const double> row) const;
  bool operator==(const NaiveBayes&) const = default;
};

class Knn {
 public:
  std::size_t k = 5;
  std::vector<Row> points;  // standardized
  std::vector<Label> labels;

  // Indices of the k nearest points, nearest first; equal distances prefer the
  // lower index.
  std::vector<std::size_t> neighbors(std::span<const double> row) const;
  Label predict(std::span<const double> row) const;
  bool operator==(const Knn&) const = default;
};

using Parameters = std::variant<LogisticRegression, RandomForest, DecisionTree, NaiveBayes, Knn>;

struct TrainedModel {
  Algorithm algorithm = Algorithm::DecisionTree;
  Hyperparameters hyperparameters;
  std::uint64_t seed = 0;
  std::size_t features = flows::kFeatureCount;
  std::size_t training_rows = 0;
  std::string training_provenance;
  std::optional<Scaler> scaler;  // LogisticRegression and KNN only
  Parameters parameters;

  Label predict(std::span<const double> row) const;
  Label predict(const flows::FeatureVector& v) const;
  bool operator==(const TrainedModel&) const = default;
};

struct Matrix {
  std::vector<Row> x;
  std::vector<Label> y;
};

Matrix to_matrix(const dataset::Dataset& d);

TrainedModel train(Algorithm algorithm, const Matrix& data, const Hyperparameters& h = {}, std::uint64_t seed = 0);
TrainedModel train(Algorithm algorithm, const dataset::Dataset& data, const Hyperparameters& h = {},
                   std::uint64_t seed = 0);

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  void add(Label actual, Label predicted);
  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

// Percentages; far/und are empty when their denominator is zero.
struct Metrics {
  double accuracy = 0.0;
  std::optional<double> far;
  std::optional<double> und;
  bool operator==(const Metrics&) const = default;
};

Metrics compute_metrics(const ConfusionMatrix& cm);

struct Evaluation {
  ConfusionMatrix confusion;
  Metrics metrics;
  bool operator==(const Evaluation&) const = default;
};

Evaluation evaluate(const TrainedModel& model, const dataset::Dataset& test);

void to_json(nlohmann::json& j, const ConfusionMatrix& cm);
void from_json(const nlohmann::json& j, ConfusionMatrix& cm);
void to_json(nlohmann::json& j, const Metrics& m);
void from_json(const nlohmann::json& j, Metrics& m);

inline constexpr const char* kModelFormat = "scadatb-model/1";

nlohmann::json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

struct Alert {
  std::uint64_t id = 0;
  double timestamp = 0.0;  // virtual seconds at flow closure
  Algorithm model = Algorithm::DecisionTree;
  flows::FeatureVector features;
  flows::FiveTuple five_tuple;
  std::optional<attacks::AttackKind> truth;  // ground truth, for display only
  bool operator==(const Alert&) const = default;
};

nlohmann::json to_json(const Alert& a);
Alert alert_from_json(const nlohmann::json& j);
std::string to_ndjson(const std::vector<Alert>& alerts);

// Classifies closed flows one at a time. Labels only feed the running
// confusion matrix.
class OnlineDetector {
 public:
  explicit OnlineDetector(const TrainedModel& model) : model_(&model) {}

  std::optional<Alert> observe(const flows::FlowRecord& flow, const flows::LabeledFlow& truth, Micros closed_at);
  std::optional<Alert> observe(const flows::LabeledFlow& row, Micros at = 0);

  const ConfusionMatrix& confusion() const noexcept { return confusion_; }
  Metrics metrics() const { return compute_metrics(confusion_); }
  const std::vector<Alert>& alerts() const noexcept { return alerts_; }
  std::uint64_t observed() const noexcept { return confusion_.total(); }

 private:
  std::optional<Alert> classify(const flows::FeatureVector& v, const flows::FiveTuple& tuple,
                                const flows::LabeledFlow& truth, Micros at);

  const TrainedModel* model_;
  ConfusionMatrix confusion_;
  std::vector<Alert> alerts_;
};

}  // namespace scadatb::ids
