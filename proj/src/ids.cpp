#include "scadatb/ids.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace scadatb::ids {

namespace {

constexpr std::size_t idx(Label l) { return l == Label::Attack ? 1 : 0; }

Label majority(std::size_t normal, std::size_t attack) { return attack >= normal ? Label::Attack : Label::Normal; }

// Weighted Gini impurity n * (1 - p_a^2 - p_b^2) = n - (a^2 + b^2) / n.
double weighted_gini(double a, double b) {
  const double n = a + b;
  return n == 0.0 ? 0.0 : n - (a * a + b * b) / n;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = 0.0;
};

void best_split_on(const std::vector<Row>& x, const std::vector<Label>& y, const std::vector<std::size_t>& sample,
                   std::size_t f, std::vector<std::pair<double, std::uint8_t>>& scratch, SplitChoice& best) {
  scratch.clear();
  std::size_t total_attack = 0;
  for (auto i : sample) {
    scratch.emplace_back(x[i][f], static_cast<std::uint8_t>(idx(y[i])));
    total_attack += idx(y[i]);
  }
  std::sort(scratch.begin(), scratch.end());
  const std::size_t n = scratch.size();
  const std::size_t total_normal = n - total_attack;
  std::size_t left_attack = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    left_attack += scratch[i].second;
    const double lo = scratch[i].first;
    const double hi = scratch[i + 1].first;
    if (!(lo < hi)) continue;
    const std::size_t left_n = i + 1;
    const double impurity =
        weighted_gini(static_cast<double>(left_n - left_attack), static_cast<double>(left_attack)) +
        weighted_gini(static_cast<double>(total_normal - (left_n - left_attack)),
                      static_cast<double>(total_attack - left_attack));
    if (best.feature < 0 || impurity < best.impurity) {
      double threshold = lo + (hi - lo) / 2.0;
      if (!(threshold < hi)) threshold = lo;
      best = SplitChoice{static_cast<int>(f), threshold, impurity};
    }
  }
}

void require_finite(const Matrix& data) {
  for (std::size_t r = 0; r < data.x.size(); ++r) {
    for (double v : data.x[r]) {
      if (!std::isfinite(v)) {
        throw IdsError(IdsErrorKind::NonFiniteFeature, fmt::format("training row {} has a non-finite feature", r));
      }
    }
  }
}

}  // namespace

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::LogisticRegression: return "LogisticRegression";
    case Algorithm::RandomForest: return "RandomForest";
    case Algorithm::DecisionTree: return "DecisionTree";
    case Algorithm::NaiveBayes: return "NaiveBayes";
    case Algorithm::KNN: return "KNN";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view text) {
  for (auto a : kAllAlgorithms) {
    if (text == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown algorithm: " + std::string(text));
}

void to_json(nlohmann::json& j, const Hyperparameters& h) {
  j = nlohmann::json{{"trees", h.trees},
                     {"max_features", h.max_features},
                     {"max_depth", h.max_depth},
                     {"min_samples_split", h.min_samples_split},
                     {"learning_rate", h.learning_rate},
                     {"epochs", h.epochs},
                     {"var_smoothing", h.var_smoothing},
                     {"k", h.k}};
}

void from_json(const nlohmann::json& j, Hyperparameters& h) {
  const Hyperparameters d;
  h.trees = j.value("trees", d.trees);
  h.max_features = j.value("max_features", d.max_features);
  h.max_depth = j.value("max_depth", d.max_depth);
  h.min_samples_split = j.value("min_samples_split", d.min_samples_split);
  h.learning_rate = j.value("learning_rate", d.learning_rate);
  h.epochs = j.value("epochs", d.epochs);
  h.var_smoothing = j.value("var_smoothing", d.var_smoothing);
  h.k = j.value("k", d.k);
}

// Scaler ---------------------------------------------------------------------------

Scaler Scaler::fit(const std::vector<Row>& x) {
  Scaler s;
  if (x.empty()) return s;
  const std::size_t d = x.front().size();
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  const double n = static_cast<double>(x.size());
  for (const auto& r : x) {
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += r[i];
  }
  for (auto& m : s.mean) m /= n;
  for (const auto& r : x) {
    for (std::size_t i = 0; i < d; ++i) s.stddev[i] += (r[i] - s.mean[i]) * (r[i] - s.mean[i]);
  }
  for (auto& v : s.stddev) {
    v = std::sqrt(v / n);
    if (v == 0.0) v = 1.0;
  }
  return s;
}

Row Scaler::transform(std::span<const double> row) const {
  Row out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean[i]) / stddev[i];
  return out;
}

// Decision tree ----------------------------------------------------------------------

DecisionTree DecisionTree::fit(const std::vector<Row>& x, const std::vector<Label>& y, const Options& options,
                               std::uint64_t seed) {
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), 0);
  return fit(x, y, std::move(all), options, seed);
}

DecisionTree DecisionTree::fit(const std::vector<Row>& x, const std::vector<Label>& y,
                               std::vector<std::size_t> sample, const Options& options, std::uint64_t seed) {
  DecisionTree tree;
  if (x.empty() || sample.empty()) {
    tree.nodes_.push_back(Node{});
    return tree;
  }
  const std::size_t d = x.front().size();
  const std::size_t m = options.max_features == 0 ? d : std::min(options.max_features, d);
  Rng rng(seed);
  std::vector<std::pair<double, std::uint8_t>> scratch;
  std::vector<std::size_t> features(d);

  struct Work {
    std::size_t node;
    std::vector<std::size_t> sample;
    std::size_t depth;
  };
  std::vector<Work> stack;
  tree.nodes_.push_back(Node{});
  stack.push_back(Work{0, std::move(sample), 0});

  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    std::size_t attack = 0;
    for (auto i : w.sample) attack += idx(y[i]);
    const std::size_t normal = w.sample.size() - attack;
    tree.nodes_[w.node].leaf = majority(normal, attack);

    if (attack == 0 || normal == 0) continue;
    if (w.sample.size() < options.min_samples_split) continue;
    if (options.max_depth != 0 && w.depth >= options.max_depth) continue;

    SplitChoice best;
    if (m == d) {
      for (std::size_t f = 0; f < d; ++f) best_split_on(x, y, w.sample, f, scratch, best);
    } else {
      std::iota(features.begin(), features.end(), 0);
      for (std::size_t i = 0; i < m; ++i) std::swap(features[i], features[rng.uniform_int(i, d - 1)]);
      std::sort(features.begin(), features.begin() + static_cast<std::ptrdiff_t>(m));
      for (std::size_t i = 0; i < m; ++i) best_split_on(x, y, w.sample, features[i], scratch, best);
      if (best.feature < 0) {
        std::sort(features.begin() + static_cast<std::ptrdiff_t>(m), features.end());
        for (std::size_t i = m; i < d; ++i) best_split_on(x, y, w.sample, features[i], scratch, best);
      }
    }
    if (best.feature < 0) continue;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto i : w.sample) {
      (x[i][static_cast<std::size_t>(best.feature)] <= best.threshold ? left : right).push_back(i);
    }
    const auto l = static_cast<std::int32_t>(tree.nodes_.size());
    tree.nodes_.push_back(Node{});
    tree.nodes_.push_back(Node{});
    Node& node = tree.nodes_[w.node];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = l + 1;
    stack.push_back(Work{static_cast<std::size_t>(l + 1), std::move(right), w.depth + 1});
    stack.push_back(Work{static_cast<std::size_t>(l), std::move(left), w.depth + 1});
  }
  return tree;
}

Label DecisionTree::predict(std::span<const double> row) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const Node& n = nodes_[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes_[i].leaf;
}

std::size_t DecisionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, dpt] = stack.back();
    stack.pop_back();
    best = std::max(best, dpt);
    if (nodes_[i].feature >= 0) {
      stack.emplace_back(static_cast<std::size_t>(nodes_[i].left), dpt + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes_[i].right), dpt + 1);
    }
  }
  return best;
}

DecisionTree DecisionTree::from_nodes(std::vector<Node> nodes) {
  if (nodes.empty()) throw IdsError(IdsErrorKind::ModelFormat, "tree without nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.feature < 0) continue;
    auto valid = [&](std::int32_t c) { return c > static_cast<std::int32_t>(i) && c < static_cast<std::int32_t>(nodes.size()); };
    if (!valid(n.left) || !valid(n.right)) throw IdsError(IdsErrorKind::ModelFormat, "tree child index out of range");
  }
  DecisionTree t;
  t.nodes_ = std::move(nodes);
  return t;
}

// Random forest ----------------------------------------------------------------------

RandomForest RandomForest::fit(const std::vector<Row>& x, const std::vector<Label>& y, const Hyperparameters& h,
                               std::uint64_t seed) {
  RandomForest forest;
  const std::size_t d = x.empty() ? 0 : x.front().size();
  DecisionTree::Options options;
  options.max_depth = h.max_depth;
  options.min_samples_split = h.min_samples_split;
  options.max_features =
      h.max_features != 0 ? h.max_features : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
  const std::size_t n = x.size();
  for (std::size_t t = 0; t < h.trees; ++t) {
    Rng rng(derive_seed(seed, "bootstrap", t));
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = rng.uniform_int(0, n - 1);
    forest.trees_.push_back(DecisionTree::fit(x, y, std::move(sample), options, derive_seed(seed, "tree", t)));
  }
  return forest;
}

std::size_t RandomForest::attack_votes(std::span<const double> row) const {
  std::size_t votes = 0;
  for (const auto& t : trees_) votes += t.predict(row) == Label::Attack ? 1 : 0;
  return votes;
}

Label RandomForest::predict(std::span<const double> row) const {
  return 2 * attack_votes(row) >= trees_.size() ? Label::Attack : Label::Normal;
}

RandomForest RandomForest::from_trees(std::vector<DecisionTree> trees) {
  RandomForest f;
  f.trees_ = std::move(trees);
  return f;
}

// Logistic regression ----------------------------------------------------------------

double LogisticRegression::loss(const std::vector<Row>& x, const std::vector<Label>& y, std::span<const double> w,
                                double b) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = dot(w, x[i]) + b;
    total += softplus(z) - (y[i] == Label::Attack ? z : 0.0);
  }
  return x.empty() ? 0.0 : total / static_cast<double>(x.size());
}

std::vector<double> LogisticRegression::gradient(const std::vector<Row>& x, const std::vector<Label>& y,
                                                 std::span<const double> w, double b) {
  std::vector<double> g(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = sigmoid(dot(w, x[i]) + b) - (y[i] == Label::Attack ? 1.0 : 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += r * x[i][j];
    g[w.size()] += r;
  }
  if (!x.empty()) {
    for (auto& v : g) v /= static_cast<double>(x.size());
  }
  return g;
}

LogisticRegression LogisticRegression::fit(const std::vector<Row>& x, const std::vector<Label>& y,
                                           const Hyperparameters& h, std::vector<double>* loss_history) {
  LogisticRegression lr;
  const std::size_t d = x.empty() ? 0 : x.front().size();
  lr.weights.assign(d, 0.0);
  for (std::size_t epoch = 0; epoch < h.epochs; ++epoch) {
    if (loss_history) loss_history->push_back(loss(x, y, lr.weights, lr.bias));
    const auto g = gradient(x, y, lr.weights, lr.bias);
    for (std::size_t j = 0; j < d; ++j) lr.weights[j] -= h.learning_rate * g[j];
    lr.bias -= h.learning_rate * g[d];
  }
  if (loss_history) loss_history->push_back(loss(x, y, lr.weights, lr.bias));
  return lr;
}

double LogisticRegression::probability(std::span<const double> row) const { return sigmoid(dot(weights, row) + bias); }

Label LogisticRegression::predict(std::span<const double> row) const {
  return probability(row) >= 0.5 ? Label::Attack : Label::Normal;
}

// Naive Bayes ------------------------------------------------------------------------

NaiveBayes NaiveBayes::fit(const std::vector<Row>& x, const std::vector<Label>& y, const Hyperparameters& h) {
  NaiveBayes nb;
  const std::size_t d = x.empty() ? 0 : x.front().size();
  const Scaler all = Scaler::fit(x);
  double max_var = 0.0;
  {
    std::vector<double> var(d, 0.0);
    for (const auto& r : x) {
      for (std::size_t i = 0; i < d; ++i) var[i] += (r[i] - all.mean[i]) * (r[i] - all.mean[i]);
    }
    for (auto v : var) max_var = std::max(max_var, v / static_cast<double>(x.size()));
  }
  nb.epsilon = max_var > 0.0 ? h.var_smoothing * max_var : h.var_smoothing;

  for (std::size_t c = 0; c < 2; ++c) {
    auto& cs = nb.classes[c];
    cs.mean.assign(d, 0.0);
    cs.var.assign(d, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (idx(y[i]) != c) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) cs.mean[j] += x[i][j];
    }
    if (count == 0) continue;
    for (auto& m : cs.mean) m /= static_cast<double>(count);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (idx(y[i]) != c) continue;
      for (std::size_t j = 0; j < d; ++j) cs.var[j] += (x[i][j] - cs.mean[j]) * (x[i][j] - cs.mean[j]);
    }
    for (auto& v : cs.var) v = v / static_cast<double>(count) + nb.epsilon;
    cs.log_prior = std::log(static_cast<double>(count) / static_cast<double>(x.size()));
  }
  return nb;
}

std::array<double, 2> NaiveBayes::joint_log_likelihood(std::span<const double> row) const {
  constexpr double kLog2Pi = 1.8378770664093454836;
  std::array<double, 2> out{};
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& cs = classes[c];
    double s = cs.log_prior;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double diff = row[j] - cs.mean[j];
      s -= 0.5 * (kLog2Pi + std::log(cs.var[j])) + diff * diff / (2.0 * cs.var[j]);
    }
    out[c] = s;
  }
  return out;
}

std::array<double, 2> NaiveBayes::posterior(std::span<const double> row) const {
  const auto j = joint_log_likelihood(row);
  const double m = std::max(j[0], j[1]);
  const double z = m + std::log(std::exp(j[0] - m) + std::exp(j[1] - m));
  return {std::exp(j[0] - z), std::exp(j[1] - z)};
}

Label NaiveBayes::predict(std::span<const double> row) const {
  const auto j = joint_log_likelihood(row);
  return j[1] >= j[0] ? Label::Attack : Label::Normal;
}

// KNN --------------------------------------------------------------------------------

std::vector<std::size_t> Knn::neighbors(std::span<const double> row) const {
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;
  const std::size_t kk = std::min(k, points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double diff = row[j] - points[i][j];
      d2 += diff * diff;
    }
    const Entry e{d2, i};
    if (heap.size() < kk) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  }
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

Label Knn::predict(std::span<const double> row) const {
  const auto nn = neighbors(row);
  std::size_t attack = 0;
  for (auto i : nn) attack += idx(labels[i]);
  return majority(nn.size() - attack, attack);
}

// Model ------------------------------------------------------------------------------

Label TrainedModel::predict(std::span<const double> row) const {
  if (scaler) {
    const Row z = scaler->transform(row);
    return std::visit([&](const auto& p) { return p.predict(z); }, parameters);
  }
  return std::visit([&](const auto& p) { return p.predict(row); }, parameters);
}

Label TrainedModel::predict(const flows::FeatureVector& v) const {
  const auto a = v.as_array();
  return predict(std::span<const double>(a));
}

Matrix to_matrix(const dataset::Dataset& d) {
  Matrix m;
  m.x.reserve(d.rows.size());
  m.y.reserve(d.rows.size());
  for (const auto& r : d.rows) {
    const auto a = r.features.as_array();
    m.x.emplace_back(a.begin(), a.end());
    m.y.push_back(r.label);
  }
  return m;
}

TrainedModel train(Algorithm algorithm, const Matrix& data, const Hyperparameters& h, std::uint64_t seed) {
  if (data.x.empty()) throw IdsError(IdsErrorKind::EmptyTrainingSet, "training set is empty");
  if (data.x.size() != data.y.size()) throw std::invalid_argument("feature and label counts differ");
  require_finite(data);
  const auto attack = static_cast<std::size_t>(std::count(data.y.begin(), data.y.end(), Label::Attack));
  if (attack == 0 || attack == data.y.size()) {
    throw IdsError(IdsErrorKind::SingleClassTrainingSet, "training set must contain both normal and attack rows");
  }

  TrainedModel model;
  model.algorithm = algorithm;
  model.hyperparameters = h;
  model.seed = seed;
  model.features = data.x.front().size();
  model.training_rows = data.x.size();

  switch (algorithm) {
    case Algorithm::DecisionTree: {
      DecisionTree::Options o;
      o.max_depth = h.max_depth;
      o.min_samples_split = h.min_samples_split;
      model.parameters = DecisionTree::fit(data.x, data.y, o, seed);
      break;
    }
    case Algorithm::RandomForest:
      if (h.trees == 0) throw std::invalid_argument("RandomForest needs at least one tree");
      model.parameters = RandomForest::fit(data.x, data.y, h, seed);
      break;
    case Algorithm::NaiveBayes: model.parameters = NaiveBayes::fit(data.x, data.y, h); break;
    case Algorithm::LogisticRegression:
    case Algorithm::KNN: {
      Scaler s = Scaler::fit(data.x);
      std::vector<Row> z;
      z.reserve(data.x.size());
      for (const auto& r : data.x) z.push_back(s.transform(r));
      if (algorithm == Algorithm::LogisticRegression) {
        model.parameters = LogisticRegression::fit(z, data.y, h);
      } else {
        if (h.k == 0) throw std::invalid_argument("KNN needs k >= 1");
        Knn knn;
        knn.k = h.k;
        knn.points = std::move(z);
        knn.labels = data.y;
        model.parameters = std::move(knn);
      }
      model.scaler = std::move(s);
      break;
    }
  }
  return model;
}

TrainedModel train(Algorithm algorithm, const dataset::Dataset& data, const Hyperparameters& h, std::uint64_t seed) {
  TrainedModel m = train(algorithm, to_matrix(data), h, seed);
  m.training_provenance = data.provenance;
  return m;
}

// Metrics ----------------------------------------------------------------------------

void ConfusionMatrix::add(Label actual, Label predicted) {
  if (actual == Label::Attack) {
    ++(predicted == Label::Attack ? tp : fn);
  } else {
    ++(predicted == Label::Attack ? fp : tn);
  }
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  Metrics m;
  const std::uint64_t n = cm.total();
  m.accuracy = n == 0 ? 0.0 : static_cast<double>(cm.tp + cm.tn) * 100.0 / static_cast<double>(n);
  if (cm.fp + cm.tn > 0) m.far = static_cast<double>(cm.fp) * 100.0 / static_cast<double>(cm.fp + cm.tn);
  if (cm.fn + cm.tp > 0) m.und = static_cast<double>(cm.fn) * 100.0 / static_cast<double>(cm.fn + cm.tp);
  return m;
}

Evaluation evaluate(const TrainedModel& model, const dataset::Dataset& test) {
  if (test.rows.empty()) throw IdsError(IdsErrorKind::EmptyTestSet, "test set is empty");
  Evaluation e;
  for (const auto& r : test.rows) e.confusion.add(r.label, model.predict(r.features));
  e.metrics = compute_metrics(e.confusion);
  return e;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
  j = nlohmann::json{{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}};
}

void from_json(const nlohmann::json& j, ConfusionMatrix& cm) {
  cm.tp = j.at("tp").get<std::uint64_t>();
  cm.tn = j.at("tn").get<std::uint64_t>();
  cm.fp = j.at("fp").get<std::uint64_t>();
  cm.fn = j.at("fn").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"accuracy", m.accuracy}, {"far", nullptr}, {"und", nullptr}};
  if (m.far) j["far"] = *m.far;
  if (m.und) j["und"] = *m.und;
}

void from_json(const nlohmann::json& j, Metrics& m) {
  m.accuracy = j.at("accuracy").get<double>();
  m.far = j.at("far").is_null() ? std::nullopt : std::optional<double>(j.at("far").get<double>());
  m.und = j.at("und").is_null() ? std::nullopt : std::optional<double>(j.at("und").get<double>());
}

// Serialization ----------------------------------------------------------------------

namespace {

nlohmann::json tree_json(const DecisionTree& t) {
  auto nodes = nlohmann::json::array();
  for (const auto& n : t.nodes()) {
    if (n.feature < 0) {
      nodes.push_back(nlohmann::json::array({-1, n.leaf == Label::Attack ? 1 : 0}));
    } else {
      nodes.push_back(nlohmann::json::array({n.feature, n.threshold, n.left, n.right, n.leaf == Label::Attack ? 1 : 0}));
    }
  }
  return nodes;
}

DecisionTree tree_from_json(const nlohmann::json& j) {
  std::vector<DecisionTree::Node> nodes;
  for (const auto& a : j) {
    DecisionTree::Node n;
    n.feature = a.at(0).get<int>();
    if (n.feature < 0) {
      n.leaf = a.at(1).get<int>() ? Label::Attack : Label::Normal;
    } else {
      n.threshold = a.at(1).get<double>();
      n.left = a.at(2).get<std::int32_t>();
      n.right = a.at(3).get<std::int32_t>();
      n.leaf = a.at(4).get<int>() ? Label::Attack : Label::Normal;
    }
    nodes.push_back(n);
  }
  return DecisionTree::from_nodes(std::move(nodes));
}

std::vector<int> labels_json(const std::vector<Label>& labels) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(l == Label::Attack ? 1 : 0);
  return out;
}

}  // namespace

nlohmann::json model_to_json(const TrainedModel& m) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["algorithm"] = to_string(m.algorithm);
  j["hyperparameters"] = m.hyperparameters;
  j["seed"] = m.seed;
  j["features"] = m.features;
  j["training_rows"] = m.training_rows;
  j["training_provenance"] = m.training_provenance;
  if (m.scaler) {
    j["scaler"] = {{"mean", m.scaler->mean}, {"stddev", m.scaler->stddev}};
  } else {
    j["scaler"] = nullptr;
  }
  nlohmann::json p;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DecisionTree>) {
          p["nodes"] = tree_json(v);
        } else if constexpr (std::is_same_v<T, RandomForest>) {
          p["trees"] = nlohmann::json::array();
          for (const auto& t : v.trees()) p["trees"].push_back(tree_json(t));
        } else if constexpr (std::is_same_v<T, LogisticRegression>) {
          p["weights"] = v.weights;
          p["bias"] = v.bias;
        } else if constexpr (std::is_same_v<T, NaiveBayes>) {
          p["epsilon"] = v.epsilon;
          p["classes"] = nlohmann::json::array();
          for (const auto& c : v.classes) {
            p["classes"].push_back({{"log_prior", c.log_prior}, {"mean", c.mean}, {"var", c.var}});
          }
        } else {
          p["k"] = v.k;
          p["points"] = v.points;
          p["labels"] = labels_json(v.labels);
        }
      },
      m.parameters);
  j["parameters"] = std::move(p);
  return j;
}

TrainedModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw IdsError(IdsErrorKind::ModelFormat, "unsupported model format " + j.at("format").get<std::string>());
    }
    TrainedModel m;
    m.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    m.hyperparameters = j.at("hyperparameters").get<Hyperparameters>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.features = j.at("features").get<std::size_t>();
    m.training_rows = j.at("training_rows").get<std::size_t>();
    m.training_provenance = j.value("training_provenance", std::string());
    if (!j.at("scaler").is_null()) {
      m.scaler = Scaler{j["scaler"].at("mean").get<std::vector<double>>(),
                        j["scaler"].at("stddev").get<std::vector<double>>()};
    }
    const auto& p = j.at("parameters");
    switch (m.algorithm) {
      case Algorithm::DecisionTree: m.parameters = tree_from_json(p.at("nodes")); break;
      case Algorithm::RandomForest: {
        std::vector<DecisionTree> trees;
        for (const auto& t : p.at("trees")) trees.push_back(tree_from_json(t));
        m.parameters = RandomForest::from_trees(std::move(trees));
        break;
      }
      case Algorithm::LogisticRegression: {
        LogisticRegression lr;
        lr.weights = p.at("weights").get<std::vector<double>>();
        lr.bias = p.at("bias").get<double>();
        m.parameters = std::move(lr);
        break;
      }
      case Algorithm::NaiveBayes: {
        NaiveBayes nb;
        nb.epsilon = p.at("epsilon").get<double>();
        for (std::size_t c = 0; c < 2; ++c) {
          const auto& cj = p.at("classes").at(c);
          nb.classes[c].log_prior = cj.at("log_prior").get<double>();
          nb.classes[c].mean = cj.at("mean").get<std::vector<double>>();
          nb.classes[c].var = cj.at("var").get<std::vector<double>>();
        }
        m.parameters = std::move(nb);
        break;
      }
      case Algorithm::KNN: {
        Knn knn;
        knn.k = p.at("k").get<std::size_t>();
        knn.points = p.at("points").get<std::vector<Row>>();
        for (int l : p.at("labels").get<std::vector<int>>()) knn.labels.push_back(l ? Label::Attack : Label::Normal);
        if (knn.points.size() != knn.labels.size()) throw IdsError(IdsErrorKind::ModelFormat, "KNN point/label mismatch");
        m.parameters = std::move(knn);
        break;
      }
    }
    const bool wants_scaler = m.algorithm == Algorithm::LogisticRegression || m.algorithm == Algorithm::KNN;
    if (wants_scaler != m.scaler.has_value()) throw IdsError(IdsErrorKind::ModelFormat, "scaler presence mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IdsError(IdsErrorKind::ModelFormat, std::string("malformed model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IdsError(IdsErrorKind::ModelFormat, std::string("malformed model: ") + e.what());
  }
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IdsError(IdsErrorKind::ModelFormat, std::string("malformed model file: ") + e.what());
  }
  return model_from_json(j);
}

// Alerts -----------------------------------------------------------------------------

nlohmann::json to_json(const Alert& a) {
  const auto& v = a.features;
  nlohmann::ordered_json j;
  j["id"] = a.id;
  j["ts"] = a.timestamp;
  j["model"] = to_string(a.model);
  j["src"] = net::to_string(a.five_tuple.src);
  j["dst"] = net::to_string(a.five_tuple.dst);
  j["features"] = {{"TotPkts", v.tot_pkts}, {"TotBytes", v.tot_bytes}, {"SrcPkts", v.src_pkts},
                   {"DstPkts", v.dst_pkts}, {"SrcBytes", v.src_bytes}, {"Sport", v.sport}};
  j["truth"] = a.truth ? nlohmann::ordered_json(attacks::to_string(*a.truth)) : nlohmann::ordered_json(nullptr);
  return nlohmann::json::parse(j.dump());
}

Alert alert_from_json(const nlohmann::json& j) {
  Alert a;
  a.id = j.at("id").get<std::uint64_t>();
  a.timestamp = j.at("ts").get<double>();
  a.model = parse_algorithm(j.at("model").get<std::string>());
  a.five_tuple.src = net::parse_endpoint(j.at("src").get<std::string>());
  a.five_tuple.dst = net::parse_endpoint(j.at("dst").get<std::string>());
  const auto& f = j.at("features");
  a.features.tot_pkts = f.at("TotPkts").get<std::uint64_t>();
  a.features.tot_bytes = f.at("TotBytes").get<std::uint64_t>();
  a.features.src_pkts = f.at("SrcPkts").get<std::uint64_t>();
  a.features.dst_pkts = f.at("DstPkts").get<std::uint64_t>();
  a.features.src_bytes = f.at("SrcBytes").get<std::uint64_t>();
  a.features.sport = f.at("Sport").get<std::uint16_t>();
  if (!j.at("truth").is_null()) a.truth = attacks::parse_attack_kind(j["truth"].get<std::string>());
  return a;
}

std::string to_ndjson(const std::vector<Alert>& alerts) {
  std::string out;
  for (const auto& a : alerts) {
    out += to_json(a).dump();
    out += '\n';
  }
  return out;
}

std::optional<Alert> OnlineDetector::classify(const flows::FeatureVector& v, const flows::FiveTuple& tuple,
                                              const flows::LabeledFlow& truth, Micros at) {
  const Label predicted = model_->predict(v);
  confusion_.add(truth.label, predicted);
  if (predicted != Label::Attack) return std::nullopt;
  Alert a;
  a.id = alerts_.size() + 1;
  a.timestamp = to_seconds(at);
  a.model = model_->algorithm;
  a.features = v;
  a.five_tuple = tuple;
  a.truth = truth.attack_kind;
  alerts_.push_back(a);
  return a;
}

std::optional<Alert> OnlineDetector::observe(const flows::FlowRecord& flow, const flows::LabeledFlow& truth,
                                             Micros closed_at) {
  return classify(flows::featurize(flow), flow.key, truth, closed_at);
}

std::optional<Alert> OnlineDetector::observe(const flows::LabeledFlow& row, Micros at) {
  return classify(row.features, flows::FiveTuple{}, row, at);
}

}  // namespace scadatb::ids
