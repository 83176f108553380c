#pragma once

// Gradient-boosted decision trees with sparsity-aware splits.
//
// Split finding is exact: every boundary between consecutive distinct
// observed values is a candidate. Records whose split feature is absent are
// routed as a block to whichever side yields the larger gain, and that side is
// stored as the node's default direction. Prediction follows the default
// direction whenever the tested value is absent, so any missingness pattern
// over known features is scoreable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/table.hpp"

namespace elmv {

enum class Objective : std::uint8_t { automatic, softmax_multiclass, binary_logistic_ovr };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::softmax_multiclass: return "softmax_multiclass";
    case Objective::binary_logistic_ovr: return "binary_logistic_ovr";
    default: return "automatic";
  }
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "softmax_multiclass") return Objective::softmax_multiclass;
  if (s == "binary_logistic_ovr") return Objective::binary_logistic_ovr;
  if (s == "automatic") return Objective::automatic;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

struct LearnerParams {
  int num_rounds = 50;
  double learning_rate = 0.3;
  int max_depth = 4;
  int min_leaf_count = 2;
  double lambda = 1.0;
  /// automatic: softmax for up to five classes, one-vs-rest above.
  Objective objective = Objective::automatic;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_rounds < 1) throw std::invalid_argument("num_rounds must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (max_depth < 1) throw std::invalid_argument("max_depth must be positive");
    if (min_leaf_count < 1) throw std::invalid_argument("min_leaf_count must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  }

  friend bool operator==(const LearnerParams&, const LearnerParams&) = default;
};

inline Objective resolve_objective(Objective o, std::size_t num_classes) {
  if (o != Objective::automatic) return o;
  return num_classes <= 5 ? Objective::softmax_multiclass : Objective::binary_logistic_ovr;
}

/// Refusal to train on degenerate input.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat tree node. Leaves have feature == -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double weight = 0.0;  // leaf output (already scaled by the learning rate)
  double gain = 0.0;    // loss reduction of this split
  double cover = 0.0;   // hessian sum reaching the node

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const Cell> x) const {
    int k = 0;
    while (!nodes[k].is_leaf()) {
      const auto& n = nodes[k];
      const Cell& v = x[static_cast<std::size_t>(n.feature)];
      const bool go_left = v ? *v < n.threshold : n.default_left;
      k = go_left ? n.left : n.right;
    }
    return nodes[k].weight;
  }

  /// Leaf reached when every feature is absent.
  int default_leaf() const {
    int k = 0;
    while (!nodes[k].is_leaf()) k = nodes[k].default_left ? nodes[k].left : nodes[k].right;
    return k;
  }

  int depth(int k = 0) const {
    if (nodes[k].is_leaf()) return 0;
    return 1 + std::max(depth(nodes[k].left), depth(nodes[k].right));
  }
};

struct Prediction {
  std::size_t class_index = 0;
  std::string label;
  std::vector<double> scores;  // one per model class, summing to 1
};

class BoostedModel {
 public:
  std::vector<std::string> features;
  std::vector<std::string> classes;
  Objective objective = Objective::softmax_multiclass;
  LearnerParams params;
  std::vector<double> base_margin;         // per class
  std::vector<std::vector<Tree>> trees;    // trees[class][round]
  std::vector<double> train_loss;          // mean loss before round 1, after each round

  std::vector<double> margins(std::span<const Cell> x) const {
    if (x.size() != features.size()) {
      throw std::invalid_argument("record has " + std::to_string(x.size()) +
                                  " values, model expects " + std::to_string(features.size()));
    }
    std::vector<double> m = base_margin;
    for (std::size_t k = 0; k < trees.size(); ++k)
      for (const auto& t : trees[k]) m[k] += t.predict(x);
    return m;
  }

  std::vector<double> scores(std::span<const Cell> x) const {
    auto m = margins(x);
    if (objective == Objective::softmax_multiclass) {
      const double mx = *std::max_element(m.begin(), m.end());
      double z = 0.0;
      for (auto& v : m) z += (v = std::exp(v - mx));
      for (auto& v : m) v /= z;
    } else {
      double z = 0.0;
      for (auto& v : m) z += (v = 1.0 / (1.0 + std::exp(-v)));
      for (auto& v : m) v /= z;
    }
    return m;
  }

  /// Values aligned with `features`; absent entries follow default directions.
  Prediction predict(std::span<const Cell> x) const {
    Prediction p;
    p.scores = scores(x);
    p.class_index = static_cast<std::size_t>(
        std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
    p.label = classes[p.class_index];
    return p;
  }

  /// Record given by feature name; model features not named are absent.
  Prediction predict_named(std::span<const std::string> names, std::span<const Cell> values) const {
    if (names.size() != values.size()) throw std::invalid_argument("names/values length mismatch");
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t j = 0; j < features.size(); ++j) pos.emplace(features[j], j);
    std::vector<Cell> x(features.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
      auto it = pos.find(names[k]);
      if (it == pos.end()) throw std::invalid_argument("unknown feature '" + names[k] + "'");
      x[it->second] = values[k];
    }
    return predict(x);
  }
};

namespace detail {

struct SortedColumn {
  std::vector<std::pair<double, std::uint32_t>> entries;  // (value, row), ascending
};

struct GradPair {
  double g = 0.0;
  double h = 0.0;
};

struct NodeStats {
  double G = 0.0, H = 0.0;
  std::size_t n = 0;
};

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
};

inline constexpr double kMinSplitGain = 1e-10;

inline double score(double G, double H, double lambda) { return G * G / (H + lambda); }

// Grows one regression tree on (g, h) level by level. Each level makes two
// passes over every presorted column, so a level costs O(rows x features).
inline Tree grow_tree(const std::vector<SortedColumn>& columns, std::span<const Cell> x,
                      std::size_t num_features, std::span<const GradPair> gh,
                      const LearnerParams& p) {
  const std::size_t n = gh.size();
  const double lambda = p.lambda;
  const std::size_t min_leaf = static_cast<std::size_t>(p.min_leaf_count);
  Tree tree;
  std::vector<NodeStats> stats(1);
  tree.nodes.emplace_back();
  std::vector<int> node_of(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    stats[0].G += gh[r].g;
    stats[0].H += gh[r].h;
  }
  stats[0].n = n;

  std::vector<int> frontier{0};
  std::vector<char> active;
  std::vector<NodeStats> observed, running;
  std::vector<double> last_value;
  std::vector<char> seen;
  std::vector<SplitCandidate> best;

  for (int depth = 0; depth < p.max_depth && !frontier.empty(); ++depth) {
    const std::size_t num_nodes = tree.nodes.size();
    active.assign(num_nodes, 0);
    for (int id : frontier) active[id] = stats[id].n >= 2 * min_leaf;
    best.assign(num_nodes, SplitCandidate{});

    for (std::size_t f = 0; f < num_features; ++f) {
      const auto& col = columns[f].entries;
      observed.assign(num_nodes, NodeStats{});
      for (const auto& [v, r] : col) {
        const int id = node_of[r];
        if (id < 0 || !active[id]) continue;
        observed[id].G += gh[r].g;
        observed[id].H += gh[r].h;
        ++observed[id].n;
      }
      running.assign(num_nodes, NodeStats{});
      last_value.assign(num_nodes, 0.0);
      seen.assign(num_nodes, 0);
      for (const auto& [v, r] : col) {
        const int id = node_of[r];
        if (id < 0 || !active[id]) continue;
        auto& acc = running[id];
        if (seen[id] && v > last_value[id]) {
          const auto& tot = stats[id];
          const auto& obs = observed[id];
          const double Gm = tot.G - obs.G, Hm = tot.H - obs.H;
          const std::size_t nm = tot.n - obs.n;
          const double GR = obs.G - acc.G, HR = obs.H - acc.H;
          const std::size_t nR = obs.n - acc.n;
          const double parent = score(tot.G, tot.H, lambda);
          // Absent values sent left, then right; left wins ties.
          for (int dir = 0; dir < 2; ++dir) {
            const bool miss_left = dir == 0;
            const double gl = acc.G + (miss_left ? Gm : 0.0), hl = acc.H + (miss_left ? Hm : 0.0);
            const double gr = GR + (miss_left ? 0.0 : Gm), hr = HR + (miss_left ? 0.0 : Hm);
            const std::size_t nl = acc.n + (miss_left ? nm : 0), nr = nR + (miss_left ? 0 : nm);
            if (nl < min_leaf || nr < min_leaf) continue;
            const double gain = 0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - parent);
            auto& b = best[id];
            if (gain > kMinSplitGain && gain > b.gain) {
              b = {gain, static_cast<int>(f), 0.5 * (last_value[id] + v), miss_left};
            }
          }
        }
        acc.G += gh[r].g;
        acc.H += gh[r].h;
        ++acc.n;
        last_value[id] = v;
        seen[id] = 1;
      }
    }

    std::vector<int> next;
    for (int id : frontier) {
      const auto& b = best[id];
      if (b.feature < 0) continue;
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stats.resize(tree.nodes.size());
      auto& node = tree.nodes[id];
      node.feature = b.feature;
      node.threshold = b.threshold;
      node.default_left = b.default_left;
      node.gain = b.gain;
      node.left = l;
      node.right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    if (next.empty()) break;
    for (std::size_t r = 0; r < n; ++r) {
      const int id = node_of[r];
      if (id < 0) continue;
      const auto& node = tree.nodes[id];
      if (node.is_leaf() || node.left < 0) continue;
      const Cell& v = x[r * num_features + static_cast<std::size_t>(node.feature)];
      const bool go_left = v ? *v < node.threshold : node.default_left;
      const int child = go_left ? node.left : node.right;
      node_of[r] = child;
      stats[child].G += gh[r].g;
      stats[child].H += gh[r].h;
      ++stats[child].n;
    }
    frontier = std::move(next);
  }

  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    auto& node = tree.nodes[id];
    node.cover = stats[id].H;
    if (node.is_leaf()) node.weight = -stats[id].G / (stats[id].H + lambda) * p.learning_rate;
  }
  return tree;
}

inline std::vector<SortedColumn> presort(std::span<const Cell> x, std::size_t rows, std::size_t cols) {
  std::vector<SortedColumn> out(cols);
  for (std::size_t f = 0; f < cols; ++f) {
    auto& e = out[f].entries;
    for (std::size_t r = 0; r < rows; ++r) {
      if (const auto& v = x[r * cols + f]) e.emplace_back(*v, static_cast<std::uint32_t>(r));
    }
    std::sort(e.begin(), e.end());
  }
  return out;
}

}  // namespace detail

/// Trains on every row and column of `table` (which must carry labels).
inline BoostedModel train(const ObservationTable& table, const LearnerParams& params = {}) {
  params.validate();
  if (!table.has_labels()) throw TrainingError("training table has no labels");
  if (table.num_features() == 0) throw TrainingError("training table has no features");
  if (table.num_patients() < 2) throw TrainingError("at least two records are required");
  const auto& classes = table.classes();
  if (classes.size() < 2) throw TrainingError("training data contains a single class");

  const std::size_t n = table.num_patients(), nf = table.num_features(), K = classes.size();
  std::vector<std::size_t> y(n);
  std::vector<double> prior(K, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<std::size_t>(
        std::lower_bound(classes.begin(), classes.end(), table.labels()[i]) - classes.begin());
    prior[y[i]] += 1.0 / double(n);
  }

  BoostedModel model;
  model.features = table.feature_names();
  model.classes = classes;
  model.params = params;
  model.objective = resolve_objective(params.objective, K);
  const bool softmax = model.objective == Objective::softmax_multiclass;
  model.base_margin.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    model.base_margin[k] = softmax ? std::log(prior[k]) : std::log(prior[k] / (1.0 - prior[k]));
  }
  model.trees.assign(K, {});

  const auto columns = detail::presort(table.values(), n, nf);
  std::vector<double> margin(n * K);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) margin[i * K + k] = model.base_margin[k];

  std::vector<double> prob(n * K);
  auto update_prob_and_loss = [&] {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double* m = &margin[i * K];
      double* pr = &prob[i * K];
      if (softmax) {
        const double mx = *std::max_element(m, m + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += (pr[k] = std::exp(m[k] - mx));
        for (std::size_t k = 0; k < K; ++k) pr[k] /= z;
        loss -= (m[y[i]] - mx) - std::log(z);
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          pr[k] = 1.0 / (1.0 + std::exp(-m[k]));
          const double s = y[i] == k ? 1.0 : -1.0;
          // log(1 + exp(-s m)) computed stably
          const double t = -s * m[k];
          loss += t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
        }
      }
    }
    return loss / double(n);
  };

  model.train_loss.push_back(update_prob_and_loss());
  std::vector<detail::GradPair> gh(n);
  for (int round = 0; round < params.num_rounds; ++round) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double p = prob[i * K + k];
        const double target = y[i] == k ? 1.0 : 0.0;
        gh[i].g = p - target;
        gh[i].h = std::max(softmax ? 2.0 * p * (1.0 - p) : p * (1.0 - p), 1e-16);
      }
      model.trees[k].push_back(detail::grow_tree(columns, table.values(), nf, gh, params));
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto row = table.row(i);
      for (std::size_t k = 0; k < K; ++k) margin[i * K + k] += model.trees[k].back().predict(row);
    }
    model.train_loss.push_back(update_prob_and_loss());
  }
  return model;
}

/// Total split gain per feature over all trees, in model feature order.
inline std::vector<std::pair<std::string, double>> feature_importance(const BoostedModel& model) {
  std::vector<double> gain(model.features.size(), 0.0);
  for (const auto& per_class : model.trees)
    for (const auto& t : per_class)
      for (const auto& node : t.nodes)
        if (!node.is_leaf()) gain[static_cast<std::size_t>(node.feature)] += node.gain;
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < gain.size(); ++j) out.emplace_back(model.features[j], gain[j]);
  return out;
}

/// Importance sorted by gain descending, ties by feature order.
inline std::vector<std::pair<std::string, double>> ranked_importance(const BoostedModel& model) {
  auto imp = feature_importance(model);
  std::stable_sort(imp.begin(), imp.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return imp;
}

// ---- serialization -------------------------------------------------------

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, int k, const std::vector<std::string>& features) {
  const auto& n = t.nodes[k];
  if (n.is_leaf()) return {{"leaf", n.weight}, {"cover", n.cover}};
  return {{"feature", features[static_cast<std::size_t>(n.feature)]},
          {"threshold", n.threshold},
          {"default", n.default_left ? "left" : "right"},
          {"gain", n.gain},
          {"cover", n.cover},
          {"left", node_to_json(t, n.left, features)},
          {"right", node_to_json(t, n.right, features)}};
}

inline int node_from_json(Tree& t, const nlohmann::json& j,
                          const std::unordered_map<std::string, int>& feature_pos) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("leaf")) {
    t.nodes[id].weight = j.at("leaf").get<double>();
    t.nodes[id].cover = j.value("cover", 0.0);
    return id;
  }
  TreeNode n;
  const auto name = j.at("feature").get<std::string>();
  auto it = feature_pos.find(name);
  if (it == feature_pos.end()) throw ParseError("tree refers to unknown feature '" + name + "'");
  n.feature = it->second;
  n.threshold = j.at("threshold").get<double>();
  n.default_left = j.at("default").get<std::string>() == "left";
  n.gain = j.value("gain", 0.0);
  n.cover = j.value("cover", 0.0);
  n.left = node_from_json(t, j.at("left"), feature_pos);
  n.right = node_from_json(t, j.at("right"), feature_pos);
  t.nodes[id] = n;
  return id;
}

}  // namespace detail

inline nlohmann::json to_json(const LearnerParams& p) {
  return {{"num_rounds", p.num_rounds},     {"learning_rate", p.learning_rate},
          {"max_depth", p.max_depth},       {"min_leaf_count", p.min_leaf_count},
          {"lambda", p.lambda},             {"objective", to_string(p.objective)},
          {"seed", p.seed}};
}

inline LearnerParams learner_params_from_json(const nlohmann::json& j, LearnerParams p = {}) {
  static const std::vector<std::string> known = {"num_rounds", "learning_rate", "max_depth", "min_leaf_count",
                                                 "lambda",     "objective",     "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown learner setting '" + key + "'");
    }
  }
  p.num_rounds = j.value("num_rounds", p.num_rounds);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_leaf_count = j.value("min_leaf_count", p.min_leaf_count);
  p.lambda = j.value("lambda", p.lambda);
  if (j.contains("objective")) p.objective = objective_from_string(j.at("objective").get<std::string>());
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

inline nlohmann::json to_json(const BoostedModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& per_class : m.trees) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : per_class) list.push_back(detail::node_to_json(t, 0, m.features));
    trees.push_back(list);
  }
  return {{"features", m.features},       {"classes", m.classes},
          {"objective", to_string(m.objective)}, {"params", to_json(m.params)},
          {"base_margin", m.base_margin}, {"trees", trees}};
}

inline BoostedModel model_from_json(const nlohmann::json& j) {
  BoostedModel m;
  m.features = j.at("features").get<std::vector<std::string>>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.objective = objective_from_string(j.at("objective").get<std::string>());
  m.params = learner_params_from_json(j.at("params"));
  m.base_margin = j.at("base_margin").get<std::vector<double>>();
  if (m.base_margin.size() != m.classes.size()) throw ParseError("base_margin/classes size mismatch");
  std::unordered_map<std::string, int> pos;
  for (std::size_t k = 0; k < m.features.size(); ++k) pos.emplace(m.features[k], static_cast<int>(k));
  for (const auto& list : j.at("trees")) {
    std::vector<Tree> per_class;
    for (const auto& tj : list) {
      Tree t;
      detail::node_from_json(t, tj, pos);
      per_class.push_back(std::move(t));
    }
    m.trees.push_back(std::move(per_class));
  }
  if (m.trees.size() != m.classes.size()) throw ParseError("tree list count does not match classes");
  return m;
}

}  // namespace elmv
