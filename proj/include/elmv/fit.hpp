#pragma once

// The three-stage fit on one training table: qualified subsets, the model
// registry, and a bound ensemble predictor.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/ensemble.hpp"
#include "elmv/gbdt.hpp"
#include "elmv/subsets.hpp"
#include "elmv/table.hpp"

namespace elmv {

/// Every user-adjustable parameter of the pipeline.
struct ElmvSettings {
  double cap = kDefaultCap;
  double rate_bin_width = kDefaultRateBinWidth;
  std::optional<std::size_t> min_rows;  // default_min_rows when unset
  std::optional<std::size_t> min_cols;
  LearnerParams learner;
  std::size_t cv_folds = 10;
  std::optional<std::size_t> support_size;  // default_support_size when unset
  std::uint64_t support_seed = 0;
  SimilarityWeights weights;
  std::size_t k1 = 10;
  std::size_t k2 = 5;
  std::vector<Criterion> criteria = all_criteria();
  std::optional<std::size_t> knn_k_vote;  // k1 when unset
  std::size_t k3 = 5;
  std::size_t k4 = 10;

  EnsembleConfig ensemble_config(std::size_t support) const {
    EnsembleConfig c;
    c.weights = weights;
    c.selection.k1 = std::min(k1, support);
    c.selection.k2 = std::min(k2, c.selection.k1);
    c.selection.criteria = criteria;
    return c;
  }

  void validate() const {
    if (!(cap >= 0.0 && cap <= 1.0)) throw std::invalid_argument("cap must lie in [0, 1]");
    if (!(rate_bin_width > 0.0)) throw std::invalid_argument("rate_bin_width must be positive");
    learner.validate();
    weights.validate();
    if (cv_folds < 2) throw std::invalid_argument("cv_folds must be at least 2");
    if (k1 < 1 || k2 > k1) throw std::invalid_argument("need 1 <= k1 and k2 <= k1");
    if (support_size && *support_size < 1) throw std::invalid_argument("support_size must be positive");
    if (criteria.empty()) throw std::invalid_argument("criteria must not be empty");
    if (k3 < 1 || k4 < 1) throw std::invalid_argument("k3 and k4 must be positive");
  }
};

inline nlohmann::json to_json(const ElmvSettings& s) {
  nlohmann::json crit = nlohmann::json::array();
  for (auto c : s.criteria) crit.push_back(to_string(c));
  nlohmann::json j = {{"cap", s.cap},
                      {"rate_bin_width", s.rate_bin_width},
                      {"learner", to_json(s.learner)},
                      {"cv_folds", s.cv_folds},
                      {"support_seed", s.support_seed},
                      {"w_f", s.weights.w_f},
                      {"w_m", s.weights.w_m},
                      {"k1", s.k1},
                      {"k2", s.k2},
                      {"criteria", crit},
                      {"k3", s.k3},
                      {"k4", s.k4}};
  if (s.min_rows) j["min_rows"] = *s.min_rows;
  if (s.min_cols) j["min_cols"] = *s.min_cols;
  if (s.support_size) j["support_size"] = *s.support_size;
  if (s.knn_k_vote) j["knn_k_vote"] = *s.knn_k_vote;
  return j;
}

/// Keys absent from `j` keep their defaults; unknown keys are rejected.
inline ElmvSettings settings_from_json(const nlohmann::json& j, ElmvSettings s = {}) {
  static const std::vector<std::string> known = {
      "cap", "rate_bin_width", "min_rows", "min_cols", "learner", "cv_folds", "support_size", "support_seed",
      "w_f", "w_m", "k1", "k2", "criteria", "knn_k_vote", "k3", "k4"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown pipeline setting '" + key + "'");
    }
  }
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  auto get_opt = [&](const char* key, std::optional<std::size_t>& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::size_t>();
  };
  get("cap", s.cap);
  get("rate_bin_width", s.rate_bin_width);
  get_opt("min_rows", s.min_rows);
  get_opt("min_cols", s.min_cols);
  if (j.contains("learner")) s.learner = learner_params_from_json(j.at("learner"), s.learner);
  get("cv_folds", s.cv_folds);
  get_opt("support_size", s.support_size);
  get("support_seed", s.support_seed);
  get("w_f", s.weights.w_f);
  get("w_m", s.weights.w_m);
  get("k1", s.k1);
  get("k2", s.k2);
  if (j.contains("criteria")) {
    s.criteria.clear();
    for (const auto& c : j.at("criteria")) s.criteria.push_back(criterion_from_string(c.get<std::string>()));
  }
  get_opt("knn_k_vote", s.knn_k_vote);
  get("k3", s.k3);
  get("k4", s.k4);
  s.validate();
  return s;
}

inline QualifiedSubsetCollection extract_subsets(const ObservationTable& table, const ElmvSettings& s) {
  auto mask = build_mask(table);
  auto mc = generate_table(mask, s.min_rows.value_or(default_min_rows(table.num_patients())),
                           s.min_cols.value_or(default_min_cols(table.num_features())));
  return filter_qualified(mc, s.cap, s.rate_bin_width);
}

inline RegistryOptions registry_options(const ElmvSettings& s, std::size_t workers) {
  RegistryOptions o;
  o.params = s.learner;
  o.cv_folds = s.cv_folds;
  o.workers = workers;
  return o;
}

inline SupportSet support_for(const ObservationTable& table, const ElmvSettings& s) {
  const std::size_t k = std::min(table.num_patients(), s.support_size.value_or(default_support_size(table.num_patients())));
  return build_support_set(table, k, s.support_seed);
}

struct ElmvFit {
  QualifiedSubsetCollection subsets;
  EnsemblePredictor predictor;
};

inline ElmvFit fit_elmv(const ObservationTable& table, const ElmvSettings& s, std::size_t workers = 1) {
  s.validate();
  auto subsets = extract_subsets(table, s);
  auto registry = build_registry(table, subsets, registry_options(s, workers));
  auto support = support_for(table, s);
  auto cfg = s.ensemble_config(support.size());
  return {std::move(subsets), EnsemblePredictor(std::move(registry), std::move(support), cfg)};
}

}  // namespace elmv
