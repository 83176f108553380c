#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "elmv/gbdt.hpp"
#include "elmv/metrics.hpp"
#include "elmv/rng.hpp"
#include "elmv/table.hpp"

namespace elmv {

struct CvScheme {
  enum class Kind { kfold, loocv } kind = Kind::kfold;
  std::size_t k = 10;

  static CvScheme kfold(std::size_t k) { return {Kind::kfold, k}; }
  static CvScheme loocv() { return {Kind::loocv, 0}; }
};

/// Test-index lists for k folds. Each class's records are shuffled with
/// `seed` and dealt round-robin, so every fold gets a near-equal share of
/// each class.
inline std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<std::string>& labels,
                                                              std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (k > labels.size()) {
    throw std::invalid_argument("fold count " + std::to_string(k) + " exceeds record count " +
                                std::to_string(labels.size()));
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (auto& [label, idx] : by_class) {
    shuffle(idx, rng);
    for (auto i : idx) folds[next++ % k].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Trains on every fold complement and scores the held-out records. The
/// headline metrics are computed on the pooled out-of-fold predictions;
/// per_fold holds each fold's own scores. A training fold that contains a
/// single class predicts that class.
inline EvalMetrics cross_validate(const ObservationTable& table, const LearnerParams& params,
                                  CvScheme scheme) {
  if (!table.has_labels()) throw TrainingError("cross-validation requires labels");
  const std::size_t n = table.num_patients();
  std::vector<std::vector<std::size_t>> folds;
  if (scheme.kind == CvScheme::Kind::loocv) {
    if (n < 2) throw std::invalid_argument("leave-one-out needs at least 2 records");
    folds.resize(n);
    for (std::size_t i = 0; i < n; ++i) folds[i] = {i};
  } else {
    folds = stratified_folds(table.labels(), scheme.k, params.seed);
  }

  std::vector<std::string> predicted(n);
  EvalMetrics pooled;
  std::vector<EvalMetrics> per_fold;
  std::vector<char> in_test(n);
  for (const auto& test : folds) {
    std::fill(in_test.begin(), in_test.end(), 0);
    for (auto i : test) in_test[i] = 1;
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < n; ++i)
      if (!in_test[i]) train_rows.push_back(i);
    auto train_table = table.select_rows(train_rows);
    std::vector<std::string> truth, guess;
    if (train_table.classes().size() < 2) {
      for (auto i : test) predicted[i] = train_table.classes().front();
    } else {
      auto model = train(train_table, params);
      for (auto i : test) predicted[i] = model.predict(table.row(i)).label;
    }
    for (auto i : test) {
      truth.push_back(table.labels()[i]);
      guess.push_back(predicted[i]);
    }
    per_fold.push_back(compute_metrics(truth, guess));
  }
  pooled = compute_metrics(table.labels(), predicted);
  pooled.per_fold = std::move(per_fold);
  return pooled;
}

}  // namespace elmv
