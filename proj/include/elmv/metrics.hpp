#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/log.hpp"

namespace elmv {

/// Macro-averaged classification scores, optionally with a per-fold breakdown.
struct EvalMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
  std::vector<EvalMetrics> per_fold;
};

struct ClassScores {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Per-class scores over the union of true and predicted labels. An undefined
/// ratio (empty denominator) counts as 0.
inline std::vector<ClassScores> per_class_scores(const std::vector<std::string>& truth,
                                                 const std::vector<std::string>& predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("label vectors differ in length");
  std::set<std::string> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  std::vector<ClassScores> out;
  for (const auto& c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == c, p = predicted[i] == c;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    ClassScores s;
    s.label = c;
    s.support = tp + fn;
    if (tp + fp == 0) {
      logger()->debug("class '{}' never predicted; precision taken as 0", c);
    } else {
      s.precision = double(tp) / double(tp + fp);
    }
    if (tp + fn > 0) s.recall = double(tp) / double(tp + fn);
    if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
    out.push_back(s);
  }
  return out;
}

/// Accuracy plus macro precision/recall/F1. With a single class in play the
/// three macro scores equal accuracy.
inline EvalMetrics compute_metrics(const std::vector<std::string>& truth,
                                   const std::vector<std::string>& predicted) {
  EvalMetrics m;
  m.count = truth.size();
  if (truth.empty()) return m;
  auto per_class = per_class_scores(truth, predicted);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i];
  m.accuracy = double(correct) / double(truth.size());
  if (per_class.size() <= 1) {
    m.precision = m.recall = m.f1 = m.accuracy;
    return m;
  }
  for (const auto& s : per_class) {
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
  }
  const double k = double(per_class.size());
  m.precision /= k;
  m.recall /= k;
  m.f1 /= k;
  return m;
}

inline nlohmann::json to_json(const EvalMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1}, {"count", m.count}};
}

inline EvalMetrics metrics_from_json(const nlohmann::json& j) {
  EvalMetrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.count = j.value("count", std::size_t{0});
  return m;
}

}  // namespace elmv
