#pragma once

// Support-set-guided ensemble prediction.
//
// For each query record the support records are scored by
//
//   sim = w_f * softmax(-dist_features) + w_m * softmax(-dist_missingness)
//
// the k1 most similar support records are taken, and every model that labels
// at least k2 of them correctly is eligible. Among eligible models, any model
// that attains the maximum of at least one selection criterion votes; the
// plurality label wins.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/cross_validation.hpp"
#include "elmv/gbdt.hpp"
#include "elmv/log.hpp"
#include "elmv/mask.hpp"
#include "elmv/metrics.hpp"
#include "elmv/parallel.hpp"
#include "elmv/rng.hpp"
#include "elmv/subsets.hpp"
#include "elmv/table.hpp"

namespace elmv {

// ---- similarity ------------------------------------------------------------

/// Per-feature centering and scaling fitted on observed training values.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const ObservationTable& t) {
    Standardizer s;
    const std::size_t nf = t.num_features();
    s.mean.assign(nf, 0.0);
    s.scale.assign(nf, 1.0);
    for (std::size_t j = 0; j < nf; ++j) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < t.num_patients(); ++i) {
        if (const auto& v = t.at(i, j)) {
          sum += *v;
          sq += *v * *v;
          ++n;
        }
      }
      if (n == 0) continue;
      const double m = sum / double(n);
      const double var = std::max(0.0, sq / double(n) - m * m);
      s.mean[j] = m;
      s.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  /// Identity transform for `n` features.
  static Standardizer identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

  double apply(std::size_t j, double v) const { return (v - mean[j]) / scale[j]; }
};

struct SimilarityWeights {
  double w_f = 0.5;
  double w_m = 0.5;

  void validate() const {
    if (!(w_f >= 0.0 && w_m >= 0.0 && w_f + w_m > 0.0)) {
      throw std::invalid_argument("similarity weights must be non-negative with a positive sum");
    }
  }
};

/// softmax(-d), computed stably.
inline std::vector<double> softmax_neg(std::span<const double> d) {
  std::vector<double> out(d.size());
  if (d.empty()) return out;
  const double lo = *std::min_element(d.begin(), d.end());
  double z = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) z += (out[r] = std::exp(-(d[r] - lo)));
  for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> similarity_from_distances(std::span<const double> dist_f,
                                                     std::span<const double> dist_m,
                                                     const SimilarityWeights& w) {
  if (dist_f.size() != dist_m.size()) throw std::invalid_argument("distance vectors differ in length");
  auto a = softmax_neg(dist_f), b = softmax_neg(dist_m);
  std::vector<double> sim(a.size());
  for (std::size_t r = 0; r < sim.size(); ++r) sim[r] = w.w_f * a[r] + w.w_m * b[r];
  return sim;
}

/// k records sampled from the training data, with their missingness.
struct SupportSet {
  ObservationTable records;
  MissingnessMask mask;
  std::vector<std::size_t> source_rows;  // rows of the sampled table, if known
  std::uint64_t seed = 0;

  std::size_t size() const { return records.num_patients(); }
};

inline SupportSet make_support_set(ObservationTable records) {
  if (!records.has_labels()) throw std::invalid_argument("support records need labels");
  SupportSet ss;
  ss.mask = build_mask(records);
  ss.records = std::move(records);
  return ss;
}

/// Uniform sample of k distinct rows.
inline SupportSet build_support_set(const ObservationTable& table, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > table.num_patients()) {
    throw std::invalid_argument("support size " + std::to_string(k) + " outside [1, " +
                                std::to_string(table.num_patients()) + "]");
  }
  if (!table.has_labels()) throw std::invalid_argument("support set requires a labeled table");
  std::vector<std::size_t> idx(table.num_patients());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(k);
  auto ss = make_support_set(table.select_rows(idx));
  ss.source_rows = std::move(idx);
  ss.seed = seed;
  return ss;
}

inline std::size_t default_support_size(std::size_t num_patients) {
  return std::min<std::size_t>(50, (num_patients + 2) / 3);
}

/// Euclidean distance over co-observed standardized features, rescaled by
/// sqrt(N_f / co-observed). Records sharing no observed feature with the
/// query get the largest finite distance in the batch.
inline std::vector<double> feature_distances(std::span<const Cell> query, const SupportSet& ss,
                                             const Standardizer& std_) {
  const std::size_t nf = ss.records.num_features();
  if (query.size() != nf) throw std::invalid_argument("query width does not match support set");
  std::vector<double> d(ss.size(), 0.0);
  std::vector<char> none(ss.size(), 0);
  double max_finite = 0.0;
  for (std::size_t r = 0; r < ss.size(); ++r) {
    double sum = 0.0;
    std::size_t shared = 0;
    for (std::size_t j = 0; j < nf; ++j) {
      const auto& a = query[j];
      const auto& b = ss.records.at(r, j);
      if (!a || !b) continue;
      const double diff = std_.apply(j, *a) - std_.apply(j, *b);
      sum += diff * diff;
      ++shared;
    }
    if (shared == 0) {
      none[r] = 1;
      continue;
    }
    d[r] = std::sqrt(sum * double(nf) / double(shared));
    max_finite = std::max(max_finite, d[r]);
  }
  for (std::size_t r = 0; r < ss.size(); ++r)
    if (none[r]) d[r] = max_finite;
  return d;
}

/// Hamming distance between the query's and each record's missingness vector.
inline std::vector<double> mask_distances(std::span<const Cell> query, const SupportSet& ss) {
  const std::size_t nf = ss.records.num_features();
  if (query.size() != nf) throw std::invalid_argument("query width does not match support set");
  std::vector<double> d(ss.size(), 0.0);
  for (std::size_t r = 0; r < ss.size(); ++r) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < nf; ++j) n += (!query[j]) != ss.mask.missing(r, j);
    d[r] = double(n);
  }
  return d;
}

inline std::vector<double> similarity(std::span<const Cell> query, const SupportSet& ss,
                                      const SimilarityWeights& w, const Standardizer& std_) {
  w.validate();
  auto df = feature_distances(query, ss, std_);
  auto dm = mask_distances(query, ss);
  return similarity_from_distances(df, dm, w);
}

/// Support record indices by decreasing similarity (ties: lower index first).
inline std::vector<std::size_t> rank_by_similarity(std::span<const double> sim) {
  std::vector<std::size_t> idx(sim.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return sim[a] > sim[b]; });
  return idx;
}

// ---- registry --------------------------------------------------------------

/// One trained base learner and where it came from.
struct ModelRecord {
  BoostedModel model;
  SubsetDescriptor subset;            // indices into the training table
  std::vector<std::string> row_ids;   // training patient ids, for leakage checks
  EvalMetrics cv_metrics;
  std::optional<double> loocv_accuracy;
  double support_accuracy_all = 0.0;  // filled when bound to a support set
};

/// Trained models plus the training-table context they need at prediction time.
struct Registry {
  std::vector<std::string> feature_names;
  std::vector<std::string> classes;
  Standardizer standardizer;
  std::vector<ModelRecord> models;
};

struct RegistryOptions {
  LearnerParams params;
  std::size_t cv_folds = 10;  // leave-one-out when a subset has fewer rows
  bool with_loocv = false;
  std::size_t workers = 1;
};

inline CvScheme scheme_for(std::size_t rows, std::size_t folds) {
  return rows >= folds && folds >= 2 ? CvScheme::kfold(folds) : CvScheme::loocv();
}

/// Trains one model per qualified subset. Subsets whose rows hold a single
/// class are skipped with a warning.
inline Registry build_registry(const ObservationTable& train_table,
                               const QualifiedSubsetCollection& subsets,
                               const RegistryOptions& opt = {}) {
  Registry reg;
  reg.feature_names = train_table.feature_names();
  reg.classes = train_table.classes();
  reg.standardizer = Standardizer::fit(train_table);
  std::vector<std::optional<ModelRecord>> slots(subsets.subsets.size());
  parallel_for(slots.size(), opt.workers, [&](std::size_t s) {
    const auto& d = subsets.subsets[s];
    auto sub = train_table.select(d.rows, d.cols);
    if (sub.classes().size() < 2 || sub.num_patients() < 2) {
      logger()->warn("subset {} ({} x {}) has a single class; skipped", s, d.num_rows(), d.num_cols());
      return;
    }
    ModelRecord rec;
    rec.subset = d;
    rec.row_ids = sub.patient_ids();
    rec.cv_metrics = cross_validate(sub, opt.params, scheme_for(sub.num_patients(), opt.cv_folds));
    rec.cv_metrics.per_fold.clear();
    if (opt.with_loocv) rec.loocv_accuracy = cross_validate(sub, opt.params, CvScheme::loocv()).accuracy;
    rec.model = train(sub, opt.params);
    slots[s] = std::move(rec);
  });
  for (auto& s : slots)
    if (s) reg.models.push_back(std::move(*s));
  if (reg.models.empty()) throw TrainingError("no qualified subset could be trained");
  return reg;
}

// ---- selection -------------------------------------------------------------

/// entry (i, j) = 1 iff model j attains the maximum of criterion row i.
inline std::vector<std::vector<std::uint8_t>> tbest(const std::vector<std::vector<double>>& criteria) {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(criteria.size());
  for (const auto& row : criteria) {
    std::vector<std::uint8_t> b(row.size(), 0);
    if (!row.empty()) {
      const double mx = *std::max_element(row.begin(), row.end());
      for (std::size_t j = 0; j < row.size(); ++j) b[j] = row[j] == mx;
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Model with the most criterion wins (lowest index on ties).
inline std::size_t tbest_argmax(const std::vector<std::vector<std::uint8_t>>& best) {
  if (best.empty() || best[0].empty()) throw std::invalid_argument("empty criteria matrix");
  std::vector<std::size_t> wins(best[0].size(), 0);
  for (const auto& row : best)
    for (std::size_t j = 0; j < row.size(); ++j) wins[j] += row[j];
  return static_cast<std::size_t>(std::max_element(wins.begin(), wins.end()) - wins.begin());
}

/// Columns that win at least one criterion. The argmax of total wins is
/// always among them.
inline std::vector<std::size_t> select_by_criteria(const std::vector<std::vector<double>>& criteria) {
  auto best = tbest(criteria);
  if (best.empty() || best[0].empty()) throw std::invalid_argument("empty criteria matrix");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < best[0].size(); ++j) {
    bool any = false;
    for (const auto& row : best) any = any || row[j];
    if (any) out.push_back(j);
  }
  return out;
}

enum class Criterion {
  similar_support_accuracy,
  support_accuracy,
  cv_accuracy,
  cv_precision,
  cv_recall,
  cv_f1,
  feature_count,
  patient_count,
  low_missing_rate,
};

inline const std::vector<Criterion>& all_criteria() {
  static const std::vector<Criterion> all = {
      Criterion::similar_support_accuracy, Criterion::support_accuracy, Criterion::cv_accuracy,
      Criterion::cv_precision,             Criterion::cv_recall,        Criterion::cv_f1,
      Criterion::feature_count,            Criterion::patient_count,    Criterion::low_missing_rate};
  return all;
}

inline const char* to_string(Criterion c) {
  switch (c) {
    case Criterion::similar_support_accuracy: return "similar_support_accuracy";
    case Criterion::support_accuracy: return "support_accuracy";
    case Criterion::cv_accuracy: return "cv_accuracy";
    case Criterion::cv_precision: return "cv_precision";
    case Criterion::cv_recall: return "cv_recall";
    case Criterion::cv_f1: return "cv_f1";
    case Criterion::feature_count: return "feature_count";
    case Criterion::patient_count: return "patient_count";
    case Criterion::low_missing_rate: return "low_missing_rate";
  }
  return "?";
}

inline Criterion criterion_from_string(const std::string& s) {
  for (auto c : all_criteria())
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown selection criterion '" + s + "'");
}

inline double criterion_value(Criterion c, const ModelRecord& m, double similar_accuracy) {
  switch (c) {
    case Criterion::similar_support_accuracy: return similar_accuracy;
    case Criterion::support_accuracy: return m.support_accuracy_all;
    case Criterion::cv_accuracy: return m.cv_metrics.accuracy;
    case Criterion::cv_precision: return m.cv_metrics.precision;
    case Criterion::cv_recall: return m.cv_metrics.recall;
    case Criterion::cv_f1: return m.cv_metrics.f1;
    case Criterion::feature_count: return double(m.subset.num_cols());
    case Criterion::patient_count: return double(m.subset.num_rows());
    case Criterion::low_missing_rate: return -m.subset.missing_rate;
  }
  return 0.0;
}

/// Rows = criteria, columns = records. `similar_accuracy[m]` is record m's
/// accuracy on the query's top-k1 support records.
inline std::vector<std::vector<double>> criteria_matrix(const std::vector<const ModelRecord*>& records,
                                                        const std::vector<double>& similar_accuracy,
                                                        const std::vector<Criterion>& criteria) {
  std::vector<std::vector<double>> mat;
  for (auto c : criteria) {
    std::vector<double> row;
    for (std::size_t m = 0; m < records.size(); ++m) row.push_back(criterion_value(c, *records[m], similar_accuracy[m]));
    mat.push_back(std::move(row));
  }
  return mat;
}

/// Models whose hit count over the `top` support records reaches k2.
/// `correct[m][r]` flags model m labeling support record r correctly.
inline std::vector<std::size_t> eligible_models(const std::vector<std::vector<std::uint8_t>>& correct,
                                                const std::vector<std::size_t>& top, std::size_t k2) {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < correct.size(); ++m) {
    std::size_t hits = 0;
    for (auto r : top) hits += correct[m][r];
    if (hits >= k2) out.push_back(m);
  }
  return out;
}

struct SelectionConfig {
  std::size_t k1 = 10;
  std::size_t k2 = 5;
  std::vector<Criterion> criteria = all_criteria();

  void validate(std::size_t support_size) const {
    if (k1 < 1) throw std::invalid_argument("k1 must be positive");
    if (k2 > k1) throw std::invalid_argument("k2 must not exceed k1");
    if (k1 > support_size) throw std::invalid_argument("k1 exceeds the support set size");
    if (criteria.empty()) throw std::invalid_argument("at least one selection criterion required");
  }
};

struct EnsembleConfig {
  SimilarityWeights weights;
  SelectionConfig selection;
};

/// Plurality vote over model predictions. Ties go to the larger summed score
/// for the tied classes, then to the class that sorts first. `scores[m][c]`
/// is indexed by the global class alphabet.
struct VoteResult {
  std::string label;
  std::map<std::string, std::size_t> tally;
};

inline VoteResult majority_vote(const std::vector<std::string>& classes,
                                const std::vector<std::size_t>& votes,
                                const std::vector<std::vector<double>>& scores) {
  if (votes.empty()) throw std::invalid_argument("no votes to tally");
  std::vector<std::size_t> count(classes.size(), 0);
  std::vector<double> score_sum(classes.size(), 0.0);
  for (std::size_t m = 0; m < votes.size(); ++m) {
    ++count[votes[m]];
    for (std::size_t c = 0; c < classes.size() && m < scores.size(); ++c) score_sum[c] += scores[m][c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes.size(); ++c) {
    if (count[c] > count[best] || (count[c] == count[best] && score_sum[c] > score_sum[best])) best = c;
  }
  VoteResult r;
  r.label = classes[best];
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (count[c]) r.tally[classes[c]] = count[c];
  return r;
}

/// Most common label among the k_vote most similar support records; ties go
/// to the class that sorts first.
inline std::string knn_vote(std::span<const double> sim, const std::vector<std::string>& labels,
                            std::size_t k_vote) {
  if (k_vote < 1 || k_vote > sim.size()) throw std::invalid_argument("k_vote outside [1, k]");
  auto order = rank_by_similarity(sim);
  std::map<std::string, std::size_t> count;
  for (std::size_t t = 0; t < k_vote; ++t) ++count[labels[order[t]]];
  auto best = count.begin();
  for (auto it = count.begin(); it != count.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

struct EnsembleResult {
  std::string label;
  std::map<std::string, std::size_t> tally;
  std::vector<std::size_t> eligible;
  std::vector<std::size_t> selected;
  bool fallback = false;  // no model met k2; the whole registry was used
};

/// Registry bound to a support set. Support-record predictions of every model
/// are computed once; per-query work is the similarity ranking, selection, and
/// the selected models' votes. Thread-safe for concurrent predict() calls.
class EnsemblePredictor {
 public:
  EnsemblePredictor(Registry registry, SupportSet support, EnsembleConfig cfg = {})
      : reg_(std::move(registry)), ss_(std::move(support)), cfg_(std::move(cfg)) {
    cfg_.weights.validate();
    cfg_.selection.validate(ss_.size());
    if (reg_.models.empty()) throw std::invalid_argument("empty model registry");
    if (ss_.records.feature_names() != reg_.feature_names) {
      throw std::invalid_argument("support set features do not match the registry");
    }
    const std::size_t M = reg_.models.size(), K = ss_.size();
    correct_.assign(M, std::vector<std::uint8_t>(K, 0));
    trained_on_.assign(M, std::vector<std::uint8_t>(K, 0));
    for (std::size_t m = 0; m < M; ++m) {
      auto& rec = reg_.models[m];
      std::unordered_set<std::string> ids(rec.row_ids.begin(), rec.row_ids.end());
      std::size_t evaluable = 0, ok = 0;
      for (std::size_t r = 0; r < K; ++r) {
        const bool hit = predict_model(m, ss_.records.row(r)).label == ss_.records.labels()[r];
        correct_[m][r] = hit;
        trained_on_[m][r] = ids.count(ss_.records.patient_ids()[r]) > 0;
        if (!trained_on_[m][r]) {
          ++evaluable;
          ok += hit;
        }
      }
      rec.support_accuracy_all = evaluable ? double(ok) / double(evaluable) : 0.0;
    }
  }

  const Registry& registry() const { return reg_; }
  const SupportSet& support() const { return ss_; }
  const EnsembleConfig& config() const { return cfg_; }

  /// Model m applied to a record aligned with the registry features; features
  /// outside the model's subset are ignored.
  Prediction predict_model(std::size_t m, std::span<const Cell> record) const {
    const auto& rec = reg_.models[m];
    std::vector<Cell> x(rec.subset.cols.size());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = record[rec.subset.cols[k]];
    return rec.model.predict(x);
  }

  std::vector<double> similarity(std::span<const Cell> query) const {
    return elmv::similarity(query, ss_, cfg_.weights, reg_.standardizer);
  }

  /// Models that label at least k2 of the k1 most similar support records.
  std::vector<std::size_t> eligible(std::span<const double> sim) const {
    return eligible_models(correct_, top_k1(sim), cfg_.selection.k2);
  }

  /// Criterion rows x candidate columns for the given candidates.
  std::vector<std::vector<double>> criteria_matrix(std::span<const double> sim,
                                                   const std::vector<std::size_t>& candidates) const {
    auto top = top_k1(sim);
    std::vector<const ModelRecord*> recs;
    std::vector<double> similar;
    for (auto m : candidates) {
      recs.push_back(&reg_.models[m]);
      std::size_t n = 0, ok = 0;
      for (auto r : top) {
        if (trained_on_[m][r]) continue;
        ++n;
        ok += correct_[m][r];
      }
      similar.push_back(n ? double(ok) / double(n) : 0.0);
    }
    return elmv::criteria_matrix(recs, similar, cfg_.selection.criteria);
  }

  EnsembleResult predict(std::span<const Cell> query) const {
    if (query.size() != reg_.feature_names.size()) {
      throw std::invalid_argument("query width does not match the registry");
    }
    EnsembleResult res;
    auto sim = similarity(query);
    res.eligible = eligible(sim);
    if (res.eligible.empty()) {
      logger()->warn("no model labels {} of the {} most similar support records; using all {} models",
                     cfg_.selection.k2, cfg_.selection.k1, reg_.models.size());
      res.fallback = true;
      res.eligible.resize(reg_.models.size());
      std::iota(res.eligible.begin(), res.eligible.end(), std::size_t{0});
    }
    auto picked = select_by_criteria(criteria_matrix(sim, res.eligible));
    for (auto p : picked) res.selected.push_back(res.eligible[p]);

    std::vector<std::size_t> votes;
    std::vector<std::vector<double>> scores;
    for (auto m : res.selected) {
      auto pred = predict_model(m, query);
      const auto& model_classes = reg_.models[m].model.classes;
      std::vector<double> global(reg_.classes.size(), 0.0);
      for (std::size_t c = 0; c < model_classes.size(); ++c) {
        auto it = std::lower_bound(reg_.classes.begin(), reg_.classes.end(), model_classes[c]);
        global[static_cast<std::size_t>(it - reg_.classes.begin())] = pred.scores[c];
      }
      auto it = std::lower_bound(reg_.classes.begin(), reg_.classes.end(), pred.label);
      votes.push_back(static_cast<std::size_t>(it - reg_.classes.begin()));
      scores.push_back(std::move(global));
    }
    auto vote = majority_vote(reg_.classes, votes, scores);
    res.label = vote.label;
    res.tally = std::move(vote.tally);
    return res;
  }

  /// Similarity-weighted label vote of the support set alone.
  std::string knn_predict(std::span<const Cell> query, std::size_t k_vote) const {
    return knn_vote(similarity(query), ss_.records.labels(), k_vote);
  }

 private:
  std::vector<std::size_t> top_k1(std::span<const double> sim) const {
    auto order = rank_by_similarity(sim);
    order.resize(std::min(cfg_.selection.k1, order.size()));
    return order;
  }

  Registry reg_;
  SupportSet ss_;
  EnsembleConfig cfg_;
  std::vector<std::vector<std::uint8_t>> correct_;     // [model][support record]
  std::vector<std::vector<std::uint8_t>> trained_on_;  // [model][support record]
};

// ---- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const Registry& reg) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : reg.models) {
    nlohmann::json cols = nlohmann::json::array();
    for (auto c : m.subset.cols) cols.push_back(reg.feature_names.at(c));
    nlohmann::json rec = {{"subset",
                           {{"row_ids", m.row_ids},
                            {"row_index", m.subset.rows},
                            {"col_ids", cols},
                            {"missing_count", m.subset.missing_count},
                            {"missing_rate", m.subset.missing_rate}}},
                          {"cv_metrics", to_json(m.cv_metrics)},
                          {"model", to_json(m.model)}};
    if (m.loocv_accuracy) rec["loocv_accuracy"] = *m.loocv_accuracy;
    models.push_back(std::move(rec));
  }
  return {{"feature_names", reg.feature_names},
          {"classes", reg.classes},
          {"standardizer", {{"mean", reg.standardizer.mean}, {"scale", reg.standardizer.scale}}},
          {"models", models}};
}

inline Registry registry_from_json(const nlohmann::json& j) {
  Registry reg;
  reg.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  reg.classes = j.at("classes").get<std::vector<std::string>>();
  reg.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
  reg.standardizer.scale = j.at("standardizer").at("scale").get<std::vector<double>>();
  if (reg.standardizer.mean.size() != reg.feature_names.size() ||
      reg.standardizer.scale.size() != reg.feature_names.size()) {
    throw ParseError("standardizer width does not match feature_names");
  }
  std::map<std::string, std::size_t> col_index;
  for (std::size_t c = 0; c < reg.feature_names.size(); ++c) col_index[reg.feature_names[c]] = c;
  for (const auto& mj : j.at("models")) {
    ModelRecord rec;
    const auto& sj = mj.at("subset");
    rec.row_ids = sj.at("row_ids").get<std::vector<std::string>>();
    rec.subset.rows = sj.at("row_index").get<std::vector<std::size_t>>();
    for (const auto& name : sj.at("col_ids")) {
      auto it = col_index.find(name.get<std::string>());
      if (it == col_index.end()) throw ParseError("model subset names unknown feature '" + name.get<std::string>() + "'");
      rec.subset.cols.push_back(it->second);
    }
    rec.subset.missing_count = sj.at("missing_count").get<std::size_t>();
    rec.subset.missing_rate = sj.at("missing_rate").get<double>();
    rec.cv_metrics = metrics_from_json(mj.at("cv_metrics"));
    if (mj.contains("loocv_accuracy")) rec.loocv_accuracy = mj.at("loocv_accuracy").get<double>();
    rec.model = model_from_json(mj.at("model"));
    if (rec.model.features.size() != rec.subset.cols.size()) {
      throw ParseError("model feature list does not match its subset columns");
    }
    reg.models.push_back(std::move(rec));
  }
  return reg;
}

}  // namespace elmv
