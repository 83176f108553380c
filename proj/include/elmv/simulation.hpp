#pragma once

// Benchmark harness: a complete labeled table is widened with noisy copies of
// each feature, cells are removed at random, and every method is scored on a
// held-out split.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/csv.hpp"
#include "elmv/fit.hpp"
#include "elmv/impute.hpp"
#include "elmv/log.hpp"
#include "elmv/metrics.hpp"
#include "elmv/parallel.hpp"
#include "elmv/rng.hpp"

namespace elmv {

enum class Method { elmv, base_no_impute, mean_impute, knn_baseline, external };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::elmv: return "elmv";
    case Method::base_no_impute: return "base_no_impute";
    case Method::mean_impute: return "mean_impute";
    case Method::knn_baseline: return "knn_baseline";
    case Method::external: return "external";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (auto m : {Method::elmv, Method::base_no_impute, Method::mean_impute, Method::knn_baseline, Method::external})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct SimulationConfig {
  ObservationTable seed_dataset;
  std::size_t copies_per_feature = 9;
  std::vector<double> noise_levels = {0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0};
  std::vector<double> missing_rates = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.65, 0.7};
  std::vector<std::uint64_t> trial_seeds = {1, 2, 3, 4, 5};
  double validation_fraction = 0.2;
  std::vector<Method> methods = {Method::elmv, Method::base_no_impute, Method::mean_impute, Method::knn_baseline};
  ElmvSettings elmv;
  // Directory of pre-imputed tables, one per trial, named by imputed_file_name.
  std::optional<std::filesystem::path> external_dir;
  // When set, each trial's masked table is written here, named by masked_file_name.
  std::optional<std::filesystem::path> export_masked_dir;
  std::size_t moving_average_window = 3;
  std::size_t workers = 1;

  void validate() const {
    if (!seed_dataset.has_labels()) throw std::invalid_argument("seed dataset must be labeled");
    if (seed_dataset.missing_count() != 0) throw std::invalid_argument("seed dataset must be complete");
    if (noise_levels.size() != copies_per_feature) {
      throw std::invalid_argument("noise_levels must list one level per copy");
    }
    for (double n : noise_levels)
      if (!(n >= 0.0)) throw std::invalid_argument("noise levels must be non-negative");
    for (double r : missing_rates)
      if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("missing rates must lie in [0, 1)");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw std::invalid_argument("validation_fraction must lie in (0, 1)");
    }
    if (moving_average_window < 1 || moving_average_window % 2 == 0) {
      throw std::invalid_argument("moving_average_window must be odd");
    }
    elmv.validate();
  }
};

inline std::string expanded_feature_name(const std::string& progenitor, double noise) {
  return progenitor + "@" + format_double(noise);
}

/// Each feature followed by its noisy copies; copy c adds Gaussian noise with
/// standard deviation noise_levels[c] times the feature's standard deviation.
/// Names are "<feature>@<level>", with "#<copy>" appended when levels repeat.
inline ObservationTable expand(const ObservationTable& table, const std::vector<double>& noise_levels,
                               std::uint64_t seed) {
  const std::size_t np = table.num_patients(), nf = table.num_features(), width = nf * (noise_levels.size() + 1);
  std::vector<std::string> names;
  std::vector<Cell> vals(np * width);
  Rng rng(seed);
  for (std::size_t f = 0; f < nf; ++f) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < np; ++i) {
      if (const auto& v = table.at(i, f)) {
        sum += *v;
        sq += *v * *v;
        ++n;
      }
    }
    const double mean = n ? sum / double(n) : 0.0;
    const double sd = n > 1 ? std::sqrt(std::max(0.0, (sq - double(n) * mean * mean) / double(n - 1))) : 0.0;
    const std::size_t base = f * (noise_levels.size() + 1);
    names.push_back(expanded_feature_name(table.feature_names()[f], 0.0));
    for (std::size_t i = 0; i < np; ++i) vals[i * width + base] = table.at(i, f);
    for (std::size_t c = 0; c < noise_levels.size(); ++c) {
      auto name = expanded_feature_name(table.feature_names()[f], noise_levels[c]);
      if (std::find(names.begin() + static_cast<std::ptrdiff_t>(base), names.end(), name) != names.end()) {
        name += "#" + std::to_string(c + 1);
      }
      names.push_back(std::move(name));
      for (std::size_t i = 0; i < np; ++i) {
        const double z = standard_normal(rng);
        if (const auto& v = table.at(i, f)) vals[i * width + base + c + 1] = *v + noise_levels[c] * sd * z;
      }
    }
  }
  return ObservationTable(table.patient_ids(), names, std::move(vals),
                          table.has_labels() ? std::optional(table.labels()) : std::nullopt);
}

inline ObservationTable expand(const SimulationConfig& cfg, std::uint64_t seed) {
  return expand(cfg.seed_dataset, cfg.noise_levels, seed);
}

/// Removes exactly floor(rate * cells) cells chosen uniformly without replacement.
inline ObservationTable mask_random(const ObservationTable& table, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("mask rate must lie in [0, 1)");
  const std::size_t cells = table.values().size();
  const auto n = static_cast<std::size_t>(std::floor(rate * double(cells) + 1e-9));
  std::vector<std::size_t> idx(cells);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // partial Fisher-Yates: the first n positions are a uniform n-subset
  for (std::size_t k = 0; k < n; ++k) std::swap(idx[k], idx[k + uniform_index(rng, cells - k)]);
  auto vals = table.values();
  for (std::size_t k = 0; k < n; ++k) vals[idx[k]].reset();
  return table.with_values(std::move(vals));
}

/// Stratified holdout: each class contributes round(fraction * size) records,
/// at least one when the class has two or more.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<std::string>& labels, double fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : by_class) {
    shuffle(idx, rng);
    auto n_test = static_cast<std::size_t>(std::llround(fraction * double(idx.size())));
    if (idx.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    else n_test = 0;
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline std::string trial_tag(double rate, std::uint64_t seed) {
  return "rate" + format_double(rate) + "_seed" + std::to_string(seed);
}
inline std::string masked_file_name(double rate, std::uint64_t seed) { return "masked_" + trial_tag(rate, seed) + ".csv"; }
inline std::string imputed_file_name(double rate, std::uint64_t seed) { return "imputed_" + trial_tag(rate, seed) + ".csv"; }

struct TrialResult {
  Method method = Method::elmv;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  EvalMetrics metrics;
  std::optional<std::string> error;
  // elmv only: queries with a non-empty eligible set, and registry size
  std::optional<double> eligible_fraction;
  std::optional<std::size_t> num_models;
};

namespace detail {

inline std::vector<std::string> predict_all(const BoostedModel& m, const ObservationTable& t) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.num_patients(); ++i) out.push_back(m.predict(t.row(i)).label);
  return out;
}

inline std::uint64_t rate_salt(double rate) { return static_cast<std::uint64_t>(std::llround(rate * 1e6)); }

}  // namespace detail

/// Runs every configured method on one (rate, seed) trial.
inline std::vector<TrialResult> run_trial(const SimulationConfig& cfg, double rate, std::uint64_t seed,
                                          std::size_t workers = 1) {
  auto full = expand(cfg, mix_seed(seed, 1));
  auto masked = mask_random(full, rate, mix_seed(seed, 1000 + detail::rate_salt(rate)));
  if (cfg.export_masked_dir) {
    std::filesystem::create_directories(*cfg.export_masked_dir);
    CsvOptions o;
    o.id_column = "id";
    o.label_column = "label";
    save_table(*cfg.export_masked_dir / masked_file_name(rate, seed), masked, o);
  }
  auto [tr, te] = stratified_split(masked.labels(), cfg.validation_fraction, mix_seed(seed, 2));
  auto train_table = masked.select_rows(tr);
  auto valid = masked.select_rows(te);
  const auto& truth = valid.labels();

  std::vector<TrialResult> out;
  std::optional<ElmvFit> fit;
  auto fit_once = [&]() -> ElmvFit& {
    if (!fit) {
      auto s = cfg.elmv;
      s.support_seed = mix_seed(seed, 3);
      fit.emplace(fit_elmv(train_table, s, workers));
    }
    return *fit;
  };
  for (auto method : cfg.methods) {
    TrialResult r;
    r.method = method;
    r.missing_rate = rate;
    r.seed = seed;
    try {
      std::vector<std::string> pred;
      switch (method) {
        case Method::base_no_impute:
          pred = detail::predict_all(train(train_table, cfg.elmv.learner), valid);
          break;
        case Method::mean_impute: {
          auto means = column_means(train_table);
          pred = detail::predict_all(train(impute_with(train_table, means), cfg.elmv.learner), impute_with(valid, means));
          break;
        }
        case Method::elmv: {
          auto& f = fit_once();
          std::size_t with_eligible = 0;
          for (std::size_t q = 0; q < valid.num_patients(); ++q) {
            auto res = f.predictor.predict(valid.row(q));
            with_eligible += !res.fallback;
            pred.push_back(res.label);
          }
          r.eligible_fraction = valid.num_patients() ? double(with_eligible) / double(valid.num_patients()) : 0.0;
          r.num_models = f.predictor.registry().models.size();
          break;
        }
        case Method::knn_baseline: {
          // same support set and scaling as ELMV, no subset models needed
          auto s = cfg.elmv;
          s.support_seed = mix_seed(seed, 3);
          const auto support = support_for(train_table, s);
          const auto scale = Standardizer::fit(train_table);
          const auto ens = s.ensemble_config(support.size());
          const std::size_t kv = std::min(s.knn_k_vote.value_or(ens.selection.k1), support.size());
          for (std::size_t q = 0; q < valid.num_patients(); ++q)
            pred.push_back(knn_vote(similarity(valid.row(q), support, ens.weights, scale), support.records.labels(), kv));
          break;
        }
        case Method::external: {
          if (!cfg.external_dir) throw std::invalid_argument("external method needs an imputed-table directory");
          CsvOptions o;
          o.id_column = "id";
          o.label_column = "label";
          auto imputed = load_table(*cfg.external_dir / imputed_file_name(rate, seed), o);
          if (imputed.missing_count() != 0) throw ParseError("imputed table still has absent values");
          std::map<std::string, std::size_t> pos;
          for (std::size_t i = 0; i < imputed.num_patients(); ++i) pos[imputed.patient_ids()[i]] = i;
          auto rows_of = [&](const ObservationTable& t) {
            std::vector<std::size_t> rows;
            for (const auto& id : t.patient_ids()) {
              auto it = pos.find(id);
              if (it == pos.end()) throw ParseError("imputed table lacks record '" + id + "'");
              rows.push_back(it->second);
            }
            return rows;
          };
          auto model = train(imputed.select_rows(rows_of(train_table)), cfg.elmv.learner);
          pred = detail::predict_all(model, imputed.select_rows(rows_of(valid)));
          break;
        }
      }
      r.metrics = compute_metrics(truth, pred);
    } catch (const std::exception& e) {
      logger()->warn("trial {} method {} failed: {}", trial_tag(rate, seed), to_string(method), e.what());
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// All (rate, seed) trials; results ordered by rate, seed, then method.
inline std::vector<TrialResult> run_trials(const SimulationConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<double, std::uint64_t>> jobs;
  for (double r : cfg.missing_rates)
    for (auto s : cfg.trial_seeds) jobs.emplace_back(r, s);
  std::vector<std::vector<TrialResult>> slots(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t k) { slots[k] = run_trial(cfg, jobs[k].first, jobs[k].second); });
  std::vector<TrialResult> out;
  for (auto& s : slots)
    for (auto& r : s) out.push_back(std::move(r));
  return out;
}

/// Centered moving mean over points sorted by x; the window shrinks
/// symmetrically near either end.
inline std::vector<std::pair<double, double>> moving_average(std::vector<std::pair<double, double>> series,
                                                             std::size_t window) {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("moving-average window must be odd");
  std::stable_sort(series.begin(), series.end(), [](auto& a, auto& b) { return a.first < b.first; });
  const std::size_t half = window / 2, n = series.size();
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t h = std::min({half, i, n - 1 - i});
    double sum = 0.0;
    for (std::size_t k = i - h; k <= i + h; ++k) sum += series[k].second;
    out.emplace_back(series[i].first, sum / double(2 * h + 1));
  }
  return out;
}

struct RateSummary {
  double rate = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  std::map<std::string, std::pair<double, double>> metric;  // name -> (mean, sd)
};

inline double metric_value(const EvalMetrics& m, const std::string& name) {
  if (name == "accuracy") return m.accuracy;
  if (name == "precision") return m.precision;
  if (name == "recall") return m.recall;
  if (name == "f1") return m.f1;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"accuracy", "precision", "recall", "f1"};
  return names;
}

/// Per-method, per-rate mean and sample standard deviation over successful trials.
inline std::map<Method, std::vector<RateSummary>> summarize(const std::vector<TrialResult>& results) {
  std::map<Method, std::map<double, std::vector<const TrialResult*>>> groups;
  for (const auto& r : results) groups[r.method][r.missing_rate].push_back(&r);
  std::map<Method, std::vector<RateSummary>> out;
  for (const auto& [method, by_rate] : groups) {
    for (const auto& [rate, rs] : by_rate) {
      RateSummary s;
      s.rate = rate;
      for (auto* r : rs) (r->error ? s.failures : s.runs)++;
      for (const auto& name : metric_names()) {
        double sum = 0.0, sq = 0.0;
        for (auto* r : rs)
          if (!r->error) sum += metric_value(r->metrics, name);
        const double mean = s.runs ? sum / double(s.runs) : 0.0;
        for (auto* r : rs)
          if (!r->error) sq += std::pow(metric_value(r->metrics, name) - mean, 2);
        s.metric[name] = {mean, s.runs > 1 ? std::sqrt(sq / double(s.runs - 1)) : 0.0};
      }
      out[method].push_back(std::move(s));
    }
  }
  return out;
}

inline double mean_metric(const std::map<Method, std::vector<RateSummary>>& summary, Method m, double rate,
                          const std::string& name = "accuracy") {
  for (const auto& s : summary.at(m))
    if (std::abs(s.rate - rate) < 1e-12) return s.metric.at(name).first;
  throw std::out_of_range("no summary for rate " + format_double(rate));
}

inline void write_results_tsv(std::ostream& out, const std::vector<TrialResult>& results) {
  out << "method\tmissing_rate\tseed\taccuracy\tprecision\trecall\tf1\tcount\terror\n";
  for (const auto& r : results) {
    out << to_string(r.method) << '\t' << format_double(r.missing_rate) << '\t' << r.seed << '\t'
        << format_double(r.metrics.accuracy) << '\t' << format_double(r.metrics.precision) << '\t'
        << format_double(r.metrics.recall) << '\t' << format_double(r.metrics.f1) << '\t' << r.metrics.count << '\t'
        << (r.error ? *r.error : "") << '\n';
  }
}

inline nlohmann::json summary_json(const std::vector<TrialResult>& results, std::size_t window) {
  auto summary = summarize(results);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [method, rates] : summary) {
    nlohmann::json per_rate = nlohmann::json::array();
    for (const auto& s : rates) {
      nlohmann::json mj = {{"rate", s.rate}, {"runs", s.runs}, {"failures", s.failures}};
      for (const auto& [name, ms] : s.metric) mj[name] = {{"mean", ms.first}, {"sd", ms.second}};
      per_rate.push_back(std::move(mj));
    }
    nlohmann::json ma = nlohmann::json::object();
    for (const auto& name : metric_names()) {
      std::vector<std::pair<double, double>> series;
      for (const auto& s : rates) series.emplace_back(s.rate, s.metric.at(name).first);
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [x, y] : moving_average(series, window)) pts.push_back({x, y});
      ma[name] = std::move(pts);
    }
    j[to_string(method)] = {{"per_rate", per_rate}, {"moving_average", ma}};
  }
  return {{"window", window}, {"methods", j}};
}

/// Reads harness settings; the seed dataset is supplied separately.
inline SimulationConfig simulation_config_from_json(const nlohmann::json& j, ObservationTable seed_dataset) {
  static const std::vector<std::string> known = {"dataset",         "copies_per_feature", "noise_levels",
                                                 "missing_rates",   "trial_seeds",        "validation_fraction",
                                                 "methods",         "elmv",               "external_dir",
                                                 "export_masked_dir", "moving_average_window", "workers",
                                                 "csv"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown simulation setting '" + key + "'");
    }
  }
  SimulationConfig c;
  c.seed_dataset = std::move(seed_dataset);
  if (j.contains("copies_per_feature")) c.copies_per_feature = j.at("copies_per_feature").get<std::size_t>();
  if (j.contains("noise_levels")) c.noise_levels = j.at("noise_levels").get<std::vector<double>>();
  if (j.contains("missing_rates")) c.missing_rates = j.at("missing_rates").get<std::vector<double>>();
  if (j.contains("trial_seeds")) c.trial_seeds = j.at("trial_seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("validation_fraction")) c.validation_fraction = j.at("validation_fraction").get<double>();
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("elmv")) c.elmv = settings_from_json(j.at("elmv"));
  if (j.contains("external_dir")) c.external_dir = j.at("external_dir").get<std::string>();
  if (j.contains("export_masked_dir")) c.export_masked_dir = j.at("export_masked_dir").get<std::string>();
  if (j.contains("moving_average_window")) c.moving_average_window = j.at("moving_average_window").get<std::size_t>();
  if (j.contains("workers")) c.workers = j.at("workers").get<std::size_t>();
  c.validate();
  return c;
}

}  // namespace elmv
