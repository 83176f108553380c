#pragma once

// End-to-end orchestration and the artifact files that connect the stages.
// Every artifact carries the hash of the settings that produced it.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/csv.hpp"
#include "elmv/ensemble.hpp"
#include "elmv/features.hpp"
#include "elmv/fit.hpp"
#include "elmv/mask.hpp"
#include "elmv/parallel.hpp"
#include "elmv/subsets.hpp"

namespace elmv {

/// A stage failure; `what()` is "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause, bool data_error = false)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)), data_error_(data_error) {}
  const std::string& stage() const { return stage_; }
  bool data_error() const { return data_error_; }

 private:
  std::string stage_;
  bool data_error_;
};

/// Artifacts loaded together were produced by different settings.
class HashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::optional<std::string> input;
  std::optional<std::string> queries;  // scored instead of the input records when set
  std::string output_dir = "elmv_out";
  CsvOptions csv = default_csv();
  double assess_threshold = kDefaultAssessThreshold;
  ElmvSettings elmv;
  bool loocv = true;  // needed by the feature stage
  std::size_t workers = 1;

  static CsvOptions default_csv() {
    CsvOptions o;
    o.label_column = "label";
    o.id_column = "id";
    return o;
  }

  void validate() const {
    if (!(assess_threshold > 0.0 && assess_threshold < 1.0)) {
      throw std::invalid_argument("assess_threshold must lie in (0, 1)");
    }
    if (workers < 1) throw std::invalid_argument("workers must be positive");
    elmv.validate();
  }
};

inline nlohmann::json csv_to_json(const CsvOptions& o) {
  nlohmann::json j = {{"separator", std::string(1, o.separator)},
                      {"missing_tokens", std::vector<std::string>(o.missing_tokens.begin(), o.missing_tokens.end())}};
  j["label_column"] = o.label_column ? nlohmann::json(*o.label_column) : nlohmann::json(nullptr);
  j["id_column"] = o.id_column ? nlohmann::json(*o.id_column) : nlohmann::json(nullptr);
  return j;
}

inline CsvOptions csv_from_json(const nlohmann::json& j, CsvOptions o) {
  if (j.contains("separator")) {
    auto s = j.at("separator").get<std::string>();
    if (s == "\\t" || s == "tab") s = "\t";
    if (s.size() != 1) throw std::invalid_argument("csv separator must be one character");
    o.separator = s[0];
  }
  if (j.contains("missing_tokens")) {
    auto t = j.at("missing_tokens").get<std::vector<std::string>>();
    o.missing_tokens = {t.begin(), t.end()};
  }
  auto opt_string = [&](const char* key, std::optional<std::string>& dst) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null() || j.at(key).get<std::string>().empty()) dst.reset();
    else dst = j.at(key).get<std::string>();
  };
  opt_string("label_column", o.label_column);
  opt_string("id_column", o.id_column);
  return o;
}

/// Settings that shape results; paths and the worker count are excluded.
inline nlohmann::json hashed_settings(const PipelineConfig& c) {
  return {{"csv", csv_to_json(c.csv)},
          {"assess_threshold", c.assess_threshold},
          {"elmv", to_json(c.elmv)},
          {"loocv", c.loocv}};
}

inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

inline std::string config_hash(const PipelineConfig& c) { return fnv1a_hex(hashed_settings(c).dump()); }

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j = hashed_settings(c);
  if (c.input) j["input"] = *c.input;
  if (c.queries) j["queries"] = *c.queries;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  return j;
}

/// Keys absent from `j` keep the values already in `c`.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  static const std::vector<std::string> known = {"input", "queries", "output_dir", "csv", "assess_threshold",
                                                 "elmv",  "loocv",   "workers"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown pipeline setting '" + key + "'");
    }
  }
  if (j.contains("input")) c.input = j.at("input").get<std::string>();
  if (j.contains("queries")) c.queries = j.at("queries").get<std::string>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("csv")) c.csv = csv_from_json(j.at("csv"), c.csv);
  if (j.contains("assess_threshold")) c.assess_threshold = j.at("assess_threshold").get<double>();
  if (j.contains("elmv")) c.elmv = settings_from_json(j.at("elmv"), c.elmv);
  if (j.contains("loocv")) c.loocv = j.at("loocv").get<bool>();
  if (j.contains("workers")) c.workers = j.at("workers").get<std::size_t>();
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return pipeline_config_from_json(j, std::move(base));
}

// ---- artifact I/O ------------------------------------------------------------

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline constexpr const char* kHashPrefix = "# config_hash=";

/// Hash from a leading "# config_hash=" line, if the file has one.
inline std::optional<std::string> read_hash_line(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind(kHashPrefix, 0) != 0) return std::nullopt;
  return line.substr(std::char_traits<char>::length(kHashPrefix));
}

/// Throws unless every present hash agrees.
inline void require_same_hash(const std::vector<std::pair<std::string, std::optional<std::string>>>& found) {
  std::optional<std::pair<std::string, std::string>> first;
  for (const auto& [what, h] : found) {
    if (!h) continue;
    if (!first) {
      first.emplace(what, *h);
    } else if (first->second != *h) {
      throw HashMismatch("config hash of " + what + " (" + *h + ") differs from " + first->first + " (" +
                         first->second + ")");
    }
  }
}

inline nlohmann::json subsets_artifact(const QualifiedSubsetCollection& c, const ObservationTable& t,
                                       const std::string& hash) {
  return {{"config_hash", hash}, {"collection", to_json(c, t)}};
}

inline nlohmann::json registry_artifact(const Registry& r, const std::string& hash) {
  return {{"config_hash", hash}, {"registry", to_json(r)}};
}

struct LoadedRegistry {
  Registry registry;
  std::optional<std::string> hash;
};

inline LoadedRegistry load_registry(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  LoadedRegistry out;
  try {
    if (j.contains("config_hash")) out.hash = j.at("config_hash").get<std::string>();
    out.registry = registry_from_json(j.contains("registry") ? j.at("registry") : j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

inline void save_support(const std::filesystem::path& path, const SupportSet& ss, const CsvOptions& csv,
                         const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << kHashPrefix << hash << '\n';
  write_table(out, ss.records, csv);
}

inline SupportSet load_support(const std::filesystem::path& path, CsvOptions csv) {
  csv.comment = '#';
  return make_support_set(load_table(path.string(), csv));
}

/// Columns of `t` reordered to `features`; every feature must be present.
inline ObservationTable align_features(const ObservationTable& t, const std::vector<std::string>& features) {
  std::vector<std::size_t> cols;
  for (const auto& f : features) {
    auto idx = t.feature_index(f);
    if (!idx) throw ParseError("input lacks feature '" + f + "' required by the registry");
    cols.push_back(*idx);
  }
  std::vector<std::size_t> rows(t.num_patients());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return t.select(rows, cols);
}

inline std::string format_tally(const std::map<std::string, std::size_t>& tally) {
  std::string out;
  for (const auto& [label, n] : tally) {
    if (!out.empty()) out += ',';
    out += label + ":" + std::to_string(n);
  }
  return out;
}

struct QueryPrediction {
  std::string id;
  EnsembleResult result;
};

inline std::vector<QueryPrediction> predict_queries(const EnsemblePredictor& pred, const ObservationTable& queries,
                                                    std::size_t workers = 1) {
  auto aligned = align_features(queries, pred.registry().feature_names);
  std::vector<QueryPrediction> out(aligned.num_patients());
  parallel_for(out.size(), workers, [&](std::size_t q) {
    out[q] = {aligned.patient_ids()[q], pred.predict(aligned.row(q))};
  });
  return out;
}

inline void write_predictions_tsv(std::ostream& out, const std::vector<QueryPrediction>& preds,
                                  const std::string& hash) {
  out << kHashPrefix << hash << '\n';
  out << "id\tclass\ttally\tselected\n";
  for (const auto& p : preds) {
    out << p.id << '\t' << p.result.label << '\t' << format_tally(p.result.tally) << '\t'
        << p.result.selected.size() << '\n';
  }
}

/// Local reports from trained registry records: the stored LOOCV accuracy and
/// the top-k3 nonzero-gain features of each record's model.
inline std::vector<LocalFeatureReport> reports_from_registry(const Registry& reg, std::size_t k3) {
  if (k3 < 1) throw std::invalid_argument("k3 must be positive");
  std::vector<LocalFeatureReport> out;
  for (const auto& m : reg.models) {
    if (!m.loocv_accuracy) {
      throw std::invalid_argument("registry lacks leave-one-out accuracies; train with LOOCV enabled");
    }
    LocalFeatureReport r;
    r.subset = m.subset;
    r.available = m.model.features;
    r.loocv_accuracy = *m.loocv_accuracy;
    for (const auto& [name, gain] : ranked_importance(m.model)) {
      if (r.top_features.size() == k3 || gain <= 0.0) break;
      r.top_features.emplace_back(name, gain);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_ranking_file(const std::filesystem::path& path, const GlobalFeatureRanking& g,
                               const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << kHashPrefix << hash << '\n';
  write_ranking_tsv(out, g);
}

// ---- run-all -----------------------------------------------------------------

struct RunSummary {
  std::string config_hash;
  std::filesystem::path output_dir;
  std::vector<std::string> artifacts;
  std::size_t num_subsets = 0;
  std::size_t num_models = 0;
  std::size_t num_predictions = 0;
  std::optional<double> query_accuracy;
};

inline CsvOptions query_csv(CsvOptions csv) {
  csv.label_optional = true;
  return csv;
}

/// Runs every stage and writes report.json, subsets.json, models.json,
/// support.csv, predictions.tsv, ranking.tsv and manifest.json into the
/// output directory.
inline RunSummary run_all(const PipelineConfig& cfg) {
  cfg.validate();
  if (!cfg.input) throw StageError("data_model", "no input table configured", true);
  const auto hash = config_hash(cfg);
  const std::filesystem::path dir = cfg.output_dir;
  RunSummary run;
  run.config_hash = hash;
  run.output_dir = dir;

  ObservationTable table;
  try {
    table = load_table(*cfg.input, cfg.csv);
    if (!table.has_labels()) throw ParseError("input has no label column");
  } catch (const std::exception& e) {
    throw StageError("data_model", e.what(), true);
  }
  std::filesystem::create_directories(dir);
  auto emit = [&](const std::string& name) { run.artifacts.push_back(name); return dir / name; };

  auto report = to_json(assess(build_mask(table), table.feature_names(), cfg.assess_threshold));
  report["config_hash"] = hash;
  write_json_file(emit("report.json"), report);

  QualifiedSubsetCollection subsets;
  try {
    subsets = extract_subsets(table, cfg.elmv);
  } catch (const std::exception& e) {
    throw StageError("subset_gen", e.what());
  }
  run.num_subsets = subsets.subsets.size();
  write_json_file(emit("subsets.json"), subsets_artifact(subsets, table, hash));

  Registry registry;
  try {
    auto opt = registry_options(cfg.elmv, cfg.workers);
    opt.with_loocv = cfg.loocv;
    registry = build_registry(table, subsets, opt);
  } catch (const std::exception& e) {
    throw StageError("base_learner", e.what());
  }
  run.num_models = registry.models.size();
  write_json_file(emit("models.json"), registry_artifact(registry, hash));

  try {
    auto support = support_for(table, cfg.elmv);
    save_support(emit("support.csv"), support, cfg.csv, hash);
    const auto ens = cfg.elmv.ensemble_config(support.size());
    EnsemblePredictor pred(registry, std::move(support), ens);
    ObservationTable queries = cfg.queries ? load_table(*cfg.queries, query_csv(cfg.csv)) : table;
    auto preds = predict_queries(pred, queries, cfg.workers);
    std::ofstream out(emit("predictions.tsv"));
    write_predictions_tsv(out, preds, hash);
    run.num_predictions = preds.size();
    if (queries.has_labels() && !preds.empty()) {
      std::size_t ok = 0;
      for (std::size_t q = 0; q < preds.size(); ++q) ok += preds[q].result.label == queries.labels()[q];
      run.query_accuracy = double(ok) / double(preds.size());
    }
  } catch (const ParseError& e) {
    throw StageError("ensemble", e.what(), true);
  } catch (const std::exception& e) {
    throw StageError("ensemble", e.what());
  }

  if (cfg.loocv) {
    try {
      auto ranking = rank_features(reports_from_registry(registry, cfg.elmv.k3), cfg.elmv.rate_bin_width, cfg.elmv.k4);
      write_ranking_file(emit("ranking.tsv"), ranking, hash);
    } catch (const std::exception& e) {
      throw StageError("feature_id", e.what());
    }
  }

  nlohmann::json manifest = {{"config_hash", hash},
                             {"config", to_json(cfg)},
                             {"seeds", {{"support_seed", cfg.elmv.support_seed}, {"learner_seed", cfg.elmv.learner.seed}}},
                             {"artifacts", run.artifacts},
                             {"num_subsets", run.num_subsets},
                             {"num_models", run.num_models},
                             {"num_predictions", run.num_predictions}};
  if (run.query_accuracy) manifest["query_accuracy"] = *run.query_accuracy;
  write_json_file(dir / "manifest.json", manifest);
  run.artifacts.push_back("manifest.json");
  return run;
}

}  // namespace elmv
