// elmv: command-line front end for the ELMV pipeline.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 pipeline error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "elmv/datasets/iris.hpp"
#include "elmv/log.hpp"
#include "elmv/pipeline.hpp"
#include "elmv/simulation.hpp"

namespace fs = std::filesystem;
using namespace elmv;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kPipelineError = 3;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Override = std::function<void(PipelineConfig&)>;

/// Settings shared by every subcommand: a config file plus flag overrides.
struct Settings {
  std::string config_path;
  std::vector<Override> overrides;

  template <typename T, typename F>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& desc, F set) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(name, *value, desc);
    overrides.push_back([value, opt, set](PipelineConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& desc,
                    std::function<void(PipelineConfig&)> set) {
    auto* opt = app->add_flag(name, desc);
    overrides.push_back([opt, set](PipelineConfig& c) {
      if (opt->count() > 0) set(c);
    });
    return opt;
  }

  PipelineConfig resolve() const {
    PipelineConfig c;
    c.workers = default_workers();
    try {
      if (!config_path.empty()) c = load_pipeline_config(config_path, c);
      for (const auto& o : overrides) o(c);
      c.validate();
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(std::string("invalid configuration: ") + e.what());
    }
    return c;
  }
};

void add_common(CLI::App* app, Settings& s) {
  app->add_option("--config", s.config_path, "JSON configuration file; flags override its values");
  s.add<std::string>(app, "--label-column", "column holding class labels",
                     [](PipelineConfig& c, const std::string& v) {
                       if (v.empty()) c.csv.label_column.reset();
                       else c.csv.label_column = v;
                     });
  s.add<std::string>(app, "--id-column", "column holding record ids (empty: number rows)",
                     [](PipelineConfig& c, const std::string& v) {
                       if (v.empty()) c.csv.id_column.reset();
                       else c.csv.id_column = v;
                     });
  s.add<std::string>(app, "--separator", "field separator (one character, or 'tab')",
                     [](PipelineConfig& c, const std::string& v) {
                       c.csv = csv_from_json({{"separator", v}}, c.csv);
                     });
  s.add<std::vector<std::string>>(app, "--missing", "tokens read as missing values",
                                  [](PipelineConfig& c, const std::vector<std::string>& v) {
                                    c.csv.missing_tokens = {v.begin(), v.end()};
                                  });
  s.add<std::size_t>(app, "--workers", "worker threads (default ELMV_WORKERS or all cores)",
                     [](PipelineConfig& c, std::size_t v) { c.workers = v; });
}

void add_subset_flags(CLI::App* app, Settings& s) {
  s.add<double>(app, "--cap", "maximum missing rate of a qualified subset",
                [](PipelineConfig& c, double v) { c.elmv.cap = v; });
  s.add<double>(app, "--bin-width", "missing-rate bin width",
                [](PipelineConfig& c, double v) { c.elmv.rate_bin_width = v; });
  s.add<std::size_t>(app, "--min-rows", "minimum rows per subset",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.min_rows = v; });
  s.add<std::size_t>(app, "--min-cols", "minimum columns per subset",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.min_cols = v; });
}

void add_learner_flags(CLI::App* app, Settings& s) {
  s.add<int>(app, "--rounds", "boosting rounds", [](PipelineConfig& c, int v) { c.elmv.learner.num_rounds = v; });
  s.add<double>(app, "--eta", "learning rate", [](PipelineConfig& c, double v) { c.elmv.learner.learning_rate = v; });
  s.add<int>(app, "--depth", "maximum tree depth", [](PipelineConfig& c, int v) { c.elmv.learner.max_depth = v; });
  s.add<std::size_t>(app, "--folds", "cross-validation folds",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.cv_folds = v; });
  s.add<std::size_t>(app, "--support-size", "support set size",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.support_size = v; });
  s.add<std::uint64_t>(app, "--support-seed", "support set sampling seed",
                       [](PipelineConfig& c, std::uint64_t v) { c.elmv.support_seed = v; });
}

void add_ensemble_flags(CLI::App* app, Settings& s) {
  s.add<double>(app, "--wf", "weight of the feature distance",
                [](PipelineConfig& c, double v) { c.elmv.weights.w_f = v; });
  s.add<double>(app, "--wm", "weight of the missingness distance",
                [](PipelineConfig& c, double v) { c.elmv.weights.w_m = v; });
  s.add<std::size_t>(app, "--k1", "most similar support records checked",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.k1 = v; });
  s.add<std::size_t>(app, "--k2", "correct answers needed among them",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.k2 = v; });
}

void add_feature_flags(CLI::App* app, Settings& s) {
  s.add<std::size_t>(app, "--k3", "top features taken from each subset model",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.k3 = v; });
  s.add<std::size_t>(app, "--k4", "features kept in the global ranking",
                     [](PipelineConfig& c, std::size_t v) { c.elmv.k4 = v; });
}

ObservationTable load_labeled(const std::string& path, const CsvOptions& csv) {
  auto t = load_table(path, csv);
  if (!t.has_labels()) throw ParseError(path + ": no label column");
  return t;
}

fs::path prepare_output(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(prepare_output(path));
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

// ---- subcommands -------------------------------------------------------------

struct AssessArgs {
  std::string input, out, mask_out;
};

int cmd_assess(const Settings& s, const AssessArgs& a) {
  auto cfg = s.resolve();
  auto csv = cfg.csv;
  csv.label_optional = true;
  auto table = load_table(a.input, csv);
  auto mask = build_mask(table);
  auto rep = to_json(assess(mask, table.feature_names(), cfg.assess_threshold));
  rep["config_hash"] = config_hash(cfg);
  if (a.out.empty()) {
    std::cout << rep.dump(1) << '\n';
  } else {
    write_json_file(prepare_output(a.out), rep);
  }
  if (!a.mask_out.empty()) {
    auto out = open_output(a.mask_out);
    write_mask_tsv(out, mask, table);
  }
  return 0;
}

struct SubsetsArgs {
  std::string input, out;
};

int cmd_subsets(const Settings& s, const SubsetsArgs& a) {
  auto cfg = s.resolve();
  auto table = load_table(a.input, [&] {
    auto csv = cfg.csv;
    csv.label_optional = true;
    return csv;
  }());
  QualifiedSubsetCollection c;
  try {
    c = extract_subsets(table, cfg.elmv);
  } catch (const std::exception& e) {
    throw StageError("subset_gen", e.what());
  }
  write_json_file(prepare_output(a.out), subsets_artifact(c, table, config_hash(cfg)));
  std::cerr << c.subsets.size() << " qualified subsets\n";
  return 0;
}

struct TrainArgs {
  std::string input, subsets, out, support_out;
  bool no_loocv = false;
};

int cmd_train(const Settings& s, const TrainArgs& a) {
  auto cfg = s.resolve();
  if (a.no_loocv) cfg.loocv = false;
  const auto hash = config_hash(cfg);
  auto table = load_labeled(a.input, cfg.csv);
  QualifiedSubsetCollection subsets;
  if (!a.subsets.empty()) {
    auto j = read_json_file(a.subsets);
    try {
      subsets = collection_from_json(j.contains("collection") ? j.at("collection") : j, table);
    } catch (const std::exception& e) {
      throw ParseError(a.subsets + ": " + e.what());
    }
  } else {
    try {
      subsets = extract_subsets(table, cfg.elmv);
    } catch (const std::exception& e) {
      throw StageError("subset_gen", e.what());
    }
  }
  Registry reg;
  try {
    auto opt = registry_options(cfg.elmv, cfg.workers);
    opt.with_loocv = cfg.loocv;
    reg = build_registry(table, subsets, opt);
  } catch (const std::exception& e) {
    throw StageError("base_learner", e.what());
  }
  write_json_file(prepare_output(a.out), registry_artifact(reg, hash));
  if (!a.support_out.empty()) save_support(prepare_output(a.support_out), support_for(table, cfg.elmv), cfg.csv, hash);
  std::cerr << reg.models.size() << " models trained\n";
  return 0;
}

struct PredictArgs {
  std::string registry, support, input, out;
};

int cmd_predict(const Settings& s, const PredictArgs& a) {
  auto cfg = s.resolve();
  auto loaded = load_registry(a.registry);
  require_same_hash({{a.registry, loaded.hash}, {a.support, read_hash_line(a.support)}});
  auto support = load_support(a.support, cfg.csv);
  auto queries = load_table(a.input, query_csv(cfg.csv));
  std::vector<QueryPrediction> preds;
  try {
    const auto ens = cfg.elmv.ensemble_config(support.size());
    EnsemblePredictor pred(std::move(loaded.registry), std::move(support), ens);
    preds = predict_queries(pred, queries, cfg.workers);
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("ensemble", e.what());
  }
  auto out = open_output(a.out);
  write_predictions_tsv(out, preds, loaded.hash.value_or(config_hash(cfg)));
  return 0;
}

struct FeaturesArgs {
  std::string registry, out, input;
};

int cmd_features(const Settings& s, const FeaturesArgs& a) {
  auto cfg = s.resolve();
  auto loaded = load_registry(a.registry);
  std::vector<LocalFeatureReport> reports;
  try {
    if (!a.input.empty()) {
      // recompute from the data rather than the stored models
      auto table = load_labeled(a.input, cfg.csv);
      auto aligned = align_features(table, loaded.registry.feature_names);
      QualifiedSubsetCollection c;
      for (const auto& m : loaded.registry.models) c.subsets.push_back(m.subset);
      reports = local_reports(aligned, c, cfg.elmv.learner, cfg.elmv.k3, cfg.workers);
    } else {
      reports = reports_from_registry(loaded.registry, cfg.elmv.k3);
    }
    auto ranking = rank_features(reports, cfg.elmv.rate_bin_width, cfg.elmv.k4);
    write_ranking_file(prepare_output(a.out), ranking, loaded.hash.value_or(config_hash(cfg)));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("feature_id", e.what());
  }
  return 0;
}

struct SimulateArgs {
  std::string config, out;
  std::optional<std::size_t> workers;
};

int cmd_simulate(const SimulateArgs& a) {
  auto j = read_json_file(a.config);
  SimulationConfig sim;
  try {
    ObservationTable seed = datasets::iris();
    const std::string dataset = j.value("dataset", std::string("iris"));
    if (dataset != "iris") {
      auto csv = csv_from_json(j.value("csv", nlohmann::json::object()), PipelineConfig::default_csv());
      fs::path p(dataset);
      if (p.is_relative()) p = fs::path(a.config).parent_path() / p;
      seed = load_labeled(p.string(), csv);
    }
    sim = simulation_config_from_json(j, std::move(seed));
    sim.workers = a.workers.value_or(j.contains("workers") ? sim.workers : default_workers());
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("invalid simulation configuration: ") + e.what());
  }
  fs::create_directories(a.out);
  std::vector<TrialResult> results;
  try {
    results = run_trials(sim);
  } catch (const std::exception& e) {
    throw StageError("simulation", e.what());
  }
  std::ofstream tsv(fs::path(a.out) / "results.tsv");
  write_results_tsv(tsv, results);
  write_json_file(fs::path(a.out) / "summary.json", summary_json(results, sim.moving_average_window));
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.error.has_value();
  std::cerr << results.size() << " trials, " << failed << " failed\n";
  return 0;
}

int cmd_run_all(const Settings& s) {
  auto cfg = s.resolve();
  auto run = run_all(cfg);
  std::cerr << "config_hash " << run.config_hash << ": " << run.num_subsets << " subsets, " << run.num_models
            << " models, " << run.num_predictions << " predictions";
  if (run.query_accuracy) std::cerr << ", accuracy " << *run.query_accuracy;
  std::cerr << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ELMV: ensemble learning for tables with many missing values"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress at info level");

  Settings s;

  AssessArgs assess_args;
  auto* assess = app.add_subcommand("assess", "report missingness and whether ELMV is recommended");
  add_common(assess, s);
  assess->add_option("--input", assess_args.input, "input CSV")->required();
  assess->add_option("--out", assess_args.out, "report JSON (default stdout)");
  assess->add_option("--mask-out", assess_args.mask_out, "0/1 missingness TSV");
  s.add<double>(assess, "--threshold", "overall rate above which ELMV is recommended",
                [](PipelineConfig& c, double v) { c.assess_threshold = v; });

  SubsetsArgs subsets_args;
  auto* subsets = app.add_subcommand("subsets", "extract qualified low-missingness subsets");
  add_common(subsets, s);
  add_subset_flags(subsets, s);
  subsets->add_option("--input", subsets_args.input, "input CSV")->required();
  subsets->add_option("--out", subsets_args.out, "subsets JSON")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one model per qualified subset");
  add_common(train, s);
  add_subset_flags(train, s);
  add_learner_flags(train, s);
  train->add_option("--input", train_args.input, "labeled input CSV")->required();
  train->add_option("--subsets", train_args.subsets, "subsets JSON (regenerated when omitted)");
  train->add_option("--out", train_args.out, "registry JSON")->required();
  train->add_option("--support-out", train_args.support_out, "support set CSV");
  train->add_flag("--no-loocv", train_args.no_loocv, "skip leave-one-out accuracies");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "ensemble prediction for query records");
  add_common(predict, s);
  add_ensemble_flags(predict, s);
  predict->add_option("--registry", predict_args.registry, "registry JSON")->required();
  predict->add_option("--support", predict_args.support, "support set CSV")->required();
  predict->add_option("--input", predict_args.input, "query CSV")->required();
  predict->add_option("--out", predict_args.out, "predictions TSV")->required();

  FeaturesArgs features_args;
  auto* features = app.add_subcommand("features", "global critical-feature ranking");
  add_common(features, s);
  add_feature_flags(features, s);
  s.add<double>(features, "--bin-width", "missing-rate bin width",
                [](PipelineConfig& c, double v) { c.elmv.rate_bin_width = v; });
  features->add_option("--registry", features_args.registry, "registry JSON")->required();
  features->add_option("--out", features_args.out, "ranking TSV")->required();
  features->add_option("--input", features_args.input, "labeled CSV; recompute reports from the data");

  SimulateArgs simulate_args;
  auto* simulate = app.add_subcommand("simulate", "run the missing-rate simulation harness");
  simulate->add_option("--config", simulate_args.config, "simulation JSON")->required();
  simulate->add_option("--out", simulate_args.out, "output directory")->required();
  simulate->add_option("--workers", simulate_args.workers, "worker threads");

  auto* run_all_cmd = app.add_subcommand("run-all", "every stage end to end");
  add_common(run_all_cmd, s);
  add_subset_flags(run_all_cmd, s);
  add_learner_flags(run_all_cmd, s);
  add_ensemble_flags(run_all_cmd, s);
  add_feature_flags(run_all_cmd, s);
  s.add<std::string>(run_all_cmd, "--input", "labeled input CSV",
                     [](PipelineConfig& c, const std::string& v) { c.input = v; });
  s.add<std::string>(run_all_cmd, "--queries", "CSV to predict (default: the input)",
                     [](PipelineConfig& c, const std::string& v) { c.queries = v; });
  s.add<std::string>(run_all_cmd, "--out-dir", "output directory",
                     [](PipelineConfig& c, const std::string& v) { c.output_dir = v; });
  s.flag(run_all_cmd, "--no-loocv", "skip leave-one-out accuracies and the ranking",
         [](PipelineConfig& c) { c.loocv = false; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }
  if (verbose) logger()->set_level(spdlog::level::info);

  try {
    if (*assess) return cmd_assess(s, assess_args);
    if (*subsets) return cmd_subsets(s, subsets_args);
    if (*train) return cmd_train(s, train_args);
    if (*predict) return cmd_predict(s, predict_args);
    if (*features) return cmd_features(s, features_args);
    if (*simulate) return cmd_simulate(simulate_args);
    if (*run_all_cmd) return cmd_run_all(s);
  } catch (const StageError& e) {
    std::cerr << "elmv: " << e.what() << '\n';
    return e.data_error() ? kDataError : kPipelineError;
  } catch (const ParseError& e) {
    std::cerr << "elmv: " << e.what() << '\n';
    return kDataError;
  } catch (const HashMismatch& e) {
    std::cerr << "elmv: " << e.what() << '\n';
    return kDataError;
  } catch (const DataError& e) {
    std::cerr << "elmv: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "elmv: " << e.what() << '\n';
    return kPipelineError;
  }
  return kUsage;
}
