#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elmv/datasets/iris.hpp"
#include "elmv/pipeline.hpp"
#include "elmv/simulation.hpp"
#include "test_util.hpp"

using namespace elmv;
using elmv::testing::TempDir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status;
  std::string err;
};

/// Runs the CLI with stdout and stderr captured into `dir`.
Run cli(const TempDir& dir, const std::string& args) {
  const auto err = dir.file("stderr.txt");
  const std::string cmd = std::string(ELMV_CLI_PATH) + " " + args + " >" + dir.file("stdout.txt") + " 2>" + err;
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
}

std::string q(const std::string& s) { return "'" + s + "'"; }

const std::string kIris = ELMV_DATA_DIR "/iris.csv";

class Cli : public ::testing::Test {
 protected:
  TempDir dir;

  std::string masked(double rate, std::uint64_t seed, const std::string& name) {
    save_table(dir.file(name), mask_random(datasets::iris(), rate, seed), PipelineConfig::default_csv());
    return dir.file(name);
  }
};

TEST_F(Cli, AssessCompleteTable) {
  auto r = cli(dir, "assess --input " + q(kIris) + " --label-column species --out " + q(dir.file("rep.json")));
  ASSERT_EQ(r.status, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(dir.file("rep.json")));
  EXPECT_EQ(j.at("overall_rate").get<double>(), 0.0);
  EXPECT_EQ(j.at("recommendation"), "imputation_ok");
}

TEST_F(Cli, AssessHeavilyMaskedTable) {
  auto t = mask_random(expand(datasets::iris(), {0.1, 0.5}, 1), 0.6, 2);
  save_table(dir.file("m.csv"), t, PipelineConfig::default_csv());
  auto r = cli(dir, "assess --input " + q(dir.file("m.csv")) + " --out " + q(dir.file("rep.json")) +
                        " --mask-out " + q(dir.file("mask.tsv")));
  ASSERT_EQ(r.status, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(dir.file("rep.json")));
  EXPECT_NEAR(j.at("overall_rate").get<double>(), 0.6, 1e-9);
  EXPECT_EQ(j.at("recommendation"), "elmv_recommended");
  EXPECT_TRUE(std::filesystem::exists(dir.file("mask.tsv")));
}

TEST_F(Cli, MissingFileNamesThePath) {
  auto r = cli(dir, "assess --input " + q(dir.file("no_such_table.csv")));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("no_such_table.csv"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(cli(dir, "").status, 1);
  EXPECT_EQ(cli(dir, "frobnicate").status, 1);
  EXPECT_EQ(cli(dir, "subsets --input x.csv").status, 1);
  EXPECT_EQ(cli(dir, "--help").status, 0);
}

TEST_F(Cli, InvalidConfigValueIsDataError) {
  std::ofstream(dir.file("c.json")) << R"({"elmv": {"cap": 3}})";
  auto r = cli(dir, "assess --input " + q(kIris) + " --config " + q(dir.file("c.json")));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("cap"), std::string::npos);
}

TEST_F(Cli, StageByStage) {
  const auto in = masked(0.2, 4, "in.csv");
  const std::string common = " --cap 0.25 --rounds 10 --folds 5";
  auto r = cli(dir, "subsets --input " + q(in) + " --cap 0.25 --out " + q(dir.file("subsets.json")));
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir, "train --input " + q(in) + " --subsets " + q(dir.file("subsets.json")) + common + " --out " +
                   q(dir.file("models.json")) + " --support-out " + q(dir.file("support.csv")));
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir, "predict --registry " + q(dir.file("models.json")) + " --support " + q(dir.file("support.csv")) +
                   " --input " + q(in) + " --k1 8 --k2 4 --wf 0.6 --wm 0.4 --out " + q(dir.file("pred.tsv")));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto pred = slurp(dir.file("pred.tsv"));
  EXPECT_EQ(pred.rfind("# config_hash=", 0), 0u);
  EXPECT_NE(pred.find("\nid\tclass\ttally\tselected\n"), std::string::npos);
  EXPECT_EQ(std::count(pred.begin(), pred.end(), '\n'), 152);
  r = cli(dir, "features --registry " + q(dir.file("models.json")) + " --k3 2 --k4 3 --out " +
                   q(dir.file("rank.tsv")));
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rank = slurp(dir.file("rank.tsv"));
  EXPECT_EQ(std::count(rank.begin(), rank.end(), '\n'), 5);
  r = cli(dir, "features --registry " + q(dir.file("models.json")) + " --input " + q(in) + " --k3 2 --out " +
                   q(dir.file("rank2.tsv")));
  ASSERT_EQ(r.status, 0) << r.err;
}

TEST_F(Cli, PredictRejectsMismatchedArtifacts) {
  const auto in = masked(0.2, 4, "in.csv");
  auto r = cli(dir, "train --input " + q(in) + " --cap 0.25 --rounds 5 --folds 5 --no-loocv --out " +
                        q(dir.file("models.json")) + " --support-out " + q(dir.file("support.csv")));
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir, "train --input " + q(in) + " --cap 0.25 --rounds 6 --folds 5 --no-loocv --out " +
                   q(dir.file("other.json")) + " --support-out " + q(dir.file("support2.csv")));
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir, "predict --registry " + q(dir.file("models.json")) + " --support " + q(dir.file("support2.csv")) +
                   " --input " + q(in) + " --out " + q(dir.file("pred.tsv")));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("config hash"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir.file("pred.tsv")));
}

TEST_F(Cli, FeaturesNeedLoocvAccuracies) {
  const auto in = masked(0.2, 4, "in.csv");
  ASSERT_EQ(cli(dir, "train --input " + q(in) + " --cap 0.25 --rounds 5 --folds 5 --no-loocv --out " +
                         q(dir.file("models.json")))
                .status,
            0);
  auto r = cli(dir, "features --registry " + q(dir.file("models.json")) + " --out " + q(dir.file("rank.tsv")));
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("feature_id"), std::string::npos);
}

TEST_F(Cli, RunAllArtifactsAndDeterminism) {
  const auto in = masked(0.2, 7, "in.csv");
  std::ofstream(dir.file("c.json")) << nlohmann::json{
      {"input", in},
      {"output_dir", dir.file("out")},
      {"elmv", {{"cap", 0.25}, {"cv_folds", 5}, {"learner", {{"num_rounds", 10}}}}}};
  auto r = cli(dir, "run-all --config " + q(dir.file("c.json")));
  ASSERT_EQ(r.status, 0) << r.err;
  for (const char* f : {"subsets.json", "models.json", "predictions.tsv", "ranking.tsv", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / f)) << f;
  const auto p1 = slurp(dir.file("out/predictions.tsv")), r1 = slurp(dir.file("out/ranking.tsv"));
  const auto h1 = nlohmann::json::parse(slurp(dir.file("out/manifest.json"))).at("config_hash");
  r = cli(dir, "run-all --config " + q(dir.file("c.json")) + " --workers 2");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(slurp(dir.file("out/predictions.tsv")), p1);
  EXPECT_EQ(slurp(dir.file("out/ranking.tsv")), r1);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir.file("out/manifest.json"))).at("config_hash"), h1);
  r = cli(dir, "run-all --config " + q(dir.file("c.json")) + " --k1 6");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(nlohmann::json::parse(slurp(dir.file("out/manifest.json"))).at("config_hash"), h1);
}

TEST_F(Cli, RunAllWritesOnlyIntoOutputDir) {
  const auto in = masked(0.2, 7, "in.csv");
  std::filesystem::create_directories(dir.file("work"));
  cli(dir, "--help");  // creates the capture files
  const auto before = std::distance(std::filesystem::directory_iterator(dir.path()), {});
  auto r = cli(dir, "run-all --input " + q(in) + " --out-dir " + q(dir.file("work/out")) +
                        " --cap 0.25 --rounds 5 --folds 5");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path()), {}), before);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.file("work")), {}), 1);
}

TEST_F(Cli, RunAllCapFailureNamesStage) {
  const auto in = masked(0.6, 3, "in.csv");
  auto r = cli(dir, "run-all --input " + q(in) + " --out-dir " + q(dir.file("out")) +
                        " --cap 0 --min-rows 100 --min-cols 4");
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("subset_gen"), std::string::npos);
  EXPECT_NE(r.err.find("no qualified subsets"), std::string::npos);
}

TEST_F(Cli, SimulateWritesResultsAndSummary) {
  std::ofstream(dir.file("sim.json")) << R"({"dataset": "iris", "copies_per_feature": 1, "noise_levels": [0.1],
      "missing_rates": [0.1], "trial_seeds": [1], "methods": ["base_no_impute", "mean_impute"]})";
  auto r = cli(dir, "simulate --config " + q(dir.file("sim.json")) + " --out " + q(dir.file("res")) + " --workers 1");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto tsv = slurp(dir.file("res/results.tsv"));
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);
  auto j = nlohmann::json::parse(slurp(dir.file("res/summary.json")));
  EXPECT_TRUE(j.at("methods").contains("mean_impute"));
  std::ofstream(dir.file("bad.json")) << R"({"missing_rate": [0.1]})";
  EXPECT_EQ(cli(dir, "simulate --config " + q(dir.file("bad.json")) + " --out " + q(dir.file("res2"))).status, 2);
}

}  // namespace
