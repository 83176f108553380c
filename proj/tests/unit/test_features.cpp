#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "elmv/datasets/iris.hpp"
#include "elmv/features.hpp"
#include "elmv/simulation.hpp"

using namespace elmv;

namespace {

LocalFeatureReport report(double rate, double acc, std::vector<std::string> available,
                          std::vector<std::string> top) {
  LocalFeatureReport r;
  r.subset.missing_rate = rate;
  r.loocv_accuracy = acc;
  r.available = std::move(available);
  double g = 10.0;
  for (auto& f : top) r.top_features.emplace_back(f, g--);
  return r;
}

const RankingEntry* find(const GlobalFeatureRanking& g, const std::string& f) {
  for (const auto& e : g.entries)
    if (e.feature == f) return &e;
  return nullptr;
}

ObservationTable informative_plus_constants() {
  auto iris = datasets::iris();
  std::vector<Cell> vals;
  for (std::size_t i = 0; i < iris.num_patients(); ++i) {
    vals.push_back(iris.at(i, 2));
    vals.push_back(1.0);
    vals.push_back(std::nullopt);
    vals.push_back(-3.0);
  }
  return ObservationTable(iris.patient_ids(), {"petal_length", "c1", "empty", "c2"}, vals, iris.labels());
}

std::vector<LocalFeatureReport> random_reports(std::mt19937_64& rng, std::size_t n) {
  const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g"};
  std::vector<LocalFeatureReport> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::string> avail, top;
    for (const auto& f : pool)
      if (rng() % 2) avail.push_back(f);
    if (avail.empty()) avail.push_back("a");
    for (const auto& f : avail)
      if (rng() % 3 == 0) top.push_back(f);
    out.push_back(report(double(rng() % 20) / 100.0, double(rng() % 101) / 100.0, avail, top));
  }
  return out;
}

}  // namespace

TEST(LocalReport, InformativeFeatureWins) {
  LearnerParams p;
  p.num_rounds = 10;
  auto rep = local_report(informative_plus_constants(), p, 1);
  ASSERT_EQ(rep.top_features.size(), 1u);
  EXPECT_EQ(rep.top_features[0].first, "petal_length");
  EXPECT_GT(rep.loocv_accuracy, 0.9);
}

TEST(LocalReport, LargeK3KeepsOnlyNonzeroGain) {
  LearnerParams p;
  p.num_rounds = 10;
  auto t = informative_plus_constants();
  auto rep = local_report(t, p, 10);
  std::size_t nonzero = 0;
  for (const auto& [f, g] : feature_importance(train(t, p))) nonzero += g > 0.0;
  EXPECT_EQ(rep.top_features.size(), nonzero);
  for (std::size_t k = 1; k < rep.top_features.size(); ++k)
    EXPECT_GE(rep.top_features[k - 1].second, rep.top_features[k].second);
  EXPECT_EQ(rep.available, t.feature_names());
  EXPECT_THROW(local_report(t, p, 0), std::invalid_argument);
}

TEST(LocalReport, LowNoiseCopyOutranksHighNoiseCopy) {
  LearnerParams p;
  p.num_rounds = 10;
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 11; ++seed) {
    auto full = expand(datasets::iris(), {0.1, 2.0}, seed);
    // petal_length@0.1 and petal_length@2 only
    auto lo = *full.feature_index("petal_length@0.1"), hi = *full.feature_index("petal_length@2");
    std::vector<std::size_t> rows(full.num_patients());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const std::vector<std::size_t> cols{hi, lo};
    auto rep = local_report(full.select(rows, cols), p, 2);
    double g_lo = 0, g_hi = 0;
    for (const auto& [f, g] : rep.top_features) (f == "petal_length@0.1" ? g_lo : g_hi) = g;
    wins += g_lo > g_hi;
  }
  EXPECT_GE(wins, 6);
}

TEST(RankFeatures, SingleReportKeepsItsOrder) {
  auto g = rank_features({report(0.1, 0.9, {"x", "y", "z", "w"}, {"z", "x"})}, 0.05, 10);
  ASSERT_EQ(g.entries.size(), 4u);
  EXPECT_EQ(g.entries[0].feature, "z");
  EXPECT_EQ(g.entries[1].feature, "x");
  for (const auto& e : g.entries) EXPECT_TRUE(e.ratio == 0.0 || e.ratio == 1.0);
  EXPECT_DOUBLE_EQ(g.entries[0].weighted_score, 0.9);
  EXPECT_EQ(g.entries[2].weighted_score, 0.0);
}

TEST(RankFeatures, RatioIsSelectedOverAvailable) {
  std::vector<LocalFeatureReport> reps{report(0.10, 0.8, {"f", "g"}, {"f"}), report(0.11, 0.8, {"f", "g"}, {"f"}),
                                       report(0.12, 0.8, {"f", "g"}, {"f"}), report(0.13, 0.8, {"f", "g"}, {"g"})};
  auto g = rank_features(reps, 0.05, 10);
  auto* f = find(g, "f");
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->availability_count, 4u);
  EXPECT_EQ(f->selection_count, 3u);
  EXPECT_DOUBLE_EQ(f->bin_ratio.at(2), 0.75);
  EXPECT_DOUBLE_EQ(f->weighted_score, 0.8 * 0.75);
}

TEST(RankFeatures, BinsWeightedByMeanAccuracy) {
  // bin 0 (weight 0.5): a selected 1/2 ; bin 3 (weight 1.0): a selected 1/1
  std::vector<LocalFeatureReport> reps{report(0.01, 0.4, {"a", "b"}, {"a"}), report(0.02, 0.6, {"a", "b"}, {"b"}),
                                       report(0.16, 1.0, {"a"}, {"a"})};
  auto g = rank_features(reps, 0.05, 10);
  EXPECT_DOUBLE_EQ(g.bin_weight.at(0), 0.5);
  EXPECT_DOUBLE_EQ(g.bin_weight.at(3), 1.0);
  EXPECT_DOUBLE_EQ(find(g, "a")->weighted_score, 0.5 * 0.5 + 1.0 * 1.0);
  EXPECT_DOUBLE_EQ(find(g, "b")->weighted_score, 0.5 * 0.5);
  EXPECT_EQ(g.entries[0].feature, "a");
}

TEST(RankFeatures, AvailabilityMatchesIndependentRecount) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto reps = random_reports(rng, 1 + rng() % 12);
    auto g = rank_features(reps, 0.05, 100);
    for (const auto& e : g.entries) {
      std::size_t avail = 0, sel = 0;
      for (const auto& r : reps) {
        avail += std::count(r.available.begin(), r.available.end(), e.feature);
        for (const auto& [f, _] : r.top_features) sel += f == e.feature;
      }
      EXPECT_EQ(e.availability_count, avail);
      EXPECT_EQ(e.selection_count, sel);
      EXPECT_GE(e.ratio, 0.0);
      EXPECT_LE(e.ratio, 1.0);
      for (const auto& [b, r] : e.bin_ratio) {
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0);
      }
    }
    for (std::size_t k = 1; k < g.entries.size(); ++k)
      EXPECT_GE(g.entries[k - 1].weighted_score, g.entries[k].weighted_score);
  }
}

TEST(RankFeatures, RaisingBinAccuracyNeverLowersItsFeature) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto reps = random_reports(rng, 6);
    reps.push_back(report(0.90, 0.3, {"solo", "a"}, {"solo"}));
    const double before = find(rank_features(reps, 0.05, 100), "solo")->weighted_score;
    reps.back().loocv_accuracy = 0.9;
    const double after = find(rank_features(reps, 0.05, 100), "solo")->weighted_score;
    EXPECT_GE(after, before);
  }
}

TEST(RankFeatures, AbsentFeatureNeverRanked) {
  auto g = rank_features({report(0.1, 0.9, {"x", "y"}, {"x"})}, 0.05, 10);
  EXPECT_EQ(find(g, "never"), nullptr);
  EXPECT_THROW(rank_features({report(0.1, 0.9, {"x"}, {"ghost"})}, 0.05, 10), std::invalid_argument);
  EXPECT_THROW(rank_features({}, 0.05, 10), std::invalid_argument);
}

TEST(RankFeatures, TiesOrderBySelectionCountThenGainThenName) {
  // p and q score equally (ratio 1 in the same bin), q is selected more often
  std::vector<LocalFeatureReport> reps{report(0.1, 1.0, {"p", "q"}, {"q"}), report(0.1, 1.0, {"q"}, {"q"}),
                                       report(0.3, 1.0, {"p"}, {"p"})};
  auto g = rank_features(reps, 0.05, 10);
  ASSERT_GE(g.entries.size(), 2u);
  EXPECT_EQ(g.entries[0].feature, "q");
  EXPECT_EQ(g.entries[1].feature, "p");
  auto h = rank_features({report(0.1, 1.0, {"n", "m"}, {"n", "m"})}, 0.05, 10);
  EXPECT_EQ(h.entries[0].feature, "n");
  auto r1 = report(0.1, 1.0, {"n", "m"}, {"n"}), r2 = report(0.1, 1.0, {"n", "m"}, {"m"});
  auto i = rank_features({r1, r2}, 0.05, 10);
  EXPECT_EQ(i.entries[0].feature, "m");
}

TEST(RankFeatures, TruncatesToK4) {
  auto g = rank_features({report(0.1, 0.9, {"a", "b", "c", "d"}, {"a", "b", "c"})}, 0.05, 2);
  EXPECT_EQ(g.entries.size(), 2u);
  EXPECT_EQ(g.k4, 2u);
}

TEST(RankFeatures, TsvLayout) {
  auto g = rank_features({report(0.01, 0.5, {"a", "b"}, {"a"}), report(0.16, 1.0, {"a"}, {"a"})}, 0.05, 10);
  std::ostringstream out;
  write_ranking_tsv(out, g);
  EXPECT_EQ(out.str(),
            "feature\tselection_count\tavailability_count\tratio\tratio_0-0.05\tratio_0.15-0.2\tweighted_score\trank\n"
            "a\t2\t2\t1\t1\t1\t1.5\t1\n"
            "b\t0\t1\t0\t0\t\t0\t2\n");
}

TEST(RankFeatures, LocalReportsOverQualifiedSubsets) {
  auto t = mask_random(datasets::iris(), 0.2, 5);
  auto subsets = filter_qualified(generate_table(build_mask(t), 20, 2), 0.15, 0.05);
  LearnerParams p;
  p.num_rounds = 5;
  auto reps = local_reports(t, subsets, p, 2);
  ASSERT_EQ(reps.size(), subsets.subsets.size());
  for (std::size_t k = 0; k < reps.size(); ++k) {
    EXPECT_EQ(reps[k].subset.rows, subsets.subsets[k].rows);
    for (const auto& [f, g] : reps[k].top_features)
      EXPECT_NE(std::find(reps[k].available.begin(), reps[k].available.end(), f), reps[k].available.end());
  }
  auto g = rank_features(reps, 0.05, 4);
  EXPECT_LE(g.entries.size(), 4u);
  EXPECT_TRUE(g.entries[0].feature.starts_with("petal"));
}
