#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "elmv/datasets/iris.hpp"
#include "elmv/ensemble.hpp"
#include "test_util.hpp"

using namespace elmv;

namespace {

// Plain evaluation of the weighted two-softmax similarity, no stabilizing shift.
std::vector<double> scalar_similarity(const std::vector<double>& df, const std::vector<double>& dm,
                                      double wf, double wm) {
  long double zf = 0, zm = 0;
  for (double d : df) zf += std::exp(-(long double)d);
  for (double d : dm) zm += std::exp(-(long double)d);
  std::vector<double> out;
  for (std::size_t r = 0; r < df.size(); ++r)
    out.push_back(double(wf * std::exp(-(long double)df[r]) / zf + wm * std::exp(-(long double)dm[r]) / zm));
  return out;
}

ObservationTable small_table(const std::vector<std::vector<Cell>>& rows, const std::vector<std::string>& labels) {
  std::vector<std::string> ids, names;
  std::vector<Cell> vals;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ids.push_back("s" + std::to_string(i));
    vals.insert(vals.end(), rows[i].begin(), rows[i].end());
  }
  for (std::size_t j = 0; j < rows[0].size(); ++j) names.push_back("f" + std::to_string(j));
  return ObservationTable(ids, names, vals, labels);
}

ObservationTable mask_cells(const ObservationTable& t, double rate, std::uint64_t seed) {
  std::vector<std::size_t> idx(t.values().size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(idx, rng);
  auto vals = t.values();
  for (std::size_t c = 0; c < std::size_t(rate * double(vals.size())); ++c) vals[idx[c]].reset();
  return t.with_values(vals);
}

ModelRecord fake_record(std::size_t rows, std::size_t cols, double rate, double cv_acc, double support_acc) {
  ModelRecord r;
  r.subset.rows.resize(rows);
  r.subset.cols.resize(cols);
  r.subset.missing_rate = rate;
  r.cv_metrics.accuracy = r.cv_metrics.precision = r.cv_metrics.recall = r.cv_metrics.f1 = cv_acc;
  r.support_accuracy_all = support_acc;
  return r;
}

struct IrisPipeline {
  ObservationTable train_table;
  ObservationTable queries;
  Registry registry;
  SupportSet support;
};

IrisPipeline iris_pipeline(double rate, std::uint64_t seed) {
  auto masked = mask_cells(datasets::iris(), rate, seed);
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < masked.num_patients(); ++i) (i % 5 == 0 ? te : tr).push_back(i);
  IrisPipeline p{masked.select_rows(tr), masked.select_rows(te), {}, {}};
  auto mask = build_mask(p.train_table);
  auto table = generate_table(mask, 10, 2);
  auto subsets = filter_qualified(table, 0.35, kDefaultRateBinWidth);
  LearnerParams params;
  params.num_rounds = 20;
  RegistryOptions opt;
  opt.params = params;
  opt.cv_folds = 5;
  p.registry = build_registry(p.train_table, subsets, opt);
  p.support = build_support_set(p.train_table, 40, seed);
  return p;
}

}  // namespace

TEST(Similarity, HandExampleMatchesScalarEvaluation) {
  const std::vector<double> df{0, 1, 2}, dm{2, 0, 1};
  auto sim = similarity_from_distances(df, dm, {0.5, 0.5});
  auto oracle = scalar_similarity(df, dm, 0.5, 0.5);
  const std::vector<double> frozen{0.377635764472601, 0.454984713414810, 0.167379522112589};
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(sim[r], oracle[r], 1e-12);
    EXPECT_NEAR(sim[r], frozen[r], 1e-12);
  }
}

TEST(Similarity, SoftmaxTermsSumToOne) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> d(1 + trial % 40);
    for (auto& x : d) x = u(rng);
    auto s = softmax_neg(d);
    EXPECT_NEAR(std::accumulate(s.begin(), s.end(), 0.0), 1.0, 1e-9);
    std::vector<double> d2(d.size());
    for (auto& x : d2) x = u(rng);
    SimilarityWeights w{u(rng) / 30.0, u(rng) / 30.0 + 0.01};
    auto sim = similarity_from_distances(d, d2, w);
    EXPECT_NEAR(std::accumulate(sim.begin(), sim.end(), 0.0), w.w_f + w.w_m, 1e-9);
  }
}

TEST(Similarity, ConstantDistancesGiveUniformSimilarity) {
  auto sim = similarity_from_distances(std::vector<double>(4, 3.0), std::vector<double>(4, 1.0), {0.3, 0.9});
  for (double s : sim) EXPECT_NEAR(s, 1.2 / 4.0, 1e-12);
}

TEST(Similarity, SmallerFeatureDistanceNeverLowersSimilarity) {
  std::vector<double> df{1.0, 2.0, 3.0, 0.5}, dm{1, 0, 2, 1};
  double prev = similarity_from_distances(df, dm, {0.5, 0.5})[2];
  for (double d = 3.0; d >= 0.0; d -= 0.25) {
    df[2] = d;
    double now = similarity_from_distances(df, dm, {0.5, 0.5})[2];
    EXPECT_GE(now, prev - 1e-15);
    prev = now;
  }
}

TEST(Similarity, IdenticalRecordIsMostSimilar) {
  auto t = small_table({{1.0, std::nullopt, 3.0}, {2.0, 5.0, std::nullopt}, {0.0, 1.0, 1.0}}, {"a", "b", "a"});
  auto ss = make_support_set(t);
  auto st = Standardizer::fit(t);
  for (std::size_t r = 0; r < 3; ++r) {
    auto sim = similarity(t.row(r), ss, {}, st);
    for (std::size_t o = 0; o < 3; ++o)
      if (o != r) EXPECT_GT(sim[r], sim[o]);
  }
}

TEST(Similarity, FeatureDistanceUsesCoObservedFeaturesRescaled) {
  auto t = small_table({{1.0, 2.0, std::nullopt, 4.0}, {std::nullopt, std::nullopt, std::nullopt, std::nullopt}},
                       {"a", "b"});
  auto ss = make_support_set(t);
  auto id = Standardizer::identity(4);
  std::vector<Cell> q{0.0, std::nullopt, 7.0, 1.0};
  auto d = feature_distances(q, ss, id);
  // co-observed: f0 (diff 1) and f3 (diff 3); 4 features, 2 shared
  EXPECT_NEAR(d[0], std::sqrt((1.0 + 9.0) * 4.0 / 2.0), 1e-12);
  // nothing shared: batch maximum
  EXPECT_DOUBLE_EQ(d[1], d[0]);
  auto m = mask_distances(q, ss);
  EXPECT_EQ(m[0], 2.0);
  EXPECT_EQ(m[1], 3.0);
}

TEST(Similarity, NothingSharedAnywhereGivesZeroDistance) {
  auto t = small_table({{std::nullopt, 1.0}, {std::nullopt, 2.0}}, {"a", "b"});
  auto ss = make_support_set(t);
  std::vector<Cell> q{3.0, std::nullopt};
  auto d = feature_distances(q, ss, Standardizer::identity(2));
  EXPECT_EQ(d, (std::vector<double>{0.0, 0.0}));
}

TEST(Similarity, FeaturePermutationLeavesSimilarityUnchanged) {
  auto t = mask_cells(datasets::iris(), 0.3, 9);
  std::vector<std::size_t> rows(30), perm{2, 0, 3, 1};
  std::iota(rows.begin(), rows.end(), std::size_t{60});
  std::vector<std::size_t> all(4);
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto a = t.select(rows, all), b = t.select(rows, perm);
  auto ssa = make_support_set(a), ssb = make_support_set(b);
  auto sta = Standardizer::fit(a), stb = Standardizer::fit(b);
  for (std::size_t q = 0; q < 150; q += 7) {
    std::vector<Cell> qa(t.row(q).begin(), t.row(q).end()), qb;
    for (auto j : perm) qb.push_back(qa[j]);
    auto sa = similarity(qa, ssa, {}, sta), sb = similarity(qb, ssb, {}, stb);
    for (std::size_t r = 0; r < sa.size(); ++r) EXPECT_NEAR(sa[r], sb[r], 1e-12);
  }
}

TEST(Similarity, RejectsInvalidWeights) {
  EXPECT_THROW((SimilarityWeights{0.0, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((SimilarityWeights{-0.1, 1.0}.validate()), std::invalid_argument);
}

TEST(SupportSet, FullSizeIsAPermutation) {
  auto t = datasets::iris();
  auto ss = build_support_set(t, t.num_patients(), 3);
  std::set<std::string> ids(ss.records.patient_ids().begin(), ss.records.patient_ids().end());
  EXPECT_EQ(ids.size(), t.num_patients());
  for (std::size_t r = 0; r < ss.size(); ++r) {
    auto src = ss.source_rows[r];
    EXPECT_EQ(ss.records.patient_ids()[r], t.patient_ids()[src]);
    EXPECT_EQ(ss.records.labels()[r], t.labels()[src]);
  }
}

TEST(SupportSet, DeterministicPerSeed) {
  auto t = datasets::iris();
  auto a = build_support_set(t, 20, 11), b = build_support_set(t, 20, 11), c = build_support_set(t, 20, 12);
  EXPECT_EQ(a.records, b.records);
  EXPECT_NE(a.records.patient_ids(), c.records.patient_ids());
}

TEST(SupportSet, RejectsOutOfRangeSize) {
  auto t = datasets::iris();
  EXPECT_THROW(build_support_set(t, 0, 1), std::invalid_argument);
  EXPECT_THROW(build_support_set(t, 151, 1), std::invalid_argument);
}

TEST(SupportSet, MaskMatchesRecords) {
  auto t = mask_cells(datasets::iris(), 0.4, 2);
  auto ss = build_support_set(t, 25, 4);
  EXPECT_EQ(ss.mask, build_mask(ss.records));
}

TEST(SupportSet, DefaultSize) {
  EXPECT_EQ(default_support_size(150), 50u);
  EXPECT_EQ(default_support_size(120), 40u);
  EXPECT_EQ(default_support_size(10), 4u);
}

TEST(TBest, TiesAllMarked) {
  EXPECT_EQ(tbest({{3, 1, 3}}), (std::vector<std::vector<std::uint8_t>>{{1, 0, 1}}));
  EXPECT_EQ(tbest({{2, 2}, {5, 5}}), (std::vector<std::vector<std::uint8_t>>{{1, 1}, {1, 1}}));
}

TEST(TBest, MatchesArgmaxScanOnRandomMatrices) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> u(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> mat(3, std::vector<double>(4));
    for (auto& row : mat)
      for (auto& v : row) v = u(rng);
    auto b = tbest(mat);
    for (std::size_t i = 0; i < 3; ++i) {
      double mx = -1;
      for (double v : mat[i]) mx = v > mx ? v : mx;
      int sum = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(b[i][j], mat[i][j] == mx ? 1 : 0);
        sum += b[i][j];
      }
      EXPECT_GE(sum, 1);
    }
  }
}

TEST(SelectModels, SoundOnRandomMatrices) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 9, m = 1 + rng() % 12;
    std::uniform_int_distribution<int> u(0, trial % 2 ? 3 : 1000);
    std::vector<std::vector<double>> mat(n, std::vector<double>(m));
    for (auto& row : mat)
      for (auto& v : row) v = u(rng);
    auto sel = select_by_criteria(mat);
    for (auto j : sel) {
      bool wins = false;
      for (const auto& row : mat) wins = wins || row[j] == *std::max_element(row.begin(), row.end());
      EXPECT_TRUE(wins);
    }
    auto top = tbest_argmax(tbest(mat));
    EXPECT_NE(std::find(sel.begin(), sel.end(), top), sel.end());
  }
}

TEST(SelectModels, SingleAndDominatingModel) {
  auto a = fake_record(40, 4, 0.1, 0.9, 0.8);
  auto b = fake_record(30, 3, 0.2, 0.7, 0.6);
  EXPECT_EQ(select_by_criteria(criteria_matrix({&a}, {0.5}, all_criteria())), (std::vector<std::size_t>{0}));
  EXPECT_EQ(select_by_criteria(criteria_matrix({&b, &a}, {0.4, 0.9}, all_criteria())),
            (std::vector<std::size_t>{1}));
}

TEST(SelectModels, DistinctLeadersAreBothSelected) {
  // A leads CV accuracy, B leads support accuracy, C leads nothing
  auto a = fake_record(30, 3, 0.2, 0.95, 0.5);
  auto b = fake_record(30, 3, 0.2, 0.60, 0.9);
  auto c = fake_record(30, 3, 0.2, 0.60, 0.5);
  std::vector<Criterion> crit{Criterion::cv_accuracy, Criterion::support_accuracy};
  EXPECT_EQ(select_by_criteria(criteria_matrix({&a, &b, &c}, {0, 0, 0}, crit)), (std::vector<std::size_t>{0, 1}));
}

TEST(SelectModels, CriterionNamesRoundTrip) {
  for (auto c : all_criteria()) EXPECT_EQ(criterion_from_string(to_string(c)), c);
  EXPECT_THROW(criterion_from_string("nope"), std::invalid_argument);
  auto a = fake_record(10, 2, 0.25, 0.5, 0.5);
  EXPECT_EQ(criterion_value(Criterion::low_missing_rate, a, 0), -0.25);
  EXPECT_EQ(criterion_value(Criterion::patient_count, a, 0), 10.0);
  EXPECT_EQ(criterion_value(Criterion::feature_count, a, 0), 2.0);
}

TEST(Eligibility, VacuousThresholdKeepsAll) {
  std::vector<std::vector<std::uint8_t>> correct{{0, 0, 0}, {1, 0, 1}, {0, 0, 0}};
  EXPECT_EQ(eligible_models(correct, {0, 1, 2}, 0), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Eligibility, OnlyTheAccurateModel) {
  std::vector<std::vector<std::uint8_t>> correct{{0, 0, 0, 1}, {1, 1, 1, 0}, {0, 0, 0, 1}};
  EXPECT_EQ(eligible_models(correct, {0, 1, 2}, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(eligible_models(correct, {0, 1, 2}, 3), (std::vector<std::size_t>{1}));
  EXPECT_TRUE(eligible_models(correct, {3}, 2).empty());
}

TEST(Vote, Plurality) {
  std::vector<std::string> classes{"A", "B"};
  auto r = majority_vote(classes, {0, 0, 1}, {});
  EXPECT_EQ(r.label, "A");
  EXPECT_EQ(r.tally.at("A"), 2u);
  EXPECT_EQ(r.tally.at("B"), 1u);
  EXPECT_EQ(majority_vote(classes, {1}, {}).label, "B");
}

TEST(Vote, TiesBrokenByScoresThenAlphabet) {
  std::vector<std::string> classes{"A", "B", "C"};
  EXPECT_EQ(majority_vote(classes, {0, 1}, {{0.6, 0.3, 0.1}, {0.1, 0.8, 0.1}}).label, "B");
  EXPECT_EQ(majority_vote(classes, {2, 1}, {{0.1, 0.4, 0.5}, {0.1, 0.5, 0.4}}).label, "B");
  EXPECT_EQ(majority_vote(classes, {2, 1}, {}).label, "B");
  EXPECT_THROW(majority_vote(classes, {}, {}), std::invalid_argument);
}

TEST(KnnBaseline, NearestRecordAndUniformLabels) {
  auto t = small_table({{1.0, 1.0}, {5.0, 5.0}, {9.0, std::nullopt}}, {"a", "b", "c"});
  auto ss = make_support_set(t);
  auto st = Standardizer::fit(t);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(knn_vote(similarity(t.row(r), ss, {}, st), t.labels(), 1), t.labels()[r]);
  std::vector<std::string> same(3, "z");
  EXPECT_EQ(knn_vote(similarity(t.row(0), ss, {}, st), same, 3), "z");
  EXPECT_THROW(knn_vote(similarity(t.row(0), ss, {}, st), same, 4), std::invalid_argument);
  // three-way tie at k_vote = 3: first label alphabetically
  EXPECT_EQ(knn_vote(similarity(t.row(2), ss, {}, st), t.labels(), 3), "a");
}

TEST(Predictor, SupportAccuracyExcludesTrainingRows) {
  auto p = iris_pipeline(0.3, 21);
  EnsemblePredictor pred(p.registry, p.support);
  for (std::size_t m = 0; m < pred.registry().models.size(); ++m) {
    const auto& rec = pred.registry().models[m];
    std::set<std::string> train(rec.row_ids.begin(), rec.row_ids.end());
    std::size_t n = 0, ok = 0;
    for (std::size_t r = 0; r < p.support.size(); ++r) {
      if (train.count(p.support.records.patient_ids()[r])) continue;
      ++n;
      ok += pred.predict_model(m, p.support.records.row(r)).label == p.support.records.labels()[r];
    }
    EXPECT_DOUBLE_EQ(rec.support_accuracy_all, n ? double(ok) / double(n) : 0.0);
  }
}

TEST(Predictor, SelectedModelsAreEligibleRowMaximizers) {
  auto p = iris_pipeline(0.3, 22);
  EnsemblePredictor pred(p.registry, p.support);
  std::size_t correct = 0;
  for (std::size_t q = 0; q < p.queries.num_patients(); ++q) {
    auto res = pred.predict(p.queries.row(q));
    ASSERT_FALSE(res.selected.empty());
    auto sim = pred.similarity(p.queries.row(q));
    auto mat = pred.criteria_matrix(sim, res.eligible);
    for (auto m : res.selected) {
      auto pos = std::find(res.eligible.begin(), res.eligible.end(), m) - res.eligible.begin();
      ASSERT_LT(std::size_t(pos), res.eligible.size());
      bool wins = false;
      for (const auto& row : mat) wins = wins || row[pos] == *std::max_element(row.begin(), row.end());
      EXPECT_TRUE(wins);
    }
    std::size_t votes = 0;
    for (const auto& [label, n] : res.tally) votes += n;
    EXPECT_EQ(votes, res.selected.size());
    correct += res.label == p.queries.labels()[q];
  }
  EXPECT_GE(double(correct) / double(p.queries.num_patients()), 0.8);
}

TEST(Predictor, FallsBackToFullRegistry) {
  auto p = iris_pipeline(0.3, 23);
  auto relabeled = ObservationTable(p.support.records.patient_ids(), p.support.records.feature_names(),
                                    p.support.records.values(),
                                    std::vector<std::string>(p.support.size(), "unknown"));
  EnsemblePredictor pred(p.registry, make_support_set(relabeled));
  auto res = pred.predict(p.queries.row(0));
  EXPECT_TRUE(res.fallback);
  EXPECT_EQ(res.eligible.size(), p.registry.models.size());
}

TEST(Predictor, RegistryJsonRoundTripPreservesPredictions) {
  auto p = iris_pipeline(0.4, 24);
  auto text = to_json(p.registry).dump();
  auto back = registry_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(to_json(back).dump(), text);
  EnsemblePredictor a(p.registry, p.support), b(back, p.support);
  for (std::size_t q = 0; q < p.queries.num_patients(); ++q) {
    auto ra = a.predict(p.queries.row(q)), rb = b.predict(p.queries.row(q));
    EXPECT_EQ(ra.label, rb.label);
    EXPECT_EQ(ra.selected, rb.selected);
  }
}

TEST(Predictor, Deterministic) {
  auto p1 = iris_pipeline(0.5, 25), p2 = iris_pipeline(0.5, 25);
  EnsemblePredictor a(p1.registry, p1.support), b(p2.registry, p2.support);
  for (std::size_t q = 0; q < p1.queries.num_patients(); ++q) {
    auto ra = a.predict(p1.queries.row(q)), rb = b.predict(p2.queries.row(q));
    EXPECT_EQ(ra.label, rb.label);
    EXPECT_EQ(ra.tally, rb.tally);
  }
}

TEST(Predictor, RejectsMismatchedInputs) {
  auto p = iris_pipeline(0.3, 26);
  EnsembleConfig cfg;
  cfg.selection.k1 = 5;
  cfg.selection.k2 = 6;
  EXPECT_THROW(EnsemblePredictor(p.registry, p.support, cfg), std::invalid_argument);
  cfg.selection.k2 = 2;
  cfg.selection.k1 = 41;
  EXPECT_THROW(EnsemblePredictor(p.registry, p.support, cfg), std::invalid_argument);
  EnsemblePredictor pred(p.registry, p.support);
  std::vector<Cell> short_row(3, 1.0);
  EXPECT_THROW(pred.predict(short_row), std::invalid_argument);
}

TEST(Registry, SkipsSingleClassSubsets) {
  auto t = datasets::iris();
  QualifiedSubsetCollection c;
  SubsetDescriptor setosa{{0, 1, 2, 3, 4, 5}, {0, 1}, 0, 0.0};
  SubsetDescriptor mixed{{0, 1, 2, 50, 51, 52, 100, 101, 102}, {2, 3}, 0, 0.0};
  c.subsets = {setosa, mixed};
  RegistryOptions opt;
  opt.params.num_rounds = 5;
  auto reg = build_registry(t, c, opt);
  ASSERT_EQ(reg.models.size(), 1u);
  EXPECT_EQ(reg.models[0].subset.rows, mixed.rows);
  EXPECT_EQ(reg.models[0].model.features, (std::vector<std::string>{"petal_length", "petal_width"}));
  c.subsets = {setosa};
  EXPECT_THROW(build_registry(t, c, opt), TrainingError);
}
