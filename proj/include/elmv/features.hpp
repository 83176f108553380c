#pragma once

// Global critical-feature ranking. Each subset model contributes its top-k3
// features by gain; within a missing-rate bin a feature's ratio is how often
// it was selected over how often it was available, and the global score sums
// the bin ratios weighted by the bin's mean leave-one-out accuracy.

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/cross_validation.hpp"
#include "elmv/csv.hpp"
#include "elmv/gbdt.hpp"
#include "elmv/log.hpp"
#include "elmv/parallel.hpp"
#include "elmv/subsets.hpp"
#include "elmv/table.hpp"

namespace elmv {

struct LocalFeatureReport {
  SubsetDescriptor subset;
  std::vector<std::string> available;  // the subset's feature names
  double loocv_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> top_features;  // gain descending
};

/// LOOCV accuracy of the subset plus the top-k3 nonzero-gain features of a
/// model trained on all of it.
inline LocalFeatureReport local_report(const ObservationTable& subset_table, const LearnerParams& params,
                                       std::size_t k3) {
  if (k3 < 1) throw std::invalid_argument("k3 must be positive");
  LocalFeatureReport rep;
  rep.available = subset_table.feature_names();
  rep.loocv_accuracy = cross_validate(subset_table, params, CvScheme::loocv()).accuracy;
  for (const auto& [name, gain] : ranked_importance(train(subset_table, params))) {
    if (rep.top_features.size() == k3 || gain <= 0.0) break;
    rep.top_features.emplace_back(name, gain);
  }
  return rep;
}

/// One report per qualified subset; single-class subsets are skipped.
inline std::vector<LocalFeatureReport> local_reports(const ObservationTable& table,
                                                     const QualifiedSubsetCollection& subsets,
                                                     const LearnerParams& params, std::size_t k3,
                                                     std::size_t workers = 1) {
  std::vector<std::optional<LocalFeatureReport>> slots(subsets.subsets.size());
  parallel_for(slots.size(), workers, [&](std::size_t s) {
    const auto& d = subsets.subsets[s];
    auto sub = table.select(d.rows, d.cols);
    if (sub.classes().size() < 2) {
      logger()->warn("subset {} ({} x {}) has a single class; no feature report", s, d.num_rows(), d.num_cols());
      return;
    }
    auto rep = local_report(sub, params, k3);
    rep.subset = d;
    slots[s] = std::move(rep);
  });
  std::vector<LocalFeatureReport> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

struct RankingEntry {
  std::string feature;
  std::size_t selection_count = 0;
  std::size_t availability_count = 0;
  double ratio = 0.0;
  double weighted_score = 0.0;
  double total_gain = 0.0;
  std::map<std::size_t, double> bin_ratio;  // bin -> ratio within that bin
};

struct GlobalFeatureRanking {
  std::vector<RankingEntry> entries;
  std::size_t k4 = 10;
  double bin_width = kDefaultRateBinWidth;
  std::map<std::size_t, double> bin_weight;  // bin -> mean LOOCV accuracy
};

inline GlobalFeatureRanking rank_features(const std::vector<LocalFeatureReport>& reports,
                                          double bin_width = kDefaultRateBinWidth, std::size_t k4 = 10) {
  if (reports.empty()) throw std::invalid_argument("no local feature reports to rank");
  if (!(bin_width > 0.0)) throw std::invalid_argument("rate bin width must be positive");
  if (k4 < 1) throw std::invalid_argument("k4 must be positive");

  struct Counts {
    std::size_t selected = 0, available = 0;
    double gain = 0.0;
  };
  std::map<std::size_t, std::map<std::string, Counts>> bins;
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : reports) {
    const auto b = rate_bin(r.subset.missing_rate, bin_width);
    auto& counts = bins[b];
    for (const auto& f : r.available) ++counts[f].available;
    std::set<std::string> chosen;
    for (const auto& [f, gain] : r.top_features) {
      if (std::find(r.available.begin(), r.available.end(), f) == r.available.end()) {
        throw std::invalid_argument("top feature '" + f + "' is not among the subset's features");
      }
      if (chosen.insert(f).second) {
        ++counts[f].selected;
        counts[f].gain += gain;
      }
    }
    acc[b].first += r.loocv_accuracy;
    ++acc[b].second;
  }

  GlobalFeatureRanking out;
  out.k4 = k4;
  out.bin_width = bin_width;
  std::map<std::string, RankingEntry> by_name;
  for (const auto& [b, counts] : bins) {
    const double w = acc[b].first / double(acc[b].second);
    out.bin_weight[b] = w;
    for (const auto& [f, c] : counts) {
      auto& e = by_name[f];
      e.feature = f;
      e.selection_count += c.selected;
      e.availability_count += c.available;
      e.total_gain += c.gain;
      const double ratio = double(c.selected) / double(c.available);
      e.bin_ratio[b] = ratio;
      e.weighted_score += w * ratio;
    }
  }
  for (auto& [f, e] : by_name) {
    e.ratio = double(e.selection_count) / double(e.availability_count);
    out.entries.push_back(std::move(e));
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const RankingEntry& a, const RankingEntry& b) {
    if (a.weighted_score != b.weighted_score) return a.weighted_score > b.weighted_score;
    if (a.selection_count != b.selection_count) return a.selection_count > b.selection_count;
    if (a.total_gain != b.total_gain) return a.total_gain > b.total_gain;
    return a.feature < b.feature;
  });
  if (out.entries.size() > k4) out.entries.resize(k4);
  return out;
}

inline std::string bin_label(std::size_t bin, double width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g-%g", double(bin) * width, double(bin + 1) * width);
  return buf;
}

/// feature, counts, ratio, one column per rate bin, weighted_score, rank.
inline void write_ranking_tsv(std::ostream& out, const GlobalFeatureRanking& g) {
  out << "feature\tselection_count\tavailability_count\tratio";
  for (const auto& [b, w] : g.bin_weight) out << "\tratio_" << bin_label(b, g.bin_width);
  out << "\tweighted_score\trank\n";
  std::size_t rank = 1;
  for (const auto& e : g.entries) {
    out << e.feature << '\t' << e.selection_count << '\t' << e.availability_count << '\t' << format_double(e.ratio);
    for (const auto& [b, w] : g.bin_weight) {
      auto it = e.bin_ratio.find(b);
      out << '\t' << (it == e.bin_ratio.end() ? std::string("") : format_double(it->second));
    }
    out << '\t' << format_double(e.weighted_score) << '\t' << rank++ << '\n';
  }
}

inline nlohmann::json to_json(const LocalFeatureReport& r, const std::vector<std::string>& feature_names) {
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [f, g] : r.top_features) top.push_back({{"feature", f}, {"gain", g}});
  nlohmann::json cols = nlohmann::json::array();
  for (auto c : r.subset.cols) cols.push_back(feature_names.at(c));
  return {{"rows", r.subset.num_rows()},
          {"col_ids", cols},
          {"missing_rate", r.subset.missing_rate},
          {"loocv_accuracy", r.loocv_accuracy},
          {"top_features", top}};
}

}  // namespace elmv
