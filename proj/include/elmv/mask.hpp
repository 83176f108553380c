#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/table.hpp"

namespace elmv {

/// Binary patients x features matrix; 1 marks an absent value.
class MissingnessMask {
 public:
  MissingnessMask() = default;

  MissingnessMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bits)
      : rows_(rows), cols_(cols), bits_(std::move(bits)) {
    if (bits_.size() != rows_ * cols_) throw std::invalid_argument("mask size mismatch");
    for (auto& b : bits_) b = b ? 1 : 0;
    row_counts_.assign(rows_, 0);
    col_counts_.assign(cols_, 0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) {
        if (bits_[i * cols_ + j]) {
          ++row_counts_[i];
          ++col_counts_[j];
          ++total_;
        }
      }
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool missing(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::size_t row_count(std::size_t i) const { return row_counts_[i]; }
  std::size_t col_count(std::size_t j) const { return col_counts_[j]; }
  std::size_t total() const { return total_; }

  double row_rate(std::size_t i) const { return cols_ ? double(row_counts_[i]) / double(cols_) : 0.0; }
  double col_rate(std::size_t j) const { return rows_ ? double(col_counts_[j]) / double(rows_) : 0.0; }
  std::vector<double> row_rates() const {
    std::vector<double> r(rows_);
    for (std::size_t i = 0; i < rows_; ++i) r[i] = row_rate(i);
    return r;
  }
  std::vector<double> col_rates() const {
    std::vector<double> r(cols_);
    for (std::size_t j = 0; j < cols_; ++j) r[j] = col_rate(j);
    return r;
  }
  double overall_rate() const {
    return rows_ * cols_ ? double(total_) / double(rows_ * cols_) : 0.0;
  }

  /// Missingness vector of one patient.
  std::vector<std::uint8_t> row_bits(std::size_t i) const {
    return {bits_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
            bits_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_)};
  }

  friend bool operator==(const MissingnessMask& a, const MissingnessMask& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.bits_ == b.bits_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
  std::vector<std::size_t> row_counts_;
  std::vector<std::size_t> col_counts_;
  std::size_t total_ = 0;
};

inline MissingnessMask build_mask(const ObservationTable& table) {
  std::vector<std::uint8_t> bits(table.values().size());
  std::transform(table.values().begin(), table.values().end(), bits.begin(),
                 [](const Cell& c) { return c ? 0 : 1; });
  return MissingnessMask(table.num_patients(), table.num_features(), std::move(bits));
}

/// A (patient, feature) cell is marked when any point of its trajectory is absent.
inline MissingnessMask collapse_temporal(const TemporalObservationTable& table) {
  const std::size_t np = table.num_patients(), nf = table.num_features(),
                    nt = table.num_time_points();
  std::vector<std::uint8_t> bits(np * nf, 0);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < nf; ++j) {
      for (std::size_t t = 0; t < nt; ++t) {
        if (!table.at(i, j, t)) {
          bits[i * nf + j] = 1;
          break;
        }
      }
    }
  }
  return MissingnessMask(np, nf, std::move(bits));
}

enum class Recommendation { imputation_ok, elmv_recommended };

inline const char* to_string(Recommendation r) {
  return r == Recommendation::imputation_ok ? "imputation_ok" : "elmv_recommended";
}

struct MissingnessReport {
  double overall_rate = 0.0;
  std::vector<std::pair<std::string, double>> per_feature;
  double patient_rate_min = 0.0;
  double patient_rate_mean = 0.0;
  double patient_rate_max = 0.0;
  std::size_t complete_patients = 0;
  double threshold = 0.40;
  Recommendation recommendation = Recommendation::imputation_ok;
};

inline constexpr double kDefaultAssessThreshold = 0.40;

/// ELMV is recommended only when the overall rate strictly exceeds `threshold`.
inline MissingnessReport assess(const MissingnessMask& mask,
                                const std::vector<std::string>& feature_names,
                                double threshold = kDefaultAssessThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("assess threshold must lie in (0, 1)");
  }
  if (feature_names.size() != mask.cols()) {
    throw std::invalid_argument("feature name count does not match mask columns");
  }
  MissingnessReport rep;
  rep.threshold = threshold;
  rep.overall_rate = mask.overall_rate();
  for (std::size_t j = 0; j < mask.cols(); ++j) rep.per_feature.emplace_back(feature_names[j], mask.col_rate(j));
  if (mask.rows() > 0) {
    auto rates = mask.row_rates();
    auto [lo, hi] = std::minmax_element(rates.begin(), rates.end());
    rep.patient_rate_min = *lo;
    rep.patient_rate_max = *hi;
    rep.patient_rate_mean = std::accumulate(rates.begin(), rates.end(), 0.0) / double(rates.size());
    for (std::size_t i = 0; i < mask.rows(); ++i) rep.complete_patients += mask.row_count(i) == 0;
  }
  rep.recommendation = rep.overall_rate > threshold ? Recommendation::elmv_recommended
                                                    : Recommendation::imputation_ok;
  return rep;
}

inline nlohmann::json to_json(const MissingnessReport& rep) {
  nlohmann::json per_feature = nlohmann::json::array();
  for (const auto& [name, rate] : rep.per_feature) per_feature.push_back({{"feature", name}, {"rate", rate}});
  return {{"overall_rate", rep.overall_rate},
          {"threshold", rep.threshold},
          {"recommendation", to_string(rep.recommendation)},
          {"per_feature", per_feature},
          {"per_patient",
           {{"min", rep.patient_rate_min},
            {"mean", rep.patient_rate_mean},
            {"max", rep.patient_rate_max},
            {"complete", rep.complete_patients}}}};
}

/// Tab-separated 0/1 dump with a header of feature names and a leading id column.
inline void write_mask_tsv(std::ostream& out, const MissingnessMask& mask,
                           const ObservationTable& table) {
  out << "id";
  for (const auto& f : table.feature_names()) out << '\t' << f;
  out << '\n';
  for (std::size_t i = 0; i < mask.rows(); ++i) {
    out << table.patient_ids()[i];
    for (std::size_t j = 0; j < mask.cols(); ++j) out << '\t' << (mask.missing(i, j) ? '1' : '0');
    out << '\n';
  }
}

}  // namespace elmv
