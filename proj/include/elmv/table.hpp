#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace elmv {

using Cell = std::optional<double>;

/// Raised for malformed input files; the message names the line or cell.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename Container>
void require_unique(const Container& names, const char* what) {
  std::unordered_set<std::string> seen;
  seen.reserve(names.size());
  for (const auto& n : names) {
    if (!seen.insert(n).second) {
      throw std::invalid_argument(std::string("duplicate ") + what + ": '" + n + "'");
    }
  }
}

}  // namespace detail

/// Patients x features grid of optional reals with optional class labels.
///
/// Absence is its own state (std::nullopt); no numeric sentinel is ever
/// stored. Instances are immutable after construction.
class ObservationTable {
 public:
  ObservationTable() = default;

  ObservationTable(std::vector<std::string> patient_ids, std::vector<std::string> feature_names,
                   std::vector<Cell> values,
                   std::optional<std::vector<std::string>> labels = std::nullopt)
      : patient_ids_(std::move(patient_ids)),
        feature_names_(std::move(feature_names)),
        values_(std::move(values)),
        labels_(std::move(labels)) {
    if (values_.size() != patient_ids_.size() * feature_names_.size()) {
      throw std::invalid_argument("value grid has " + std::to_string(values_.size()) +
                                  " cells, expected " + std::to_string(patient_ids_.size()) +
                                  " x " + std::to_string(feature_names_.size()));
    }
    if (labels_ && labels_->size() != patient_ids_.size()) {
      throw std::invalid_argument("label count does not match patient count");
    }
    detail::require_unique(patient_ids_, "patient id");
    detail::require_unique(feature_names_, "feature name");
    if (labels_) {
      classes_ = *labels_;
      std::sort(classes_.begin(), classes_.end());
      classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
    }
  }

  std::size_t num_patients() const { return patient_ids_.size(); }
  std::size_t num_features() const { return feature_names_.size(); }

  const std::vector<std::string>& patient_ids() const { return patient_ids_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<Cell>& values() const { return values_; }

  const Cell& at(std::size_t patient, std::size_t feature) const {
    return values_[patient * feature_names_.size() + feature];
  }

  std::span<const Cell> row(std::size_t patient) const {
    return {values_.data() + patient * feature_names_.size(), feature_names_.size()};
  }

  bool has_labels() const { return labels_.has_value(); }
  const std::vector<std::string>& labels() const {
    if (!labels_) throw std::logic_error("table has no labels");
    return *labels_;
  }
  /// Sorted distinct labels.
  const std::vector<std::string>& classes() const { return classes_; }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [](const Cell& c) { return !c; }));
  }

  std::optional<std::size_t> feature_index(const std::string& name) const {
    auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
    if (it == feature_names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - feature_names_.begin());
  }

  /// Sub-table over the given row and column indices, in the given order.
  ObservationTable select(std::span<const std::size_t> rows,
                          std::span<const std::size_t> cols) const {
    std::vector<std::string> ids;
    std::vector<std::string> names;
    std::vector<Cell> vals;
    ids.reserve(rows.size());
    names.reserve(cols.size());
    vals.reserve(rows.size() * cols.size());
    for (auto c : cols) names.push_back(feature_names_.at(c));
    std::optional<std::vector<std::string>> labs;
    if (labels_) labs.emplace();
    for (auto r : rows) {
      ids.push_back(patient_ids_.at(r));
      for (auto c : cols) vals.push_back(at(r, c));
      if (labs) labs->push_back((*labels_)[r]);
    }
    return ObservationTable(std::move(ids), std::move(names), std::move(vals), std::move(labs));
  }

  ObservationTable select_rows(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> cols(num_features());
    for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;
    return select(rows, cols);
  }

  /// Copy with a replaced value grid (same shape, ids, and labels).
  ObservationTable with_values(std::vector<Cell> values) const {
    return ObservationTable(patient_ids_, feature_names_, std::move(values), labels_);
  }

  friend bool operator==(const ObservationTable& a, const ObservationTable& b) {
    return a.patient_ids_ == b.patient_ids_ && a.feature_names_ == b.feature_names_ &&
           a.values_ == b.values_ && a.labels_ == b.labels_;
  }

 private:
  std::vector<std::string> patient_ids_;
  std::vector<std::string> feature_names_;
  std::vector<Cell> values_;
  std::optional<std::vector<std::string>> labels_;
  std::vector<std::string> classes_;
};

/// Patients x features x time points grid, e.g. repeated lab measurements.
class TemporalObservationTable {
 public:
  TemporalObservationTable(std::vector<std::string> patient_ids,
                           std::vector<std::string> feature_names,
                           std::vector<std::string> time_points, std::vector<Cell> values)
      : patient_ids_(std::move(patient_ids)),
        feature_names_(std::move(feature_names)),
        time_points_(std::move(time_points)),
        values_(std::move(values)) {
    if (time_points_.empty()) throw std::invalid_argument("at least one time point required");
    if (values_.size() != patient_ids_.size() * feature_names_.size() * time_points_.size()) {
      throw std::invalid_argument("temporal grid size does not match N_p x N_f x N_t");
    }
    detail::require_unique(patient_ids_, "patient id");
    detail::require_unique(feature_names_, "feature name");
    detail::require_unique(time_points_, "time point");
  }

  std::size_t num_patients() const { return patient_ids_.size(); }
  std::size_t num_features() const { return feature_names_.size(); }
  std::size_t num_time_points() const { return time_points_.size(); }

  const std::vector<std::string>& patient_ids() const { return patient_ids_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& time_points() const { return time_points_; }

  const Cell& at(std::size_t patient, std::size_t feature, std::size_t t) const {
    return values_[(patient * feature_names_.size() + feature) * time_points_.size() + t];
  }

 private:
  std::vector<std::string> patient_ids_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> time_points_;
  std::vector<Cell> values_;
};

}  // namespace elmv
