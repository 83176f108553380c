#pragma once

#include <stdexcept>
#include <vector>

#include "elmv/table.hpp"

namespace elmv {

/// Mean of the observed values of every feature.
inline std::vector<double> column_means(const ObservationTable& table) {
  std::vector<double> sum(table.num_features(), 0.0);
  std::vector<std::size_t> n(table.num_features(), 0);
  for (std::size_t i = 0; i < table.num_patients(); ++i) {
    for (std::size_t j = 0; j < table.num_features(); ++j) {
      if (const auto& v = table.at(i, j)) {
        sum[j] += *v;
        ++n[j];
      }
    }
  }
  for (std::size_t j = 0; j < sum.size(); ++j) {
    if (n[j] == 0) {
      throw std::invalid_argument("feature '" + table.feature_names()[j] +
                                  "' has no observed values to average");
    }
    sum[j] /= double(n[j]);
  }
  return sum;
}

/// Fills every absent cell of column j with fill[j].
inline ObservationTable impute_with(const ObservationTable& table, const std::vector<double>& fill) {
  if (fill.size() != table.num_features()) throw std::invalid_argument("fill vector size mismatch");
  std::vector<Cell> vals = table.values();
  const std::size_t nf = table.num_features();
  for (std::size_t k = 0; k < vals.size(); ++k) {
    if (!vals[k]) vals[k] = fill[k % nf];
  }
  return table.with_values(std::move(vals));
}

inline ObservationTable mean_impute(const ObservationTable& table) {
  return impute_with(table, column_means(table));
}

}  // namespace elmv
