#pragma once

// Fisher's iris measurements (150 records, 4 features, 3 species).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "elmv/table.hpp"

namespace elmv::datasets {

namespace detail {
struct IrisRow {
  double sepal_length, sepal_width, petal_length, petal_width;
  int species;
};

inline constexpr std::array<IrisRow, 150> kIrisRows{{
    {5.1, 3.5, 1.4, 0.2, 0},
    {4.9, 3, 1.4, 0.2, 0},
    {4.7, 3.2, 1.3, 0.2, 0},
    {4.6, 3.1, 1.5, 0.2, 0},
    {5, 3.6, 1.4, 0.2, 0},
    {5.4, 3.9, 1.7, 0.4, 0},
    {4.6, 3.4, 1.4, 0.3, 0},
    {5, 3.4, 1.5, 0.2, 0},
    {4.4, 2.9, 1.4, 0.2, 0},
    {4.9, 3.1, 1.5, 0.1, 0},
    {5.4, 3.7, 1.5, 0.2, 0},
    {4.8, 3.4, 1.6, 0.2, 0},
    {4.8, 3, 1.4, 0.1, 0},
    {4.3, 3, 1.1, 0.1, 0},
    {5.8, 4, 1.2, 0.2, 0},
    {5.7, 4.4, 1.5, 0.4, 0},
    {5.4, 3.9, 1.3, 0.4, 0},
    {5.1, 3.5, 1.4, 0.3, 0},
    {5.7, 3.8, 1.7, 0.3, 0},
    {5.1, 3.8, 1.5, 0.3, 0},
    {5.4, 3.4, 1.7, 0.2, 0},
    {5.1, 3.7, 1.5, 0.4, 0},
    {4.6, 3.6, 1, 0.2, 0},
    {5.1, 3.3, 1.7, 0.5, 0},
    {4.8, 3.4, 1.9, 0.2, 0},
    {5, 3, 1.6, 0.2, 0},
    {5, 3.4, 1.6, 0.4, 0},
    {5.2, 3.5, 1.5, 0.2, 0},
    {5.2, 3.4, 1.4, 0.2, 0},
    {4.7, 3.2, 1.6, 0.2, 0},
    {4.8, 3.1, 1.6, 0.2, 0},
    {5.4, 3.4, 1.5, 0.4, 0},
    {5.2, 4.1, 1.5, 0.1, 0},
    {5.5, 4.2, 1.4, 0.2, 0},
    {4.9, 3.1, 1.5, 0.2, 0},
    {5, 3.2, 1.2, 0.2, 0},
    {5.5, 3.5, 1.3, 0.2, 0},
    {4.9, 3.6, 1.4, 0.1, 0},
    {4.4, 3, 1.3, 0.2, 0},
    {5.1, 3.4, 1.5, 0.2, 0},
    {5, 3.5, 1.3, 0.3, 0},
    {4.5, 2.3, 1.3, 0.3, 0},
    {4.4, 3.2, 1.3, 0.2, 0},
    {5, 3.5, 1.6, 0.6, 0},
    {5.1, 3.8, 1.9, 0.4, 0},
    {4.8, 3, 1.4, 0.3, 0},
    {5.1, 3.8, 1.6, 0.2, 0},
    {4.6, 3.2, 1.4, 0.2, 0},
    {5.3, 3.7, 1.5, 0.2, 0},
    {5, 3.3, 1.4, 0.2, 0},
    {7, 3.2, 4.7, 1.4, 1},
    {6.4, 3.2, 4.5, 1.5, 1},
    {6.9, 3.1, 4.9, 1.5, 1},
    {5.5, 2.3, 4, 1.3, 1},
    {6.5, 2.8, 4.6, 1.5, 1},
    {5.7, 2.8, 4.5, 1.3, 1},
    {6.3, 3.3, 4.7, 1.6, 1},
    {4.9, 2.4, 3.3, 1, 1},
    {6.6, 2.9, 4.6, 1.3, 1},
    {5.2, 2.7, 3.9, 1.4, 1},
    {5, 2, 3.5, 1, 1},
    {5.9, 3, 4.2, 1.5, 1},
    {6, 2.2, 4, 1, 1},
    {6.1, 2.9, 4.7, 1.4, 1},
    {5.6, 2.9, 3.6, 1.3, 1},
    {6.7, 3.1, 4.4, 1.4, 1},
    {5.6, 3, 4.5, 1.5, 1},
    {5.8, 2.7, 4.1, 1, 1},
    {6.2, 2.2, 4.5, 1.5, 1},
    {5.6, 2.5, 3.9, 1.1, 1},
    {5.9, 3.2, 4.8, 1.8, 1},
    {6.1, 2.8, 4, 1.3, 1},
    {6.3, 2.5, 4.9, 1.5, 1},
    {6.1, 2.8, 4.7, 1.2, 1},
    {6.4, 2.9, 4.3, 1.3, 1},
    {6.6, 3, 4.4, 1.4, 1},
    {6.8, 2.8, 4.8, 1.4, 1},
    {6.7, 3, 5, 1.7, 1},
    {6, 2.9, 4.5, 1.5, 1},
    {5.7, 2.6, 3.5, 1, 1},
    {5.5, 2.4, 3.8, 1.1, 1},
    {5.5, 2.4, 3.7, 1, 1},
    {5.8, 2.7, 3.9, 1.2, 1},
    {6, 2.7, 5.1, 1.6, 1},
    {5.4, 3, 4.5, 1.5, 1},
    {6, 3.4, 4.5, 1.6, 1},
    {6.7, 3.1, 4.7, 1.5, 1},
    {6.3, 2.3, 4.4, 1.3, 1},
    {5.6, 3, 4.1, 1.3, 1},
    {5.5, 2.5, 4, 1.3, 1},
    {5.5, 2.6, 4.4, 1.2, 1},
    {6.1, 3, 4.6, 1.4, 1},
    {5.8, 2.6, 4, 1.2, 1},
    {5, 2.3, 3.3, 1, 1},
    {5.6, 2.7, 4.2, 1.3, 1},
    {5.7, 3, 4.2, 1.2, 1},
    {5.7, 2.9, 4.2, 1.3, 1},
    {6.2, 2.9, 4.3, 1.3, 1},
    {5.1, 2.5, 3, 1.1, 1},
    {5.7, 2.8, 4.1, 1.3, 1},
    {6.3, 3.3, 6, 2.5, 2},
    {5.8, 2.7, 5.1, 1.9, 2},
    {7.1, 3, 5.9, 2.1, 2},
    {6.3, 2.9, 5.6, 1.8, 2},
    {6.5, 3, 5.8, 2.2, 2},
    {7.6, 3, 6.6, 2.1, 2},
    {4.9, 2.5, 4.5, 1.7, 2},
    {7.3, 2.9, 6.3, 1.8, 2},
    {6.7, 2.5, 5.8, 1.8, 2},
    {7.2, 3.6, 6.1, 2.5, 2},
    {6.5, 3.2, 5.1, 2, 2},
    {6.4, 2.7, 5.3, 1.9, 2},
    {6.8, 3, 5.5, 2.1, 2},
    {5.7, 2.5, 5, 2, 2},
    {5.8, 2.8, 5.1, 2.4, 2},
    {6.4, 3.2, 5.3, 2.3, 2},
    {6.5, 3, 5.5, 1.8, 2},
    {7.7, 3.8, 6.7, 2.2, 2},
    {7.7, 2.6, 6.9, 2.3, 2},
    {6, 2.2, 5, 1.5, 2},
    {6.9, 3.2, 5.7, 2.3, 2},
    {5.6, 2.8, 4.9, 2, 2},
    {7.7, 2.8, 6.7, 2, 2},
    {6.3, 2.7, 4.9, 1.8, 2},
    {6.7, 3.3, 5.7, 2.1, 2},
    {7.2, 3.2, 6, 1.8, 2},
    {6.2, 2.8, 4.8, 1.8, 2},
    {6.1, 3, 4.9, 1.8, 2},
    {6.4, 2.8, 5.6, 2.1, 2},
    {7.2, 3, 5.8, 1.6, 2},
    {7.4, 2.8, 6.1, 1.9, 2},
    {7.9, 3.8, 6.4, 2, 2},
    {6.4, 2.8, 5.6, 2.2, 2},
    {6.3, 2.8, 5.1, 1.5, 2},
    {6.1, 2.6, 5.6, 1.4, 2},
    {7.7, 3, 6.1, 2.3, 2},
    {6.3, 3.4, 5.6, 2.4, 2},
    {6.4, 3.1, 5.5, 1.8, 2},
    {6, 3, 4.8, 1.8, 2},
    {6.9, 3.1, 5.4, 2.1, 2},
    {6.7, 3.1, 5.6, 2.4, 2},
    {6.9, 3.1, 5.1, 2.3, 2},
    {5.8, 2.7, 5.1, 1.9, 2},
    {6.8, 3.2, 5.9, 2.3, 2},
    {6.7, 3.3, 5.7, 2.5, 2},
    {6.7, 3, 5.2, 2.3, 2},
    {6.3, 2.5, 5, 1.9, 2},
    {6.5, 3, 5.2, 2, 2},
    {6.2, 3.4, 5.4, 2.3, 2},
    {5.9, 3, 5.1, 1.8, 2},
}};
}  // namespace detail

inline ObservationTable iris() {
  static const char* const kSpecies[] = {"setosa", "versicolor", "virginica"};
  std::vector<std::string> ids;
  std::vector<std::optional<double>> values;
  std::vector<std::string> labels;
  ids.reserve(150);
  values.reserve(150 * 4);
  labels.reserve(150);
  for (std::size_t i = 0; i < detail::kIrisRows.size(); ++i) {
    const auto& r = detail::kIrisRows[i];
    std::string id = std::to_string(i + 1);
    ids.push_back("p" + std::string(3 - id.size(), '0') + id);
    values.insert(values.end(), {r.sepal_length, r.sepal_width, r.petal_length, r.petal_width});
    labels.emplace_back(kSpecies[r.species]);
  }
  return ObservationTable(std::move(ids),
                          {"sepal_length", "sepal_width", "petal_length", "petal_width"},
                          std::move(values), std::move(labels));
}

}  // namespace elmv::datasets
