#pragma once

// Maximal low-missingness submatrices.
//
// generate_table fills a (rows x cols) table of missing counts starting from
// the full matrix and shrinking it one row or one column at a time: cell
// (i, j) is derived from whichever neighbor, (i, j+1) or (i+1, j), holds
// fewer missing values, by reordering that neighbor's submask by missing
// fraction and cutting its last (worst) column or row. The result is a
// heuristic: each count is an upper bound on the true minimum over all
// i x j submatrices, which brute_force_min computes exactly for small masks.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "elmv/mask.hpp"
#include "elmv/table.hpp"

namespace elmv {

/// A submatrix of the source table. Indices refer to the source rows/columns
/// and are kept in ascending order.
struct SubsetDescriptor {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::size_t missing_count = 0;
  double missing_rate = 0.0;

  std::size_t num_rows() const { return rows.size(); }
  std::size_t num_cols() const { return cols.size(); }

  friend bool operator==(const SubsetDescriptor&, const SubsetDescriptor&) = default;
};

/// Number of ones in the mask restricted to rows x cols.
inline std::size_t recount(const MissingnessMask& mask, const std::vector<std::size_t>& rows,
                           const std::vector<std::size_t>& cols) {
  std::size_t n = 0;
  for (auto r : rows)
    for (auto c : cols) n += mask.missing(r, c);
  return n;
}

struct MaskOrdering {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

/// Rows and columns ascending by missing fraction; ties keep original order.
inline MaskOrdering order_mask(const MissingnessMask& mask) {
  MaskOrdering o;
  o.rows.resize(mask.rows());
  o.cols.resize(mask.cols());
  std::iota(o.rows.begin(), o.rows.end(), std::size_t{0});
  std::iota(o.cols.begin(), o.cols.end(), std::size_t{0});
  std::stable_sort(o.rows.begin(), o.rows.end(),
                   [&](auto a, auto b) { return mask.row_count(a) < mask.row_count(b); });
  std::stable_sort(o.cols.begin(), o.cols.end(),
                   [&](auto a, auto b) { return mask.col_count(a) < mask.col_count(b); });
  return o;
}

enum class Step : std::uint8_t { none, drop_col, drop_row };

/// Which neighbor wins when both hold the same count.
enum class TieBreak : std::uint8_t { drop_row, drop_col };

/// Missing counts of the generated subset for every (rows, cols) shape.
///
/// Only counts and one backpointer per cell are stored; descriptor() rebuilds
/// a cell's row/column identities by walking the backpointers to the full
/// matrix.
class MissingCountTable {
 public:
  struct Entry {
    bool defined = false;
    Step step = Step::none;
    std::size_t removed = 0;  // source index of the dropped row or column
    std::size_t count = 0;
  };

  MissingCountTable(std::size_t rows, std::size_t cols, std::size_t min_rows,
                    std::size_t min_cols)
      : rows_(rows), cols_(cols), min_rows_(min_rows), min_cols_(min_cols), cells_(rows * cols) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t min_rows() const { return min_rows_; }
  std::size_t min_cols() const { return min_cols_; }

  /// Shapes are 1-based: entry(i, j) is the subset with i rows and j columns.
  const Entry& entry(std::size_t i, std::size_t j) const { return cells_.at(index(i, j)); }
  Entry& entry(std::size_t i, std::size_t j) { return cells_.at(index(i, j)); }

  std::optional<std::size_t> count(std::size_t i, std::size_t j) const {
    if (i < 1 || j < 1 || i > rows_ || j > cols_) return std::nullopt;
    const auto& e = entry(i, j);
    if (!e.defined) return std::nullopt;
    return e.count;
  }

  std::optional<double> rate(std::size_t i, std::size_t j) const {
    auto c = count(i, j);
    if (!c) return std::nullopt;
    return double(*c) / double(i * j);
  }

  SubsetDescriptor descriptor(std::size_t i, std::size_t j) const {
    if (!count(i, j)) throw std::out_of_range("undefined cell in missing-count table");
    std::vector<std::uint8_t> row_out(rows_, 0), col_out(cols_, 0);
    std::size_t a = i, b = j;
    while (!(a == rows_ && b == cols_)) {
      const auto& e = entry(a, b);
      if (e.step == Step::drop_col) {
        col_out[e.removed] = 1;
        ++b;
      } else if (e.step == Step::drop_row) {
        row_out[e.removed] = 1;
        ++a;
      } else {
        throw std::logic_error("broken provenance chain");
      }
    }
    SubsetDescriptor d;
    for (std::size_t r = 0; r < rows_; ++r)
      if (!row_out[r]) d.rows.push_back(r);
    for (std::size_t c = 0; c < cols_; ++c)
      if (!col_out[c]) d.cols.push_back(c);
    d.missing_count = entry(i, j).count;
    d.missing_rate = double(d.missing_count) / double(i * j);
    return d;
  }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i < 1 || j < 1 || i > rows_ || j > cols_) throw std::out_of_range("shape outside table");
    return (i - 1) * cols_ + (j - 1);
  }

  std::size_t rows_, cols_, min_rows_, min_cols_;
  std::vector<Entry> cells_;
};

inline std::size_t default_min_rows(std::size_t num_patients) {
  auto tenth = static_cast<std::size_t>(std::ceil(0.1 * double(num_patients)));
  return std::min(num_patients, std::max<std::size_t>(5, tenth));
}

inline std::size_t default_min_cols(std::size_t num_features) {
  auto tenth = static_cast<std::size_t>(std::ceil(0.1 * double(num_features)));
  return std::min(num_features, std::max<std::size_t>(2, tenth));
}

namespace detail {

struct Members {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

// Worst column of the submask: most missing, ties to the larger source index
// (i.e. the last one after a stable ascending sort).
inline std::pair<std::size_t, std::size_t> worst_col(const MissingnessMask& mask, const Members& m) {
  std::size_t pos = 0, best = 0;
  bool first = true;
  for (std::size_t k = 0; k < m.cols.size(); ++k) {
    std::size_t n = 0;
    for (auto r : m.rows) n += mask.missing(r, m.cols[k]);
    if (first || n > best || (n == best && m.cols[k] > m.cols[pos])) {
      best = n;
      pos = k;
      first = false;
    }
  }
  return {pos, best};
}

inline std::pair<std::size_t, std::size_t> worst_row(const MissingnessMask& mask, const Members& m) {
  std::size_t pos = 0, best = 0;
  bool first = true;
  for (std::size_t k = 0; k < m.rows.size(); ++k) {
    std::size_t n = 0;
    for (auto c : m.cols) n += mask.missing(m.rows[k], c);
    if (first || n > best || (n == best && m.rows[k] > m.rows[pos])) {
      best = n;
      pos = k;
      first = false;
    }
  }
  return {pos, best};
}

}  // namespace detail

inline MissingCountTable generate_table(const MissingnessMask& mask, std::size_t min_rows,
                                        std::size_t min_cols, TieBreak tie = TieBreak::drop_row) {
  const std::size_t np = mask.rows(), nf = mask.cols();
  if (min_rows < 1 || min_rows > np || min_cols < 1 || min_cols > nf) {
    throw std::invalid_argument("min_rows/min_cols must lie in [1, N_p] x [1, N_f]; got (" +
                                std::to_string(min_rows) + ", " + std::to_string(min_cols) +
                                ") for a " + std::to_string(np) + " x " + std::to_string(nf) +
                                " mask");
  }
  MissingCountTable table(np, nf, min_rows, min_cols);

  // Members of row i+1 (prev) and row i (cur), indexed by column count j.
  std::vector<detail::Members> prev(nf + 2), cur(nf + 2);
  for (std::size_t i = np; i >= min_rows; --i) {
    for (std::size_t j = nf; j >= min_cols; --j) {
      auto& e = table.entry(i, j);
      if (i == np && j == nf) {
        detail::Members full;
        full.rows.resize(np);
        full.cols.resize(nf);
        std::iota(full.rows.begin(), full.rows.end(), std::size_t{0});
        std::iota(full.cols.begin(), full.cols.end(), std::size_t{0});
        e = {true, Step::none, 0, mask.total()};
        cur[j] = std::move(full);
        continue;
      }
      const bool has_col_nb = j + 1 <= nf;  // (i, j+1): drop a column
      const bool has_row_nb = i + 1 <= np;  // (i+1, j): drop a row
      bool drop_col;
      if (has_col_nb && has_row_nb) {
        auto c_col = table.entry(i, j + 1).count;
        auto c_row = table.entry(i + 1, j).count;
        drop_col = c_col < c_row || (c_col == c_row && tie == TieBreak::drop_col);
      } else {
        drop_col = has_col_nb;
      }
      if (drop_col) {
        const auto& src = cur[j + 1];
        auto [pos, n] = detail::worst_col(mask, src);
        detail::Members m{src.rows, src.cols};
        e = {true, Step::drop_col, m.cols[pos], table.entry(i, j + 1).count - n};
        m.cols.erase(m.cols.begin() + static_cast<std::ptrdiff_t>(pos));
        cur[j] = std::move(m);
      } else {
        const auto& src = prev[j];
        auto [pos, n] = detail::worst_row(mask, src);
        detail::Members m{src.rows, src.cols};
        e = {true, Step::drop_row, m.rows[pos], table.entry(i + 1, j).count - n};
        m.rows.erase(m.rows.begin() + static_cast<std::ptrdiff_t>(pos));
        cur[j] = std::move(m);
      }
      if (j == min_cols) break;
    }
    std::swap(prev, cur);
    if (i == min_rows) break;
  }
  return table;
}

inline MissingCountTable generate_table(const MissingnessMask& mask) {
  return generate_table(mask, default_min_rows(mask.rows()), default_min_cols(mask.cols()));
}

inline constexpr std::size_t kBruteForceLimit = 14;

/// Exact minimum missing count over all x-row, y-column submatrices.
///
/// Enumerates every row subset; for a fixed row subset the best columns are
/// simply the y columns with the fewest missing values among those rows.
inline std::size_t brute_force_min(const MissingnessMask& mask, std::size_t x, std::size_t y) {
  const std::size_t np = mask.rows(), nf = mask.cols();
  if (np > kBruteForceLimit || nf > kBruteForceLimit) {
    throw std::invalid_argument("brute_force_min refuses masks larger than 14 x 14");
  }
  if (x < 1 || x > np || y < 1 || y > nf) throw std::invalid_argument("subset shape out of range");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> col_counts(nf);
  for (std::uint32_t rows = 0; rows < (1u << np); ++rows) {
    if (static_cast<std::size_t>(std::popcount(rows)) != x) continue;
    std::fill(col_counts.begin(), col_counts.end(), 0);
    for (std::size_t r = 0; r < np; ++r) {
      if (!(rows >> r & 1u)) continue;
      for (std::size_t c = 0; c < nf; ++c) col_counts[c] += mask.missing(r, c);
    }
    std::nth_element(col_counts.begin(), col_counts.begin() + static_cast<std::ptrdiff_t>(y - 1),
                     col_counts.end());
    std::size_t sum = std::accumulate(col_counts.begin(),
                                      col_counts.begin() + static_cast<std::ptrdiff_t>(y),
                                      std::size_t{0});
    best = std::min(best, sum);
  }
  return best;
}

/// Raised when no generated subset satisfies the missing-rate cap.
class NoQualifiedSubsets : public std::runtime_error {
 public:
  explicit NoQualifiedSubsets(double cap)
      : std::runtime_error("no qualified subsets at missing-rate cap " + std::to_string(cap) +
                           "; try a larger cap") {}
};

struct QualifiedSubsetCollection {
  std::vector<SubsetDescriptor> subsets;
  double cap = 0.20;
  double bin_width = 0.05;
};

inline constexpr double kDefaultCap = 0.20;
inline constexpr double kDefaultRateBinWidth = 0.05;

inline std::size_t rate_bin(double rate, double width) {
  return static_cast<std::size_t>(std::floor(rate / width + 1e-9));
}

/// Keeps shapes whose rate is within `cap`, then, inside each missing-rate bin,
/// keeps a shape only if it has the most columns among shapes with the same
/// row count and the most rows among shapes with the same column count.
inline QualifiedSubsetCollection filter_qualified(const MissingCountTable& table, double cap,
                                                  double bin_width = kDefaultRateBinWidth) {
  if (!(cap >= 0.0 && cap <= 1.0)) throw std::invalid_argument("cap must lie in [0, 1]");
  if (!(bin_width > 0.0)) throw std::invalid_argument("rate bin width must be positive");

  struct Shape {
    std::size_t rows, cols, bin;
  };
  std::vector<Shape> shapes;
  for (std::size_t i = table.min_rows(); i <= table.rows(); ++i) {
    for (std::size_t j = table.min_cols(); j <= table.cols(); ++j) {
      auto r = table.rate(i, j);
      if (r && *r <= cap + 1e-12) shapes.push_back({i, j, rate_bin(*r, bin_width)});
    }
  }
  // (bin, rows) -> max cols ; (bin, cols) -> max rows
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> max_cols, max_rows;
  for (const auto& s : shapes) {
    auto& mc = max_cols[{s.bin, s.rows}];
    mc = std::max(mc, s.cols);
    auto& mr = max_rows[{s.bin, s.cols}];
    mr = std::max(mr, s.rows);
  }
  std::vector<Shape> kept;
  for (const auto& s : shapes) {
    if (max_cols[{s.bin, s.rows}] == s.cols && max_rows[{s.bin, s.cols}] == s.rows) kept.push_back(s);
  }
  if (kept.empty()) throw NoQualifiedSubsets(cap);
  std::sort(kept.begin(), kept.end(), [](const Shape& a, const Shape& b) {
    if (a.bin != b.bin) return a.bin < b.bin;
    if (a.rows != b.rows) return a.rows > b.rows;
    return a.cols > b.cols;
  });
  QualifiedSubsetCollection out;
  out.cap = cap;
  out.bin_width = bin_width;
  for (const auto& s : kept) out.subsets.push_back(table.descriptor(s.rows, s.cols));
  return out;
}

inline nlohmann::json to_json(const SubsetDescriptor& d, const ObservationTable& table) {
  nlohmann::json rows = nlohmann::json::array(), cols = nlohmann::json::array();
  for (auto r : d.rows) rows.push_back(table.patient_ids().at(r));
  for (auto c : d.cols) cols.push_back(table.feature_names().at(c));
  return {{"row_ids", rows},
          {"col_ids", cols},
          {"missing_count", d.missing_count},
          {"missing_rate", d.missing_rate}};
}

/// Resolves ids against `table` and verifies the stored count by recount.
inline SubsetDescriptor descriptor_from_json(const nlohmann::json& j, const ObservationTable& table,
                                             const MissingnessMask& mask) {
  std::unordered_map<std::string, std::size_t> row_index, col_index;
  for (std::size_t i = 0; i < table.num_patients(); ++i) row_index.emplace(table.patient_ids()[i], i);
  for (std::size_t c = 0; c < table.num_features(); ++c) col_index.emplace(table.feature_names()[c], c);
  SubsetDescriptor d;
  for (const auto& id : j.at("row_ids")) {
    auto it = row_index.find(id.get<std::string>());
    if (it == row_index.end()) throw ParseError("subset refers to unknown patient '" + id.get<std::string>() + "'");
    d.rows.push_back(it->second);
  }
  for (const auto& id : j.at("col_ids")) {
    auto it = col_index.find(id.get<std::string>());
    if (it == col_index.end()) throw ParseError("subset refers to unknown feature '" + id.get<std::string>() + "'");
    d.cols.push_back(it->second);
  }
  std::sort(d.rows.begin(), d.rows.end());
  std::sort(d.cols.begin(), d.cols.end());
  d.missing_count = j.at("missing_count").get<std::size_t>();
  d.missing_rate = j.at("missing_rate").get<double>();
  auto actual = recount(mask, d.rows, d.cols);
  if (actual != d.missing_count) {
    throw ParseError("subset missing_count " + std::to_string(d.missing_count) +
                     " disagrees with recount " + std::to_string(actual));
  }
  return d;
}

inline nlohmann::json to_json(const QualifiedSubsetCollection& c, const ObservationTable& table) {
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& d : c.subsets) subsets.push_back(to_json(d, table));
  return {{"cap", c.cap}, {"rate_bin_width", c.bin_width}, {"subsets", subsets}};
}

inline QualifiedSubsetCollection collection_from_json(const nlohmann::json& j,
                                                      const ObservationTable& table) {
  QualifiedSubsetCollection c;
  c.cap = j.at("cap").get<double>();
  c.bin_width = j.at("rate_bin_width").get<double>();
  const auto mask = build_mask(table);
  for (const auto& s : j.at("subsets")) c.subsets.push_back(descriptor_from_json(s, table, mask));
  return c;
}

}  // namespace elmv
