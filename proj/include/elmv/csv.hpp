#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "elmv/table.hpp"

namespace elmv {

struct CsvOptions {
  char separator = ',';
  std::set<std::string> missing_tokens = {"", "NA", "NaN"};
  /// Column holding class labels; omitted from the feature grid.
  std::optional<std::string> label_column;
  /// Column holding patient ids; rows are numbered "r1".."rN" when absent.
  std::optional<std::string> id_column;
  /// Accept files without the label column (unlabeled queries).
  bool label_optional = false;
  /// Lines starting with this character are skipped.
  std::optional<char> comment;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits one record; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_record(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == sep) {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string quote_if_needed(const std::string& s, char sep) {
  if (s.find(sep) == std::string::npos && s.find('"') == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q.push_back('"');
    q.push_back(ch);
  }
  q.push_back('"');
  return q;
}

}  // namespace detail

/// Shortest text that reads back to the same double.
using detail::format_double;

/// Parses a delimited table from a stream. `source` names the input in errors.
inline ObservationTable read_table(std::istream& in, const CsvOptions& opts = {},
                                   const std::string& source = "<stream>") {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  auto skip = [&](std::string_view l) {
    l = detail::trim(l);
    return l.empty() || (opts.comment && l.front() == *opts.comment);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!skip(line)) {
      header = detail::split_record(line, opts.separator);
      break;
    }
  }
  if (header.empty()) throw ParseError(source + ": missing header row");

  std::optional<std::size_t> label_col;
  std::optional<std::size_t> id_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (opts.label_column && header[c] == *opts.label_column) label_col = c;
    if (opts.id_column && header[c] == *opts.id_column) id_col = c;
  }
  if (opts.label_column && !label_col && !opts.label_optional) {
    throw ParseError(source + ": label column '" + *opts.label_column + "' not in header");
  }
  if (opts.id_column && !id_col) {
    throw ParseError(source + ": id column '" + *opts.id_column + "' not in header");
  }

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == label_col || c == id_col) continue;
    feature_cols.push_back(c);
    feature_names.push_back(header[c]);
  }

  std::vector<std::string> ids;
  std::vector<Cell> values;
  std::optional<std::vector<std::string>> labels;
  if (label_col) labels.emplace();

  while (std::getline(in, line)) {
    ++line_no;
    if (skip(line)) continue;
    auto fields = detail::split_record(line, opts.separator);
    if (fields.size() != header.size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    ids.push_back(id_col ? fields[*id_col] : "r" + std::to_string(ids.size() + 1));
    if (labels) labels->push_back(fields[*label_col]);
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const std::string& tok = fields[feature_cols[k]];
      if (opts.missing_tokens.count(tok)) {
        values.emplace_back(std::nullopt);
        continue;
      }
      auto v = detail::parse_double(tok);
      if (!v) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": column '" +
                         feature_names[k] + "': cannot parse '" + tok + "' as a number");
      }
      values.emplace_back(*v);
    }
  }
  try {
    return ObservationTable(std::move(ids), std::move(feature_names), std::move(values),
                            std::move(labels));
  } catch (const std::invalid_argument& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline ObservationTable load_table(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_table(in, opts, path);
}

/// Writes the table with an id column first and the label column last.
/// Absent cells are written as the empty string; numbers use the shortest
/// representation that round-trips exactly.
inline void write_table(std::ostream& out, const ObservationTable& table,
                        const CsvOptions& opts = {}) {
  const char sep = opts.separator;
  const std::string id_name = opts.id_column.value_or("id");
  const std::string label_name = opts.label_column.value_or("label");
  out << detail::quote_if_needed(id_name, sep);
  for (const auto& f : table.feature_names()) out << sep << detail::quote_if_needed(f, sep);
  if (table.has_labels()) out << sep << detail::quote_if_needed(label_name, sep);
  out << '\n';
  for (std::size_t i = 0; i < table.num_patients(); ++i) {
    out << detail::quote_if_needed(table.patient_ids()[i], sep);
    for (std::size_t j = 0; j < table.num_features(); ++j) {
      out << sep;
      if (const auto& v = table.at(i, j)) out << detail::format_double(*v);
    }
    if (table.has_labels()) out << sep << detail::quote_if_needed(table.labels()[i], sep);
    out << '\n';
  }
}

inline void save_table(const std::string& path, const ObservationTable& table,
                       const CsvOptions& opts = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_table(out, table, opts);
}

}  // namespace elmv
