#pragma once

#include "ccwf/core.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ccwf {

// A surjective map from row index onto partition indices {0..k-1}.
struct PartitionAssignment {
  std::vector<int> labels;
  std::size_t k = 0;

  std::size_t size() const { return labels.size(); }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (int l : labels) ++s[static_cast<std::size_t>(l)];
    return s;
  }

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> m(k);
    for (std::size_t i = 0; i < labels.size(); ++i) m[static_cast<std::size_t>(labels[i])].push_back(i);
    return m;
  }

  // Throws unless every index in {0..k-1} is used and nothing else is.
  void validate(std::size_t n) const {
    require(labels.size() == n, "partition length " + std::to_string(labels.size()) +
                                    " does not match dataset rows " + std::to_string(n));
    require(k >= 1, "partition count must be >= 1");
    std::vector<char> seen(k, 0);
    for (int l : labels) {
      require(l >= 0 && static_cast<std::size_t>(l) < k, "partition label " + std::to_string(l) + " out of range");
      seen[static_cast<std::size_t>(l)] = 1;
    }
    for (std::size_t j = 0; j < k; ++j) require(seen[j] != 0, "partition " + std::to_string(j) + " is empty");
  }
};

// Covariates, outcome and (optionally) the generating cluster of each row.
struct Dataset {
  Matrix features;  // n x p
  Vector outcome;   // n
  std::optional<std::vector<int>> true_labels;
  std::vector<std::string> feature_names;

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(features.cols()); }

  std::size_t label_count() const {
    if (!true_labels || true_labels->empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(true_labels->begin(), true_labels->end())) + 1;
  }

  void validate() const {
    require(features.rows() >= 1 && features.cols() >= 1, "dataset needs n >= 1 and p >= 1");
    require(outcome.size() == features.rows(), "outcome length does not match feature rows");
    require(features.allFinite(), "features contain non-finite values");
    require(outcome.allFinite(), "outcome contains non-finite values");
    if (true_labels) {
      PartitionAssignment a{*true_labels, label_count()};
      a.validate(rows());
    }
    require(feature_names.empty() || feature_names.size() == cols(), "feature name count does not match p");
  }

  // Rows `idx` of this dataset, labels and names carried along.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    d.outcome.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      d.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
      d.outcome[static_cast<Eigen::Index>(i)] = outcome[static_cast<Eigen::Index>(idx[i])];
    }
    d.feature_names = feature_names;
    return d;
  }

  std::vector<std::string> names_or_default() const {
    if (!feature_names.empty()) return feature_names;
    std::vector<std::string> names;
    for (std::size_t m = 0; m < cols(); ++m) names.push_back("x" + std::to_string(m + 1));
    return names;
  }
};

struct TrainTestSplit {
  Dataset train;
  std::vector<Dataset> tests;
};

namespace detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    for (auto c : split(line, ',')) cells.emplace_back(trim(c));
    if (!have_header) {
      if (line_no == 1 && cells[0].size() >= 3 && cells[0].compare(0, 3, "\xEF\xBB\xBF") == 0) cells[0].erase(0, 3);
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw IoError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw IoError(path + ": missing header row");
  return t;
}

inline std::optional<std::size_t> find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  return std::nullopt;
}

}  // namespace detail

// Reads a comma-separated file with a header row. Every column other than
// the outcome and (optional) label column becomes a feature, in header order.
inline Dataset load_csv(const std::string& path, const std::string& outcome_column,
                        const std::optional<std::string>& label_column = std::nullopt) {
  auto table = detail::read_csv_table(path);
  auto y_col = detail::find_column(table.header, outcome_column);
  if (!y_col) throw IoError(path + ": outcome column '" + outcome_column + "' not found");
  std::optional<std::size_t> l_col;
  if (label_column) {
    l_col = detail::find_column(table.header, *label_column);
    if (!l_col) throw IoError(path + ": label column '" + *label_column + "' not found");
  }
  std::vector<std::size_t> feat_cols;
  Dataset d;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == *y_col || (l_col && c == *l_col)) continue;
    feat_cols.push_back(c);
    d.feature_names.push_back(table.header[c]);
  }
  if (feat_cols.empty()) throw IoError(path + ": no feature columns");
  if (table.rows.empty()) throw IoError(path + ": no data rows");
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  d.features.resize(n, static_cast<Eigen::Index>(feat_cols.size()));
  d.outcome.resize(n);
  std::vector<int> labels;
  auto parse_cell = [&](std::size_t r, std::size_t c) {
    double v;
    if (!parse_double(table.rows[r][c], v) || !std::isfinite(v)) {
      throw IoError(path + ": line " + std::to_string(table.line_numbers[r]) + ", column '" + table.header[c] +
                    "': cannot parse '" + table.rows[r][c] + "' as a finite number");
    }
    return v;
  };
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    for (std::size_t j = 0; j < feat_cols.size(); ++j) d.features(ri, static_cast<Eigen::Index>(j)) = parse_cell(r, feat_cols[j]);
    d.outcome[ri] = parse_cell(r, *y_col);
    if (l_col) {
      int lab = 0;
      double dv = 0.0;
      const bool as_int = parse_int(table.rows[r][*l_col], lab);
      if (!as_int && parse_double(table.rows[r][*l_col], dv) && dv == std::floor(dv) && std::abs(dv) < 1e9) {
        lab = static_cast<int>(dv);
      } else if (!as_int) {
        throw IoError(path + ": line " + std::to_string(table.line_numbers[r]) + ", column '" +
                      table.header[*l_col] + "': label '" + table.rows[r][*l_col] + "' is not an integer");
      }
      if (lab < 0) throw IoError(path + ": negative label " + std::to_string(lab));
      labels.push_back(lab);
    }
  }
  if (l_col) {
    const int c = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<char> seen(static_cast<std::size_t>(c), 0);
    for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
    for (int j = 0; j < c; ++j)
      if (!seen[static_cast<std::size_t>(j)])
        throw IoError(path + ": labels must be dense in 0.." + std::to_string(c - 1) + ", label " +
                      std::to_string(j) + " is missing");
    d.true_labels = std::move(labels);
  }
  return d;
}

// Reads the named feature columns from a CSV, ignoring any others.
inline Matrix load_feature_columns(const std::string& path, const std::vector<std::string>& names) {
  auto table = detail::read_csv_table(path);
  std::vector<std::size_t> cols;
  for (const auto& name : names) {
    auto c = detail::find_column(table.header, name);
    if (!c) throw IoError(path + ": feature column '" + name + "' not found");
    cols.push_back(*c);
  }
  Matrix X(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      double v;
      if (!parse_double(table.rows[r][cols[j]], v) || !std::isfinite(v))
        throw IoError(path + ": line " + std::to_string(table.line_numbers[r]) + ", column '" + names[j] +
                      "': cannot parse '" + table.rows[r][cols[j]] + "' as a finite number");
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return X;
}

inline void save_csv(const std::string& path, const Dataset& d, const std::string& outcome_column = "y",
                     const std::string& label_column = "label") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write file: " + path);
  const auto names = d.names_or_default();
  for (const auto& n : names) out << n << ',';
  out << outcome_column;
  if (d.true_labels) out << ',' << label_column;
  out << '\n';
  for (Eigen::Index i = 0; i < d.features.rows(); ++i) {
    for (Eigen::Index m = 0; m < d.features.cols(); ++m) out << format_double(d.features(i, m)) << ',';
    out << format_double(d.outcome[i]);
    if (d.true_labels) out << ',' << (*d.true_labels)[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// k equally sized random partitions; the first n mod k partitions receive
// one extra row.
inline PartitionAssignment partition_random(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(k >= 2, "random partitioning needs k >= 2, got " + std::to_string(k));
  require(k <= n, "random partitioning needs k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng = make_rng(seed);
  shuffle(perm, rng);
  PartitionAssignment a;
  a.k = k;
  a.labels.assign(n, 0);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t len = base + (j < extra ? 1 : 0);
    for (std::size_t t = 0; t < len; ++t) a.labels[perm[pos++]] = static_cast<int>(j);
  }
  return a;
}

inline PartitionAssignment partition_random(const Dataset& d, std::size_t k, std::uint64_t seed) {
  return partition_random(d.rows(), k, seed);
}

inline PartitionAssignment partition_by_labels(const Dataset& d) {
  if (!d.true_labels) throw UsageError("dataset has no true cluster labels");
  PartitionAssignment a{*d.true_labels, d.label_count()};
  a.validate(d.rows());
  return a;
}

// Mean over partitions and features of the within-partition range.
inline double average_covariate_range(const Dataset& d, const PartitionAssignment& a) {
  a.validate(d.rows());
  const auto p = d.features.cols();
  Matrix lo = Matrix::Constant(static_cast<Eigen::Index>(a.k), p, std::numeric_limits<double>::infinity());
  Matrix hi = Matrix::Constant(static_cast<Eigen::Index>(a.k), p, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(a.labels[i]);
    for (Eigen::Index m = 0; m < p; ++m) {
      const double v = d.features(static_cast<Eigen::Index>(i), m);
      lo(j, m) = std::min(lo(j, m), v);
      hi(j, m) = std::max(hi(j, m), v);
    }
  }
  return (hi - lo).mean();
}

}  // namespace ccwf
