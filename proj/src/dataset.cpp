#include "mcausal/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mcausal/errors.hpp"

namespace mcausal {

namespace {

bool is_nan(double v) { return std::isnan(v); }

}  // namespace

void ObservedDataset::validate() const {
  const Eigen::Index nn = n();
  if (a.size() != nn || l_o.rows() != nn || l_m.rows() != nn || r_a.size() != nn ||
      r_l.rows() != nn) {
    throw DataError("dataset fields disagree on the number of units");
  }
  if (static_cast<int>(l_o_names.size()) != l_o.cols()) {
    throw DataError("l_o column names do not match l_o width");
  }
  if (static_cast<int>(l_m_names.size()) != l_m.cols()) {
    throw DataError("l_m column names do not match l_m width");
  }
  if (r_l.cols() != q() || static_cast<int>(group_names.size()) != q()) {
    throw DataError("r_l width does not match the number of l_m groups");
  }
  std::vector<char> seen(l_m.cols(), 0);
  for (const auto& group : l_m_groups) {
    if (group.empty()) throw DataError("empty l_m group");
    for (int c : group) {
      if (c < 0 || c >= l_m.cols() || seen[c]) throw DataError("invalid l_m group layout");
      seen[c] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw DataError("l_m column not covered by any group");
  }

  for (Eigen::Index i = 0; i < nn; ++i) {
    if (is_nan(y[i])) throw MissingOutcome("outcome missing for unit " + std::to_string(i));
    if (!is_binary01(y[i])) throw NonBinary("outcome not in {0,1} for unit " + std::to_string(i));
    if (r_a[i] != 0 && r_a[i] != 1) throw DataError("r_a not in {0,1}");
    if (r_a[i] == 1) {
      if (is_nan(a[i])) throw DataError("exposure marked observed but value absent");
      if (!is_binary01(a[i])) throw NonBinary("exposure not in {0,1} for unit " + std::to_string(i));
    } else if (!is_nan(a[i])) {
      throw DataError("exposure value present but r_a = 0");
    }
    for (int k = 0; k < q(); ++k) {
      const int r = r_l(i, k);
      if (r != 0 && r != 1) throw DataError("r_l not in {0,1}");
      for (int c : l_m_groups[k]) {
        if (r == 1 && is_nan(l_m(i, c))) throw DataError("covariate marked observed but value absent");
        if (r == 0 && !is_nan(l_m(i, c))) throw DataError("covariate value present but r_l = 0");
      }
    }
    for (int c = 0; c < l_o.cols(); ++c) {
      if (is_nan(l_o(i, c))) throw DataError("l_o must be fully observed");
    }
  }
}

bool ObservedDataset::fully_observed() const {
  return (r_a == 1).all() && (q() == 0 || (r_l == 1).all());
}

GroupOrdering identity_ordering(int q) {
  GroupOrdering ord(q);
  for (int k = 0; k < q; ++k) ord[k] = k;
  return ord;
}

bool is_valid_ordering(const GroupOrdering& ordering, int q) {
  if (static_cast<int>(ordering.size()) != q) return false;
  std::vector<char> seen(q, 0);
  for (int g : ordering) {
    if (g < 0 || g >= q || seen[g]) return false;
    seen[g] = 1;
  }
  return true;
}

namespace {

void drop_group(ObservedDataset& d, Eigen::Index i, int group) {
  d.r_l(i, group) = 0;
  for (int c : d.l_m_groups[group]) d.l_m(i, c) = std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

ObservedDataset coarsen_monotone(const ObservedDataset& data, const GroupOrdering& ordering) {
  if (!is_valid_ordering(ordering, data.q())) {
    throw DataError("ordering is not a permutation of the l_m groups");
  }
  ObservedDataset out = data;
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    bool broken = false;
    for (int pos = 0; pos < out.q(); ++pos) {
      const int g = ordering[pos];
      if (broken) {
        drop_group(out, i, g);
      } else if (out.r_l(i, g) == 0) {
        broken = true;
      }
    }
  }
  return out;
}

ObservedDataset collapse_block(const ObservedDataset& data) {
  ObservedDataset out = data;
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    bool all_observed = out.r_a[i] == 1;
    for (int k = 0; k < out.q(); ++k) all_observed = all_observed && out.r_l(i, k) == 1;
    if (!all_observed) {
      out.r_a[i] = 0;
      out.a[i] = std::numeric_limits<double>::quiet_NaN();
      for (int k = 0; k < out.q(); ++k) drop_group(out, i, k);
    }
  }
  return out;
}

ObservedDataset to_block_rl(const ObservedDataset& data) {
  ObservedDataset out = data;
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    bool block = true;
    for (int k = 0; k < out.q(); ++k) block = block && out.r_l(i, k) == 1;
    if (!block) {
      for (int k = 0; k < out.q(); ++k) drop_group(out, i, k);
    }
  }
  return out;
}

ObservedDataset apply_scheme(const ObservedDataset& data, const MissingnessScheme& scheme) {
  switch (scheme.variant) {
    case SchemeVariant::SimultaneousBlock:
      return collapse_block(data);
    case SchemeVariant::SeparateBlock:
      return to_block_rl(data);
    case SchemeVariant::SequentialCovariates: {
      const GroupOrdering ord =
          scheme.ordering.empty() ? identity_ordering(data.q()) : scheme.ordering;
      return coarsen_monotone(data, ord);
    }
  }
  throw DataError("unknown scheme variant");
}

ObservedDataset take_rows(const ObservedDataset& data, const std::vector<int>& rows) {
  ObservedDataset out;
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
  out.y.resize(m);
  out.a.resize(m);
  out.l_o.resize(m, data.l_o.cols());
  out.l_m.resize(m, data.l_m.cols());
  out.r_a.resize(m);
  out.r_l.resize(m, data.r_l.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const int s = rows[static_cast<std::size_t>(i)];
    out.y[i] = data.y[s];
    out.a[i] = data.a[s];
    out.l_o.row(i) = data.l_o.row(s);
    out.l_m.row(i) = data.l_m.row(s);
    out.r_a[i] = data.r_a[s];
    out.r_l.row(i) = data.r_l.row(s);
  }
  out.y_name = data.y_name;
  out.a_name = data.a_name;
  out.l_o_names = data.l_o_names;
  out.l_m_names = data.l_m_names;
  out.l_m_groups = data.l_m_groups;
  out.group_names = data.group_names;
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

// One record per call; handles quoted fields with embedded commas, quotes
// and newlines. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    const char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      fields.push_back(std::move(field));
      return true;
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

double parse_numeric(const std::string& cell, const std::string& column, std::size_t row) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("cell '" + cell + "' in column '" + column + "' (row " +
                    std::to_string(row) + ") is not numeric");
  }
  return value;
}

double parse_binary(const std::string& cell, const std::string& column, std::size_t row) {
  if (cell == "0") return 0.0;
  if (cell == "1") return 1.0;
  throw NonBinary("cell '" + cell + "' in column '" + column + "' (row " + std::to_string(row) +
                  ") must be 0 or 1");
}

}  // namespace

ObservedDataset load_csv(const std::string& path, const CsvConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::vector<std::string> header;
  if (!read_record(in, header)) throw DataError("empty CSV file: " + path);

  std::unordered_map<std::string, int> col_index;
  for (std::size_t j = 0; j < header.size(); ++j) col_index[header[j]] = static_cast<int>(j);
  auto require_column = [&](const std::string& name) {
    const auto it = col_index.find(name);
    if (it == col_index.end()) throw UnknownColumn("column '" + name + "' not in " + path);
    return it->second;
  };

  const int y_col = require_column(config.outcome);
  const int a_col = require_column(config.exposure);
  std::vector<int> lo_cols;
  for (const auto& name : config.l_o) lo_cols.push_back(require_column(name));
  std::vector<std::vector<int>> group_cols;
  for (const auto& group : config.l_m) {
    std::vector<int> cols;
    for (const auto& name : group) cols.push_back(require_column(name));
    if (cols.empty()) throw ConfigError("empty l_m group in column mapping");
    group_cols.push_back(std::move(cols));
  }

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  while (read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(records.size() + 2) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    }
    records.push_back(fields);
  }

  const auto n = static_cast<Eigen::Index>(records.size());
  const auto& sentinel = config.missing_sentinel;
  auto missing = [&](const std::string& cell) { return cell == sentinel; };

  ObservedDataset data;
  data.y.resize(n);
  data.a.resize(n);
  data.l_o.resize(n, static_cast<Eigen::Index>(lo_cols.size()));
  data.r_a.resize(n);

  int m_total = 0;
  for (const auto& g : group_cols) m_total += static_cast<int>(g.size());
  data.l_m.resize(n, m_total);
  data.r_l.resize(n, static_cast<Eigen::Index>(group_cols.size()));

  data.y_name = config.outcome;
  data.a_name = config.exposure;
  data.l_o_names = config.l_o;
  int next = 0;
  for (std::size_t g = 0; g < group_cols.size(); ++g) {
    std::vector<int> local;
    for (std::size_t j = 0; j < group_cols[g].size(); ++j) {
      data.l_m_names.push_back(config.l_m[g][j]);
      local.push_back(next++);
    }
    data.l_m_groups.push_back(local);
    data.group_names.push_back(config.l_m[g].size() == 1
                                   ? config.l_m[g][0]
                                   : config.l_m[g][0] + "_group");
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = records[static_cast<std::size_t>(i)];
    const std::size_t line = static_cast<std::size_t>(i) + 2;

    const std::string& y_cell = row[static_cast<std::size_t>(y_col)];
    if (missing(y_cell)) throw MissingOutcome("outcome missing at row " + std::to_string(line));
    data.y[i] = parse_binary(y_cell, config.outcome, line);

    const std::string& a_cell = row[static_cast<std::size_t>(a_col)];
    if (missing(a_cell)) {
      data.r_a[i] = 0;
      data.a[i] = nan;
    } else {
      data.r_a[i] = 1;
      data.a[i] = parse_binary(a_cell, config.exposure, line);
    }

    for (std::size_t j = 0; j < lo_cols.size(); ++j) {
      const std::string& cell = row[static_cast<std::size_t>(lo_cols[j])];
      if (missing(cell)) {
        throw DataError("fully observed column '" + config.l_o[j] + "' has a missing cell at row " +
                        std::to_string(line));
      }
      data.l_o(i, static_cast<Eigen::Index>(j)) = parse_numeric(cell, config.l_o[j], line);
    }

    int col = 0;
    for (std::size_t g = 0; g < group_cols.size(); ++g) {
      bool group_missing = false;
      for (int src : group_cols[g]) {
        if (missing(row[static_cast<std::size_t>(src)])) group_missing = true;
      }
      data.r_l(i, static_cast<Eigen::Index>(g)) = group_missing ? 0 : 1;
      for (std::size_t j = 0; j < group_cols[g].size(); ++j, ++col) {
        if (group_missing) {
          data.l_m(i, col) = nan;
        } else {
          const std::string& cell = row[static_cast<std::size_t>(group_cols[g][j])];
          data.l_m(i, col) = parse_numeric(cell, config.l_m[g][j], line);
        }
      }
    }
  }

  data.validate();
  return data;
}

std::string format_cell(double v) {
  if (std::isnan(v)) return "";
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

void write_csv(const ObservedDataset& data, const std::string& path,
               const std::string& missing_sentinel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");

  auto emit = [&](const std::string& cell, bool last) {
    out << cell << (last ? "\n" : ",");
  };

  emit(data.y_name, false);
  emit(data.a_name, false);
  for (std::size_t j = 0; j < data.l_o_names.size(); ++j) {
    emit(data.l_o_names[j], false);
  }
  for (std::size_t j = 0; j < data.l_m_names.size(); ++j) {
    emit(data.l_m_names[j], j + 1 == data.l_m_names.size());
  }

  for (Eigen::Index i = 0; i < data.n(); ++i) {
    emit(format_cell(data.y[i]), false);
    emit(data.r_a[i] == 1 ? format_cell(data.a[i]) : missing_sentinel, false);
    for (Eigen::Index j = 0; j < data.l_o.cols(); ++j) emit(format_cell(data.l_o(i, j)), false);
    for (int k = 0; k < data.q(); ++k) {
      for (std::size_t j = 0; j < data.l_m_groups[k].size(); ++j) {
        const int c = data.l_m_groups[k][j];
        const bool last = k + 1 == data.q() && j + 1 == data.l_m_groups[k].size();
        emit(data.r_l(i, k) == 1 ? format_cell(data.l_m(i, c)) : missing_sentinel, last);
      }
    }
  }
}

}  // namespace mcausal
