#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "attnprice/error.hpp"
#include "attnprice/numeric.hpp"

namespace attnprice {

// ---- months ---------------------------------------------------------------

// Calendar month as a dense integer: year * 12 + (month - 1).
using MonthIndex = int;

inline MonthIndex make_month(int year, int month) { return year * 12 + (month - 1); }

inline std::optional<MonthIndex> parse_month(std::string_view s) {
  // Accepts YYYY-MM and YYYY-MM-DD; the day is ignored.
  if (s.size() != 7 && s.size() != 10) return std::nullopt;
  if (s[4] != '-' || (s.size() == 10 && s[7] != '-')) return std::nullopt;
  int year = 0, month = 0;
  auto r1 = std::from_chars(s.data(), s.data() + 4, year);
  auto r2 = std::from_chars(s.data() + 5, s.data() + 7, month);
  if (r1.ec != std::errc{} || r1.ptr != s.data() + 4) return std::nullopt;
  if (r2.ec != std::errc{} || r2.ptr != s.data() + 7) return std::nullopt;
  if (month < 1 || month > 12) return std::nullopt;
  return make_month(year, month);
}

inline std::string format_month(MonthIndex m) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", m / 12, m % 12 + 1);
  return buf;
}

// ---- panels ---------------------------------------------------------------

enum class PanelKind { Factor, Returns, Caps, RiskFree };

inline const char* to_string(PanelKind k) {
  switch (k) {
    case PanelKind::Factor: return "factor";
    case PanelKind::Returns: return "returns";
    case PanelKind::Caps: return "caps";
    case PanelKind::RiskFree: return "riskfree";
  }
  return "?";
}

inline PanelKind parse_panel_kind(std::string_view s) {
  if (s == "factor" || s == "factors") return PanelKind::Factor;
  if (s == "returns") return PanelKind::Returns;
  if (s == "caps") return PanelKind::Caps;
  if (s == "riskfree" || s == "rf") return PanelKind::RiskFree;
  throw ConfigError("unknown panel kind '" + std::string(s) + "'");
}

// T x n monthly panel with an observation mask. Missing cells hold NaN.
// Factor, return, cap and risk-free files all share this layout; `kind`
// selects the validation rules.
struct Panel {
  PanelKind kind = PanelKind::Factor;
  std::vector<MonthIndex> dates;
  std::vector<std::string> names;
  Matrix values;
  std::vector<std::uint8_t> observed;  // row-major, 1 = observed

  std::size_t rows() const noexcept { return dates.size(); }
  std::size_t cols() const noexcept { return names.size(); }

  bool is_observed(std::size_t r, std::size_t c) const { return observed[r * cols() + c] != 0; }

  std::size_t missing_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows(); ++r) n += is_observed(r, c) ? 0 : 1;
    return n;
  }

  std::size_t total_missing() const {
    return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), std::uint8_t{0}));
  }

  std::optional<std::size_t> row_of(MonthIndex m) const {
    auto it = std::lower_bound(dates.begin(), dates.end(), m);
    if (it == dates.end() || *it != m) return std::nullopt;
    return static_cast<std::size_t>(it - dates.begin());
  }

  std::optional<std::size_t> column_of(std::string_view name) const {
    for (std::size_t c = 0; c < names.size(); ++c)
      if (names[c] == name) return c;
    return std::nullopt;
  }

  Panel select_rows(const std::vector<std::size_t>& rows_to_keep) const {
    Panel out;
    out.kind = kind;
    out.names = names;
    out.values = Matrix(rows_to_keep.size(), cols());
    out.observed.resize(rows_to_keep.size() * cols());
    for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
      const std::size_t r = rows_to_keep[i];
      out.dates.push_back(dates[r]);
      for (std::size_t c = 0; c < cols(); ++c) {
        out.values(i, c) = values(r, c);
        out.observed[i * cols() + c] = observed[r * cols() + c];
      }
    }
    return out;
  }

  Panel select_columns(const std::vector<std::size_t>& cols_to_keep) const {
    Panel out;
    out.kind = kind;
    out.dates = dates;
    out.values = Matrix(rows(), cols_to_keep.size());
    out.observed.resize(rows() * cols_to_keep.size());
    for (std::size_t j = 0; j < cols_to_keep.size(); ++j) out.names.push_back(names[cols_to_keep[j]]);
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t j = 0; j < cols_to_keep.size(); ++j) {
        out.values(r, j) = values(r, cols_to_keep[j]);
        out.observed[r * cols_to_keep.size() + j] = observed[r * cols() + cols_to_keep[j]];
      }
    return out;
  }

  // Rows whose month falls in [first, last].
  Panel slice_months(MonthIndex first, MonthIndex last) const {
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < rows(); ++r)
      if (dates[r] >= first && dates[r] <= last) keep.push_back(r);
    return select_rows(keep);
  }
};

inline Panel make_panel(PanelKind kind, std::vector<MonthIndex> dates, std::vector<std::string> names,
                        Matrix values) {
  Panel p;
  p.kind = kind;
  p.dates = std::move(dates);
  p.names = std::move(names);
  p.values = std::move(values);
  p.observed.resize(p.values.rows() * p.values.cols());
  for (std::size_t i = 0; i < p.observed.size(); ++i) p.observed[i] = std::isnan(p.values.flat()[i]) ? 0 : 1;
  return p;
}

// Structural and per-kind invariants; throws ValidationError.
inline void validate_panel(const Panel& p) {
  if (p.values.rows() != p.dates.size() || p.values.cols() != p.names.size() ||
      p.observed.size() != p.values.rows() * p.values.cols())
    throw ValidationError(std::string(to_string(p.kind)) + " panel: shape mismatch between dates, names and values");
  for (std::size_t r = 1; r < p.dates.size(); ++r)
    if (p.dates[r] <= p.dates[r - 1])
      throw ValidationError(std::string(to_string(p.kind)) + " panel: dates not strictly increasing at " +
                            format_month(p.dates[r]));
  std::set<std::string> seen;
  for (const auto& n : p.names)
    if (!seen.insert(n).second) throw ValidationError("duplicate column name '" + n + "'");
  if (p.kind == PanelKind::RiskFree && p.cols() != 1)
    throw ValidationError("risk-free file must have exactly the columns date,rf");
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (std::size_t c = 0; c < p.cols(); ++c) {
      if (!p.is_observed(r, c)) continue;
      const double v = p.values(r, c);
      if (!std::isfinite(v))
        throw ValidationError("non-finite value at " + format_month(p.dates[r]) + ", column '" + p.names[c] + "'");
      if (p.kind == PanelKind::Caps && !(v > 0.0))
        throw ValidationError("market cap must be positive at " + format_month(p.dates[r]) + ", column '" +
                              p.names[c] + "'");
    }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Parses CSV text (header row, first column `date`, empty cell = missing).
// Rows are returned sorted by date.
inline Panel parse_panel(std::istream& in, PanelKind kind, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": missing header row", 1, 1);
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "date") throw FormatError(source + ": first header cell must be 'date'", 1, 1);
  if (header.size() < 2) throw FormatError(source + ": no data columns", 1, 2);

  std::vector<std::string> names;
  for (std::size_t c = 1; c < header.size(); ++c) names.emplace_back(header[c]);
  if (kind == PanelKind::RiskFree && (names.size() != 1 || names[0] != "rf"))
    throw FormatError(source + ": risk-free header must be 'date,rf'", 1, 2);

  std::vector<std::pair<MonthIndex, std::vector<double>>> rows;
  std::size_t file_row = 1;
  while (std::getline(in, line)) {
    ++file_row;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError(source + ": expected " + std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()),
                        file_row, std::min(cells.size(), header.size()) + 1);
    auto month = parse_month(cells[0]);
    if (!month) throw FormatError(source + ": unparseable date '" + std::string(cells[0]) + "'", file_row, 1);
    std::vector<double> vals(names.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) continue;
      auto v = detail::parse_double(cells[c]);
      if (!v) throw FormatError(source + ": unparseable cell '" + std::string(cells[c]) + "'", file_row, c + 1);
      vals[c - 1] = *v;
    }
    rows.emplace_back(*month, std::move(vals));
  }

  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].first == rows[i - 1].first)
      throw ValidationError(source + ": duplicate date " + format_month(rows[i].first));

  std::vector<MonthIndex> dates;
  Matrix values(rows.size(), names.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    dates.push_back(rows[r].first);
    std::copy(rows[r].second.begin(), rows[r].second.end(), values.row(r).begin());
  }
  Panel p = make_panel(kind, std::move(dates), std::move(names), std::move(values));
  validate_panel(p);
  return p;
}

inline Panel load_panel(const std::string& path, PanelKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_panel(in, kind, path);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_panel(std::ostream& out, const Panel& p) {
  out << "date";
  for (const auto& n : p.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < p.rows(); ++r) {
    out << format_month(p.dates[r]);
    for (std::size_t c = 0; c < p.cols(); ++c) {
      out << ',';
      if (p.is_observed(r, c)) out << format_double(p.values(r, c));
    }
    out << '\n';
  }
}

inline void save_panel(const std::string& path, const Panel& p) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_panel(out, p);
}

// Keeps the columns whose missing fraction is <= max_missing, in order.
inline Panel filter_by_missingness(const Panel& panel, double max_missing = 0.40) {
  if (!(max_missing >= 0.0 && max_missing < 1.0)) throw ConfigError("max_missing must lie in [0, 1)");
  std::vector<std::size_t> keep;
  const double rows = static_cast<double>(panel.rows());
  for (std::size_t c = 0; c < panel.cols(); ++c) {
    const double missing = static_cast<double>(panel.missing_count(c));
    // Compare counts, not fractions, so 4/10 at 0.40 is not lost to rounding.
    if (missing <= max_missing * rows + 1e-9) keep.push_back(c);
  }
  if (keep.empty()) throw DataError("filter_by_missingness: every column exceeds the missing threshold");
  return panel.select_columns(keep);
}

// Restricts both panels to their common months. Returns the number of rows
// dropped across both panels.
inline std::size_t intersect_dates(Panel& a, Panel& b) {
  std::vector<MonthIndex> common;
  std::set_intersection(a.dates.begin(), a.dates.end(), b.dates.begin(), b.dates.end(), std::back_inserter(common));
  std::size_t dropped = (a.rows() - common.size()) + (b.rows() - common.size());
  if (dropped == 0) return 0;
  auto rows_for = [&](const Panel& p) {
    std::vector<std::size_t> r;
    for (MonthIndex m : common) r.push_back(*p.row_of(m));
    return r;
  };
  a = a.select_rows(rows_for(a));
  b = b.select_rows(rows_for(b));
  return dropped;
}

// ---- rolling windows ------------------------------------------------------

// Inclusive index ranges into a sample sequence.
struct Window {
  std::size_t train_start;
  std::size_t train_end;
  std::size_t valid_start;
  std::size_t valid_end;
  std::size_t test_index;

  std::size_t fit_end() const { return valid_start - 1; }
  std::size_t train_len() const { return train_end - train_start + 1; }
  bool operator==(const Window&) const = default;
};

struct RollingWindowPlan {
  std::vector<Window> windows;
};

inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

// Rolling (fixed-length) train blocks advancing one step per test index. The
// validation block is the trailing round(valid_frac * train_len) indices of
// each train block, and the test index immediately follows it.
inline RollingWindowPlan make_rolling_plan(std::size_t total, std::size_t train_len, double valid_frac,
                                           std::size_t test_len) {
  if (train_len < 5) throw ConfigError("rolling plan: train_len must be >= 5");
  if (train_len + test_len > total)
    throw ConfigError("rolling plan: train_len + test_len (" + std::to_string(train_len + test_len) +
                      ") exceeds the sample count (" + std::to_string(total) + ")");
  if (!(valid_frac > 0.0 && valid_frac < 1.0)) throw ConfigError("rolling plan: valid_frac must lie in (0, 1)");
  const std::size_t valid_len = round_half_up(valid_frac * static_cast<double>(train_len));
  if (valid_len < 1 || valid_len >= train_len)
    throw ConfigError("rolling plan: validation block must be non-empty and shorter than the train block");

  RollingWindowPlan plan;
  for (std::size_t k = 0; k < test_len; ++k) {
    Window w;
    w.test_index = total - test_len + k;
    w.train_end = w.test_index - 1;
    w.train_start = w.test_index - train_len;
    w.valid_end = w.train_end;
    w.valid_start = w.train_end - valid_len + 1;
    plan.windows.push_back(w);
  }
  return plan;
}

}  // namespace attnprice
