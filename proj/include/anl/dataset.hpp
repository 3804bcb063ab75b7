#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "anl/common.hpp"
#include "anl/spline.hpp"
#include "anl/timeutil.hpp"

namespace anl {

struct Column {
  std::vector<double> values;
  bool categorical = false;
};

// Time-indexed observations plus named covariate columns for one series.
// Immutable by convention once built; rows the fitting stage must skip
// (missing lag history, unimputable gaps) carry usable = false.
struct Dataset {
  std::string series_id;
  std::vector<std::int64_t> timestamps;  // strictly increasing, constant step
  std::int64_t step_seconds = 0;
  std::vector<double> target;
  std::vector<std::string> column_names;  // insertion order, for deterministic output
  std::unordered_map<std::string, std::size_t> column_index;
  std::deque<Column> columns;  // deque: references stay valid as columns are added
  std::vector<char> usable;

  std::size_t size() const { return timestamps.size(); }

  bool has_column(const std::string& name) const { return column_index.count(name) > 0; }

  const Column& column(const std::string& name) const {
    auto it = column_index.find(name);
    if (it == column_index.end()) throw DataError("unknown column: " + name);
    return columns[it->second];
  }

  Column& add_column(const std::string& name, bool categorical = false) {
    if (has_column(name)) throw DataError("duplicate column: " + name);
    column_index.emplace(name, columns.size());
    column_names.push_back(name);
    columns.push_back(Column{std::vector<double>(size(), 0.0), categorical});
    return columns.back();
  }

  void drop_column(const std::string& name) {
    auto it = column_index.find(name);
    if (it == column_index.end()) return;
    std::size_t idx = it->second;
    columns.erase(columns.begin() + static_cast<std::ptrdiff_t>(idx));
    column_names.erase(column_names.begin() + static_cast<std::ptrdiff_t>(idx));
    column_index.erase(it);
    for (auto& [k, v] : column_index)
      if (v > idx) --v;
  }

  std::size_t usable_count() const {
    std::size_t n = 0;
    for (char u : usable) n += (u != 0);
    return n;
  }

  // Covariate values of one row, by name.
  std::map<std::string, double> row(std::size_t i) const {
    std::map<std::string, double> r;
    for (std::size_t c = 0; c < columns.size(); ++c) r[column_names[c]] = columns[c].values[i];
    return r;
  }

  void check_invariants() const {
    const std::size_t n = size();
    if (target.size() != n || usable.size() != n)
      throw DataError("dataset columns disagree on length");
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c].values.size() != n)
        throw DataError("covariate '" + column_names[c] + "' has wrong length");
    for (std::size_t i = 1; i < n; ++i) {
      if (timestamps[i] <= timestamps[i - 1])
        throw DataError("timestamps not strictly increasing at " + format_rfc3339(timestamps[i]));
      if (step_seconds > 0 && timestamps[i] - timestamps[i - 1] != step_seconds)
        throw DataError("non-constant time step at " + format_rfc3339(timestamps[i]));
    }
  }
};

// Role map for load_csv. Columns not mentioned become real covariates unless
// listed in `categorical`; columns in `drop` are ignored entirely.
struct CsvSchema {
  std::string timestamp_column;
  std::string target_column;
  std::set<std::string> categorical;
  std::set<std::string> drop;
  char delimiter = ',';
};

struct LagSpec {
  std::string source;  // "target" or a covariate name
  int delay_steps = 0;
};

struct RollingMeanSpec {
  std::string source;
  int window_steps = 1;
  int delay_steps = 0;
};

struct CalendarFlags {
  bool day_of_week = false;    // categorical 0..6
  bool time_of_day = false;    // continuous fraction + categorical slot
  bool time_of_year = false;
  bool trend = false;          // years since first row
  bool holidays = false;
};

struct HolidayCalendar {
  std::string name;                  // column name to emit
  std::set<std::int64_t> dates;      // epoch days
};

struct FeatureSpec {
  std::vector<LagSpec> lags;
  std::vector<RollingMeanSpec> rolling_means;
  CalendarFlags calendar;
  int availability_delay = 0;  // steps
  std::set<std::string> ablations;
  std::vector<HolidayCalendar> holiday_calendars;

  void validate() const {
    for (const auto& l : lags)
      if (l.delay_steps < availability_delay)
        throw ConfigError("lag on '" + l.source + "' has delay " + std::to_string(l.delay_steps) +
                          " below the availability delay " + std::to_string(availability_delay));
    for (const auto& m : rolling_means) {
      if (m.window_steps < 1) throw ConfigError("rolling mean window must be >= 1");
      if (m.delay_steps < availability_delay)
        throw ConfigError("rolling mean on '" + m.source + "' has delay below the availability delay");
    }
  }
};

struct SplitWindow {
  std::string label;
  std::int64_t start = 0;  // inclusive
  std::int64_t end = 0;    // exclusive
};

struct SplitSpec {
  std::int64_t train_end = 0;  // inclusive upper bound for train timestamps
  std::vector<SplitWindow> test_windows;

  void validate() const {
    for (const auto& w : test_windows) {
      if (w.start <= train_end)
        throw ConfigError("test window '" + w.label + "' starts before train_end");
      if (w.end <= w.start) throw ConfigError("test window '" + w.label + "' is empty");
    }
    for (std::size_t i = 0; i < test_windows.size(); ++i)
      for (std::size_t j = i + 1; j < test_windows.size(); ++j) {
        const auto& a = test_windows[i];
        const auto& b = test_windows[j];
        if (a.start < b.end && b.start < a.end)
          throw ConfigError("test windows '" + a.label + "' and '" + b.label + "' overlap");
      }
  }
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline bool parse_cell(const std::string& cell, double& out) {
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  char* end = nullptr;
  out = std::strtod(cell.c_str(), &end);
  return end == cell.c_str() + cell.size();
}

// Linear interpolation of interior NaN gaps of length <= max_gap. Returns the
// set of rows left unfilled.
inline std::vector<std::size_t> interpolate_gaps(std::vector<double>& v, int max_gap) {
  std::vector<std::size_t> unfilled;
  const std::size_t n = v.size();
  std::size_t i = 0;
  while (i < n) {
    if (!std::isnan(v[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && std::isnan(v[j])) ++j;
    const std::size_t gap = j - i;
    const bool interior = i > 0 && j < n;
    if (interior && gap <= static_cast<std::size_t>(max_gap)) {
      double lo = v[i - 1], hi = v[j];
      for (std::size_t k = i; k < j; ++k) {
        double w = static_cast<double>(k - i + 1) / static_cast<double>(gap + 1);
        v[k] = lo + w * (hi - lo);
      }
    } else {
      for (std::size_t k = i; k < j; ++k) unfilled.push_back(k);
    }
    i = j;
  }
  return unfilled;
}

}  // namespace detail

// Reads one series from a delimited text file. Rows are sorted by timestamp;
// rows with a missing target are dropped; missing covariates are linearly
// interpolated across gaps of at most three steps, longer gaps mark the rows
// unusable.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema,
                        const std::string& series_id = "") {
  std::string content = read_file(path);
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  std::vector<std::string> header = detail::split_line(line, schema.delimiter);

  int ts_col = -1, target_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.timestamp_column) ts_col = static_cast<int>(c);
    if (header[c] == schema.target_column) target_col = static_cast<int>(c);
  }
  if (ts_col < 0) throw DataError(path + ": timestamp column '" + schema.timestamp_column + "' not found");
  if (target_col < 0) throw DataError(path + ": target column '" + schema.target_column + "' not found");

  struct Row {
    std::int64_t ts;
    double target;
    std::vector<double> covs;
  };
  std::vector<int> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (static_cast<int>(c) == ts_col || static_cast<int>(c) == target_col) continue;
    if (schema.drop.count(header[c])) continue;
    cov_cols.push_back(static_cast<int>(c));
  }

  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_line(line, schema.delimiter);
    if (cells.size() != header.size())
      throw DataError(path + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    Row r;
    try {
      r.ts = parse_timestamp(cells[static_cast<std::size_t>(ts_col)]);
    } catch (const DataError& e) {
      throw DataError(path + ": row " + std::to_string(line_no) + ": " + e.what());
    }
    if (!detail::parse_cell(cells[static_cast<std::size_t>(target_col)], r.target))
      throw DataError(path + ": row " + std::to_string(line_no) + ": bad target cell");
    for (int c : cov_cols) {
      double v;
      if (!detail::parse_cell(cells[static_cast<std::size_t>(c)], v))
        throw DataError(path + ": row " + std::to_string(line_no) + ": bad cell in column '" +
                        header[static_cast<std::size_t>(c)] + "'");
      r.covs.push_back(v);
    }
    if (std::isnan(r.target)) continue;  // cleaning pass: drop rows without a target
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path + ": no usable rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].ts == rows[i - 1].ts)
      throw DataError(path + ": duplicate timestamp " + format_rfc3339(rows[i].ts));

  Dataset d;
  d.series_id = series_id.empty() ? path : series_id;
  d.timestamps.reserve(rows.size());
  d.target.reserve(rows.size());
  for (const auto& r : rows) {
    d.timestamps.push_back(r.ts);
    d.target.push_back(r.target);
  }
  d.usable.assign(rows.size(), 1);
  if (rows.size() >= 2) d.step_seconds = rows[1].ts - rows[0].ts;

  for (std::size_t k = 0; k < cov_cols.size(); ++k) {
    const std::string& name = header[static_cast<std::size_t>(cov_cols[k])];
    Column& col = d.add_column(name, schema.categorical.count(name) > 0);
    for (std::size_t i = 0; i < rows.size(); ++i) col.values[i] = rows[i].covs[k];
    auto unfilled = detail::interpolate_gaps(col.values, 3);
    for (std::size_t i : unfilled) {
      d.usable[i] = 0;
      col.values[i] = 0.0;  // value never read: row excluded from fitting
    }
  }
  d.check_invariants();
  return d;
}

// One date per line, `YYYY-MM-DD`. Blank lines and `#` comments ignored.
inline std::set<std::int64_t> load_holiday_csv(const std::string& path) {
  std::string content = read_file(path);
  std::istringstream in(content);
  std::set<std::int64_t> days;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    days.insert(epoch_day(parse_timestamp(line)));
  }
  return days;
}

inline std::string dataset_to_csv(const Dataset& d, const std::string& ts_col = "timestamp",
                                  const std::string& target_col = "y") {
  std::ostringstream out;
  out << ts_col << "," << target_col;
  for (const auto& n : d.column_names) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << format_rfc3339(d.timestamps[i]) << "," << format_double(d.target[i]);
    for (const auto& c : d.columns) {
      out << ",";
      if (!std::isnan(c.values[i])) out << format_double(c.values[i]);
    }
    out << "\n";
  }
  return out.str();
}

// Derives lag, rolling-mean and calendar columns. Leading rows without full
// lag history become unusable. A lag column at row t reads the source at row
// t - delay, so no feature ever uses data from after (t - availability delay).
inline Dataset build_features(const Dataset& d, const FeatureSpec& spec) {
  spec.validate();
  Dataset out = d;
  const std::size_t n = d.size();

  auto source_values = [&](const std::string& src) -> const std::vector<double>& {
    if (src == "target") return d.target;
    return d.column(src).values;
  };

  for (const auto& lag : spec.lags) {
    if (lag.delay_steps >= static_cast<int>(n))
      throw DataError("lag " + std::to_string(lag.delay_steps) + " exceeds series length");
    const auto& src = source_values(lag.source);
    std::string name = lag.source + "_lag" + std::to_string(lag.delay_steps);
    Column& col = out.add_column(name);
    for (std::size_t t = 0; t < n; ++t) {
      if (t < static_cast<std::size_t>(lag.delay_steps)) {
        col.values[t] = 0.0;
        out.usable[t] = 0;
      } else {
        col.values[t] = src[t - static_cast<std::size_t>(lag.delay_steps)];
      }
    }
  }

  for (const auto& rm : spec.rolling_means) {
    const int span = rm.delay_steps + rm.window_steps - 1;
    if (span >= static_cast<int>(n))
      throw DataError("rolling mean window exceeds series length");
    const auto& src = source_values(rm.source);
    std::string name = rm.source + "_ma" + std::to_string(rm.window_steps) + "d" +
                       std::to_string(rm.delay_steps);
    Column& col = out.add_column(name);
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t < static_cast<std::size_t>(span)) {
        col.values[t] = 0.0;
        out.usable[t] = 0;
        continue;
      }
      // window of `window_steps` values ending at t - delay
      acc = 0.0;
      for (int k = 0; k < rm.window_steps; ++k)
        acc += src[t - static_cast<std::size_t>(rm.delay_steps + k)];
      col.values[t] = acc / rm.window_steps;
    }
  }

  if (spec.calendar.day_of_week) {
    Column& col = out.add_column("dow", /*categorical=*/true);
    for (std::size_t t = 0; t < n; ++t) col.values[t] = day_of_week(d.timestamps[t]);
  }
  if (spec.calendar.time_of_day) {
    Column& frac = out.add_column("tod");
    for (std::size_t t = 0; t < n; ++t) frac.values[t] = time_of_day(d.timestamps[t]);
    if (d.step_seconds > 0 && d.step_seconds < kSecondsPerDay) {
      Column& slot = out.add_column("tod_slot", /*categorical=*/true);
      for (std::size_t t = 0; t < n; ++t)
        slot.values[t] = static_cast<double>(seconds_of_day(d.timestamps[t]) / d.step_seconds);
    }
  }
  if (spec.calendar.time_of_year) {
    Column& col = out.add_column("toy");
    for (std::size_t t = 0; t < n; ++t) col.values[t] = time_of_year(d.timestamps[t]);
  }
  if (spec.calendar.trend) {
    Column& col = out.add_column("trend");
    for (std::size_t t = 0; t < n; ++t)
      col.values[t] = static_cast<double>(d.timestamps[t] - d.timestamps[0]) / (365.25 * kSecondsPerDay);
  }
  if (spec.calendar.holidays) {
    for (const auto& cal : spec.holiday_calendars) {
      Column& col = out.add_column(cal.name, /*categorical=*/true);
      for (std::size_t t = 0; t < n; ++t)
        col.values[t] = cal.dates.count(epoch_day(d.timestamps[t])) ? 1.0 : 0.0;
    }
  }

  for (const auto& name : spec.ablations) out.drop_column(name);
  out.check_invariants();
  return out;
}

struct ScheduleSegment {
  std::size_t start = 0;            // first row the segment applies to
  std::vector<double> theta;        // length n_effects + 1, last entry = intercept weight
};

struct SyntheticConfig {
  std::size_t length = 0;
  int n_effects = 1;
  double noise_sigma = 0.0;
  std::vector<ScheduleSegment> schedule;  // sorted by start; first must start at 0
  std::int64_t start_ts = days_from_civil(2015, 1, 1) * kSecondsPerDay;
  std::int64_t step_seconds = kSecondsPerDay;
  bool spline_effects = true;  // false: effects are the identity map
  int effect_knots = 8;

  void validate() const {
    if (length == 0) throw ConfigError("synthetic config: length must be positive");
    if (noise_sigma < 0.0) throw ConfigError("synthetic config: noise sigma must be >= 0");
    if (n_effects < 1) throw ConfigError("synthetic config: n_effects must be >= 1");
    if (schedule.empty()) throw ConfigError("synthetic config: schedule must not be empty");
    if (schedule.front().start != 0) throw ConfigError("synthetic config: schedule must start at 0");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (schedule[i].theta.size() != static_cast<std::size_t>(n_effects) + 1)
        throw ConfigError("synthetic config: schedule theta has wrong length");
      if (i > 0 && schedule[i].start <= schedule[i - 1].start)
        throw ConfigError("synthetic config: schedule starts must increase");
    }
  }
};

struct SyntheticTruth {
  std::vector<SplineBasis> effect_bases;         // empty when spline_effects = false
  std::vector<Eigen::VectorXd> effect_coefs;

  double effect_value(int j, double x) const {
    if (effect_bases.empty()) return x;
    return effect_bases[static_cast<std::size_t>(j)].value(effect_coefs[static_cast<std::size_t>(j)], x);
  }
};

struct SyntheticResult {
  Dataset data;
  SyntheticTruth truth;
};

// y_t = theta*_t . (g_1(x_1), ..., g_m(x_m), 1) + eps_t. The shapes g_j are
// sampled once per run from a spline family so an additive spline fit is
// well-specified on this data. Deterministic given the seed.
inline SyntheticResult synthesize(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);

  SyntheticResult res;
  Dataset& d = res.data;
  d.series_id = "synthetic";
  d.step_seconds = cfg.step_seconds;
  d.timestamps.resize(cfg.length);
  for (std::size_t t = 0; t < cfg.length; ++t)
    d.timestamps[t] = cfg.start_ts + static_cast<std::int64_t>(t) * cfg.step_seconds;
  d.target.resize(cfg.length);
  d.usable.assign(cfg.length, 1);

  if (cfg.spline_effects) {
    // Fixed uniform knots on [0,1]; random knot values give smooth shapes.
    std::vector<double> grid(static_cast<std::size_t>(cfg.effect_knots));
    for (int k = 0; k < cfg.effect_knots; ++k)
      grid[static_cast<std::size_t>(k)] = static_cast<double>(k) / (cfg.effect_knots - 1);
    for (int j = 0; j < cfg.n_effects; ++j) {
      res.truth.effect_bases.push_back(SplineBasis::cubic_from_knots(grid));
      Eigen::VectorXd coef(cfg.effect_knots);
      for (int k = 0; k < cfg.effect_knots; ++k) coef[k] = rng.gaussian();
      res.truth.effect_coefs.push_back(coef);
    }
  }

  std::vector<Column*> cols;
  for (int j = 0; j < cfg.n_effects; ++j)
    cols.push_back(&d.add_column("x" + std::to_string(j + 1)));

  std::size_t seg = 0;
  for (std::size_t t = 0; t < cfg.length; ++t) {
    while (seg + 1 < cfg.schedule.size() && cfg.schedule[seg + 1].start <= t) ++seg;
    const auto& theta = cfg.schedule[seg].theta;
    double y = theta.back();
    for (int j = 0; j < cfg.n_effects; ++j) {
      double x = rng.uniform();
      cols[static_cast<std::size_t>(j)]->values[t] = x;
      y += theta[static_cast<std::size_t>(j)] * res.truth.effect_value(j, x);
    }
    if (cfg.noise_sigma > 0.0) y += cfg.noise_sigma * rng.gaussian();
    d.target[t] = y;
  }
  d.check_invariants();
  return res;
}

namespace detail {

inline Dataset slice(const Dataset& d, std::size_t lo, std::size_t hi, const std::string& label) {
  Dataset out;
  out.series_id = d.series_id;
  out.step_seconds = d.step_seconds;
  out.timestamps.assign(d.timestamps.begin() + static_cast<std::ptrdiff_t>(lo),
                        d.timestamps.begin() + static_cast<std::ptrdiff_t>(hi));
  out.target.assign(d.target.begin() + static_cast<std::ptrdiff_t>(lo),
                    d.target.begin() + static_cast<std::ptrdiff_t>(hi));
  out.usable.assign(d.usable.begin() + static_cast<std::ptrdiff_t>(lo),
                    d.usable.begin() + static_cast<std::ptrdiff_t>(hi));
  for (std::size_t c = 0; c < d.columns.size(); ++c) {
    Column& col = out.add_column(d.column_names[c], d.columns[c].categorical);
    col.values.assign(d.columns[c].values.begin() + static_cast<std::ptrdiff_t>(lo),
                      d.columns[c].values.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  (void)label;
  return out;
}

}  // namespace detail

struct SplitResult {
  Dataset train;
  std::vector<std::pair<std::string, Dataset>> test_windows;
};

// Train keeps every row dated <= train_end; each labeled window keeps rows in
// [start, end). Rows between windows are not part of any output.
inline SplitResult split(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = d.size();
  std::size_t train_hi = 0;
  while (train_hi < n && d.timestamps[train_hi] <= spec.train_end) ++train_hi;
  if (train_hi == 0) throw DataError("empty training split: train_end precedes the first timestamp");

  SplitResult res;
  res.train = detail::slice(d, 0, train_hi, "train");
  for (const auto& w : spec.test_windows) {
    std::size_t lo = 0, hi = 0;
    while (lo < n && d.timestamps[lo] < w.start) ++lo;
    hi = lo;
    while (hi < n && d.timestamps[hi] < w.end) ++hi;
    if (lo == hi) throw DataError("empty test window '" + w.label + "'");
    res.test_windows.emplace_back(w.label, detail::slice(d, lo, hi, w.label));
  }
  if (res.test_windows.empty()) throw DataError("split produced no test windows");
  return res;
}

}  // namespace anl
