#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/dataset.hpp"
#include "anl/quantile.hpp"
#include "anl/timeutil.hpp"

namespace anl {

inline double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size()) throw DataError("rmse needs equal nonzero lengths");
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += (y[t] - yhat[t]) * (y[t] - yhat[t]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size()) throw DataError("mae needs equal nonzero lengths");
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += std::abs(y[t] - yhat[t]);
  return s / static_cast<double>(y.size());
}

namespace detail {

inline double window_mean(const std::vector<double>& y) {
  double m = 0.0;
  for (double v : y) m += v;
  return m / static_cast<double>(y.size());
}

}  // namespace detail

// Normalizers are relative to the per-series mean predictor on the same
// window, so that predictor scores exactly 1.
inline double nrmse(const std::vector<std::vector<double>>& y,
                    const std::vector<std::vector<double>>& yhat) {
  if (y.empty() || y.size() != yhat.size()) throw DataError("per-series inputs disagree");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i].empty() || y[i].size() != yhat[i].size()) throw DataError("series lengths disagree");
    const double ybar = detail::window_mean(y[i]);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < y[i].size(); ++t) {
      num += (y[i][t] - yhat[i][t]) * (y[i][t] - yhat[i][t]);
      den += (y[i][t] - ybar) * (y[i][t] - ybar);
    }
    if (den <= 0.0) throw DataError("constant series: degenerate normalizer");
    acc += num / den;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

inline double nmae(const std::vector<std::vector<double>>& y,
                   const std::vector<std::vector<double>>& yhat) {
  if (y.empty() || y.size() != yhat.size()) throw DataError("per-series inputs disagree");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i].empty() || y[i].size() != yhat[i].size()) throw DataError("series lengths disagree");
    const double ybar = detail::window_mean(y[i]);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < y[i].size(); ++t) {
      num += std::abs(y[i][t] - yhat[i][t]);
      den += std::abs(y[i][t] - ybar);
    }
    if (den <= 0.0) throw DataError("constant series: degenerate normalizer");
    acc += num / den;
  }
  return acc / static_cast<double>(y.size());
}

// Weighted pinball sum approximating the CRPS: weight of level i is
// q_{i+1} - q_{i-1} with the convention q_0 = 0, q_{l+1} = 1.
inline double rps(const std::vector<double>& levels, const std::vector<double>& values, double y) {
  if (levels.empty() || levels.size() != values.size())
    throw ConfigError("levels and values disagree in length");
  const std::size_t l = levels.size();
  double s = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
    if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("quantile levels must be strictly increasing");
    const double lo = i == 0 ? 0.0 : levels[i - 1];
    const double hi = i + 1 == l ? 1.0 : levels[i + 1];
    s += pinball(y, values[i], levels[i]) * (hi - lo);
  }
  return s;
}

struct ForecastRecord {
  std::int64_t timestamp = 0;
  std::string series_id;
  double mean = 0.0;
  std::vector<double> quantiles;  // aligned with the configured level set
};

struct SeriesForecasts {
  std::string series_id;
  std::vector<double> y;
  std::vector<ForecastRecord> records;
};

inline double nrps(const std::vector<double>& levels, const std::vector<SeriesForecasts>& all) {
  if (all.empty()) throw DataError("no series to evaluate");
  double acc = 0.0;
  for (const auto& s : all) {
    if (s.y.empty() || s.y.size() != s.records.size()) throw DataError("series lengths disagree");
    const double ybar = detail::window_mean(s.y);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < s.y.size(); ++t) {
      num += rps(levels, s.records[t].quantiles, s.y[t]);
      den += std::abs(s.y[t] - ybar);
    }
    if (den <= 0.0) throw DataError("constant series: degenerate normalizer");
    acc += num / den;
  }
  return acc / static_cast<double>(all.size());
}

struct ReliabilityRow {
  double level = 0.0;
  std::size_t n = 0;
  double frequency = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

// Observed frequency of y <= quantile forecast, with the binomial 95% band
// around the nominal level. Optionally restricted to one time of day.
inline ReliabilityRow reliability(const std::vector<ForecastRecord>& records,
                                  const std::vector<double>& y, const std::vector<double>& levels,
                                  double level, std::optional<std::int64_t> second_of_day = std::nullopt) {
  if (records.size() != y.size()) throw DataError("records and observations disagree in length");
  std::size_t idx = levels.size();
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] == level) idx = i;
  if (idx == levels.size()) throw ConfigError("level not in the configured set");

  std::size_t n = 0, hits = 0;
  for (std::size_t t = 0; t < records.size(); ++t) {
    if (second_of_day && seconds_of_day(records[t].timestamp) != *second_of_day) continue;
    ++n;
    if (y[t] <= records[t].quantiles[idx]) ++hits;
  }
  if (n < 30) throw DataError("too few observations for reliability: " + std::to_string(n));
  ReliabilityRow row;
  row.level = level;
  row.n = n;
  row.frequency = static_cast<double>(hits) / static_cast<double>(n);
  const double half = 1.96 * std::sqrt(level * (1.0 - level) / static_cast<double>(n));
  row.band_lo = level - half;
  row.band_hi = level + half;
  return row;
}

// Lag-k baseline: forecast the value observed `lag` steps earlier. Entries
// without history are NaN; callers restrict to rows where it is defined.
inline std::vector<double> persistence(const Dataset& d, int lag, int availability_delay = 0) {
  if (lag < 1) throw ConfigError("persistence lag must be >= 1");
  if (lag < availability_delay)
    throw ConfigError("persistence lag " + std::to_string(lag) +
                      " below the availability delay " + std::to_string(availability_delay));
  std::vector<double> f(d.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = static_cast<std::size_t>(lag); t < d.size(); ++t)
    f[t] = d.target[t - static_cast<std::size_t>(lag)];
  return f;
}

struct SeriesEval {
  std::string series_id;
  std::size_t n = 0;
  double ybar = 0.0;
  double sum_sq_err = 0.0;
  double sum_abs_err = 0.0;
  double sum_rps = 0.0;
  double sum_sq_dev = 0.0;
  double sum_abs_dev = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double mean_rps = 0.0;
};

struct EvaluationReport {
  std::vector<double> levels;
  std::vector<SeriesEval> per_series;
  double nrmse = 0.0;
  double nmae = 0.0;
  double nrps = 0.0;

  // The aggregates are definitionally functions of the per-series sums; this
  // recomputes them from the stored components.
  void recompute_aggregates() {
    if (per_series.empty()) throw DataError("no series to evaluate");
    double a_rmse = 0.0, a_mae = 0.0, a_rps = 0.0;
    for (const auto& s : per_series) {
      if (s.sum_sq_dev <= 0.0 || s.sum_abs_dev <= 0.0)
        throw DataError("constant series: degenerate normalizer");
      a_rmse += s.sum_sq_err / s.sum_sq_dev;
      a_mae += s.sum_abs_err / s.sum_abs_dev;
      a_rps += s.sum_rps / s.sum_abs_dev;
    }
    const double N = static_cast<double>(per_series.size());
    nrmse = std::sqrt(a_rmse / N);
    nmae = a_mae / N;
    nrps = a_rps / N;
  }
};

inline EvaluationReport evaluate(const std::vector<SeriesForecasts>& all,
                                 const std::vector<double>& levels) {
  EvaluationReport rep;
  rep.levels = levels;
  for (const auto& s : all) {
    if (s.y.empty() || s.y.size() != s.records.size()) throw DataError("series lengths disagree");
    SeriesEval e;
    e.series_id = s.series_id;
    e.n = s.y.size();
    e.ybar = detail::window_mean(s.y);
    for (std::size_t t = 0; t < s.y.size(); ++t) {
      const double err = s.y[t] - s.records[t].mean;
      e.sum_sq_err += err * err;
      e.sum_abs_err += std::abs(err);
      e.sum_rps += rps(levels, s.records[t].quantiles, s.y[t]);
      e.sum_sq_dev += (s.y[t] - e.ybar) * (s.y[t] - e.ybar);
      e.sum_abs_dev += std::abs(s.y[t] - e.ybar);
    }
    e.rmse = std::sqrt(e.sum_sq_err / static_cast<double>(e.n));
    e.mae = e.sum_abs_err / static_cast<double>(e.n);
    e.mean_rps = e.sum_rps / static_cast<double>(e.n);
    rep.per_series.push_back(std::move(e));
  }
  rep.recompute_aggregates();
  return rep;
}

inline void to_json(nlohmann::json& j, const SeriesEval& e) {
  j = nlohmann::json{{"series", e.series_id}, {"n", e.n},
                     {"ybar", e.ybar},        {"sum_sq_err", e.sum_sq_err},
                     {"sum_abs_err", e.sum_abs_err}, {"sum_rps", e.sum_rps},
                     {"sum_sq_dev", e.sum_sq_dev},   {"sum_abs_dev", e.sum_abs_dev},
                     {"rmse", e.rmse},        {"mae", e.mae},
                     {"mean_rps", e.mean_rps}};
}

inline void from_json(const nlohmann::json& j, SeriesEval& e) {
  e.series_id = j.at("series").get<std::string>();
  e.n = j.at("n").get<std::size_t>();
  e.ybar = j.at("ybar").get<double>();
  e.sum_sq_err = j.at("sum_sq_err").get<double>();
  e.sum_abs_err = j.at("sum_abs_err").get<double>();
  e.sum_rps = j.at("sum_rps").get<double>();
  e.sum_sq_dev = j.at("sum_sq_dev").get<double>();
  e.sum_abs_dev = j.at("sum_abs_dev").get<double>();
  e.rmse = j.at("rmse").get<double>();
  e.mae = j.at("mae").get<double>();
  e.mean_rps = j.at("mean_rps").get<double>();
}

inline void to_json(nlohmann::json& j, const EvaluationReport& r) {
  j = nlohmann::json{{"levels", r.levels}, {"per_series", r.per_series},
                     {"nrmse", r.nrmse},   {"nmae", r.nmae},
                     {"nrps", r.nrps}};
}

inline void from_json(const nlohmann::json& j, EvaluationReport& r) {
  r.levels = j.at("levels").get<std::vector<double>>();
  r.per_series = j.at("per_series").get<std::vector<SeriesEval>>();
  r.nrmse = j.at("nrmse").get<double>();
  r.nmae = j.at("nmae").get<double>();
  r.nrps = j.at("nrps").get<double>();
}

// Trace CSV: timestamp, series, mean, one column per level.
inline std::string trace_to_csv(const std::vector<ForecastRecord>& records,
                                const std::vector<double>& levels) {
  std::ostringstream out;
  out << "timestamp,series,mean";
  for (double q : levels) out << ",q" << format_double(q);
  out << "\n";
  for (const auto& r : records) {
    out << format_rfc3339(r.timestamp) << "," << r.series_id << "," << format_double(r.mean);
    for (double v : r.quantiles) out << "," << format_double(v);
    out << "\n";
  }
  return out.str();
}

struct ParsedTrace {
  std::vector<double> levels;
  std::vector<ForecastRecord> records;
};

inline ParsedTrace trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty trace file");
  while (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_line(line, ',');
  if (header.size() < 4 || header[0] != "timestamp" || header[1] != "series" ||
      header[2] != "mean")
    throw DataError("unrecognized trace header");
  ParsedTrace out;
  for (std::size_t k = 3; k < header.size(); ++k) {
    if (header[k].empty() || header[k][0] != 'q')
      throw DataError("unrecognized trace column '" + header[k] + "'");
    out.levels.push_back(std::strtod(header[k].c_str() + 1, nullptr));
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != header.size())
      throw DataError("trace row " + std::to_string(line_no) + " is malformed");
    ForecastRecord r;
    r.timestamp = parse_timestamp(cells[0]);
    r.series_id = cells[1];
    r.mean = std::strtod(cells[2].c_str(), nullptr);
    for (std::size_t k = 3; k < cells.size(); ++k)
      r.quantiles.push_back(std::strtod(cells[k].c_str(), nullptr));
    out.records.push_back(std::move(r));
  }
  return out;
}

inline std::string reliability_to_csv(const std::vector<ReliabilityRow>& rows) {
  std::ostringstream out;
  out << "level,n,frequency,band_lo,band_hi\n";
  for (const auto& r : rows)
    out << format_double(r.level) << "," << r.n << "," << format_double(r.frequency) << ","
        << format_double(r.band_lo) << "," << format_double(r.band_hi) << "\n";
  return out.str();
}

}  // namespace anl
