#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/dataset.hpp"
#include "anl/gam.hpp"
#include "anl/pipeline.hpp"
#include "anl/quantile.hpp"
#include "anl/timeutil.hpp"

namespace anl {

namespace detail {

inline void expect_keys(const nlohmann::json& j, const std::string& ctx,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config field '" + ctx + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown config field '" + ctx + "." + it.key() + "'");
  }
}

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& ctx,
                                     const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("missing config field '" + ctx + "." + key + "'");
  return *it;
}

inline std::int64_t config_timestamp(const nlohmann::json& j, const std::string& ctx) {
  if (j.is_string()) return parse_timestamp(j.get<std::string>());
  if (j.is_number_integer()) return j.get<std::int64_t>();
  throw ConfigError("config field '" + ctx + "' must be a timestamp");
}

}  // namespace detail

struct JobConfig {
  std::optional<std::string> csv_path;
  CsvSchema schema;
  std::optional<SyntheticConfig> synthetic;
  std::string series_id = "series";
  FeatureSpec features;
  std::vector<FormulaTerm> formula;
  QuantileFeatureSpec z_spec;
  SplitSpec split;
  std::vector<std::string> strategies;
  std::vector<double> levels = default_levels();
  std::vector<double> step_grid = default_step_grid();
  std::optional<double> boa_eta;
  int delay = 0;
  bool normalize = false;
  std::optional<double> fixed_lambda;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  bool allow_incremental_qr = false;

  StrategySpec make_strategy(const std::string& name) const {
    StrategySpec s;
    s.levels = levels;
    s.step_grid = step_grid;
    s.boa_eta = boa_eta;
    s.formula = formula;
    s.z_spec = z_spec;
    s.delay = delay;
    s.normalize = normalize;
    s.fixed_lambda = fixed_lambda;
    parse_strategy(name, s);
    if (s.quantile == QuantileMode::kIncrementalQr && !allow_incremental_qr)
      throw ConfigError("strategy '" + name +
                        "' needs allow_incremental_qr=true (it is slow by design)");
    s.validate();
    return s;
  }
};

namespace detail {

inline CsvSchema parse_csv_schema(const nlohmann::json& j) {
  expect_keys(j, "data.schema", {"timestamp", "target", "categorical", "drop", "delimiter"});
  CsvSchema s;
  s.timestamp_column = require(j, "data.schema", "timestamp").get<std::string>();
  s.target_column = require(j, "data.schema", "target").get<std::string>();
  if (j.contains("categorical"))
    for (const auto& c : j.at("categorical")) s.categorical.insert(c.get<std::string>());
  if (j.contains("drop"))
    for (const auto& c : j.at("drop")) s.drop.insert(c.get<std::string>());
  if (j.contains("delimiter")) {
    const std::string d = j.at("delimiter").get<std::string>();
    if (d.size() != 1) throw ConfigError("config field 'data.schema.delimiter' must be one character");
    s.delimiter = d[0];
  }
  return s;
}

inline SyntheticConfig parse_synthetic(const nlohmann::json& j) {
  expect_keys(j, "data.synthetic",
              {"length", "effects", "noise_sigma", "schedule", "start", "step_seconds",
               "spline_effects", "effect_knots"});
  SyntheticConfig c;
  c.length = require(j, "data.synthetic", "length").get<std::size_t>();
  c.n_effects = require(j, "data.synthetic", "effects").get<int>();
  c.noise_sigma = require(j, "data.synthetic", "noise_sigma").get<double>();
  for (const auto& seg : require(j, "data.synthetic", "schedule")) {
    expect_keys(seg, "data.synthetic.schedule[]", {"start", "theta"});
    ScheduleSegment s;
    s.start = require(seg, "data.synthetic.schedule[]", "start").get<std::size_t>();
    s.theta = require(seg, "data.synthetic.schedule[]", "theta").get<std::vector<double>>();
    c.schedule.push_back(std::move(s));
  }
  if (j.contains("start")) c.start_ts = config_timestamp(j.at("start"), "data.synthetic.start");
  if (j.contains("step_seconds")) c.step_seconds = j.at("step_seconds").get<std::int64_t>();
  if (j.contains("spline_effects")) c.spline_effects = j.at("spline_effects").get<bool>();
  if (j.contains("effect_knots")) c.effect_knots = j.at("effect_knots").get<int>();
  c.validate();
  return c;
}

inline FeatureSpec parse_features(const nlohmann::json& j, const std::filesystem::path& base) {
  expect_keys(j, "features",
              {"lags", "rolling_means", "calendar", "availability_delay", "ablations",
               "holiday_files"});
  FeatureSpec f;
  if (j.contains("lags"))
    for (const auto& l : j.at("lags")) {
      expect_keys(l, "features.lags[]", {"source", "steps"});
      LagSpec s;
      s.source = require(l, "features.lags[]", "source").get<std::string>();
      s.delay_steps = require(l, "features.lags[]", "steps").get<int>();
      f.lags.push_back(std::move(s));
    }
  if (j.contains("rolling_means"))
    for (const auto& m : j.at("rolling_means")) {
      expect_keys(m, "features.rolling_means[]", {"source", "window", "delay"});
      RollingMeanSpec s;
      s.source = require(m, "features.rolling_means[]", "source").get<std::string>();
      s.window_steps = require(m, "features.rolling_means[]", "window").get<int>();
      s.delay_steps = require(m, "features.rolling_means[]", "delay").get<int>();
      f.rolling_means.push_back(std::move(s));
    }
  if (j.contains("calendar")) {
    const auto& c = j.at("calendar");
    expect_keys(c, "features.calendar",
                {"day_of_week", "time_of_day", "time_of_year", "trend"});
    f.calendar.day_of_week = c.value("day_of_week", false);
    f.calendar.time_of_day = c.value("time_of_day", false);
    f.calendar.time_of_year = c.value("time_of_year", false);
    f.calendar.trend = c.value("trend", false);
  }
  if (j.contains("availability_delay")) f.availability_delay = j.at("availability_delay").get<int>();
  if (j.contains("ablations"))
    for (const auto& a : j.at("ablations")) f.ablations.insert(a.get<std::string>());
  if (j.contains("holiday_files")) {
    for (auto it = j.at("holiday_files").begin(); it != j.at("holiday_files").end(); ++it) {
      std::filesystem::path p = it.value().get<std::string>();
      if (p.is_relative()) p = base / p;
      f.holiday_calendars.push_back(HolidayCalendar{it.key(), load_holiday_csv(p.string())});
    }
    f.calendar.holidays = true;
  }
  f.validate();
  return f;
}

inline std::vector<FormulaTerm> parse_formula(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw ConfigError("config field 'formula' must be a non-empty list");
  std::vector<FormulaTerm> terms;
  for (const auto& t : j) {
    expect_keys(t, "formula[]", {"covariate", "basis", "knots", "range"});
    FormulaTerm term;
    term.covariate = require(t, "formula[]", "covariate").get<std::string>();
    if (t.contains("basis")) term.kind = basis_kind_from_name(t.at("basis").get<std::string>());
    if (t.contains("knots")) term.n_knots = t.at("knots").get<int>();
    if (t.contains("range")) {
      const auto r = t.at("range").get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("config field 'formula[].range' must be [lo, hi]");
      term.range = std::make_pair(r[0], r[1]);
    }
    terms.push_back(std::move(term));
  }
  return terms;
}

inline QuantileFeatureSpec parse_quantile_features(const nlohmann::json& j) {
  expect_keys(j, "quantile_features", {"mean", "mean_squared", "effects", "categorical"});
  QuantileFeatureSpec s;
  s.use_mean = j.value("mean", true);
  s.use_mean_squared = j.value("mean_squared", true);
  if (j.contains("effects")) s.effects = j.at("effects").get<std::vector<std::string>>();
  if (j.contains("categorical")) s.categorical = j.at("categorical").get<std::vector<std::string>>();
  return s;
}

inline SplitSpec parse_split(const nlohmann::json& j) {
  expect_keys(j, "split", {"train_end", "windows"});
  SplitSpec s;
  s.train_end = config_timestamp(require(j, "split", "train_end"), "split.train_end");
  for (const auto& w : require(j, "split", "windows")) {
    expect_keys(w, "split.windows[]", {"label", "start", "end"});
    SplitWindow win;
    win.label = require(w, "split.windows[]", "label").get<std::string>();
    win.start = config_timestamp(require(w, "split.windows[]", "start"), "split.windows[].start");
    win.end = config_timestamp(require(w, "split.windows[]", "end"), "split.windows[].end");
    s.test_windows.push_back(std::move(win));
  }
  s.validate();
  return s;
}

}  // namespace detail

inline JobConfig parse_config(const nlohmann::json& root, const std::filesystem::path& base_dir) {
  detail::expect_keys(root, "config",
                      {"data", "features", "formula", "quantile_features", "split", "strategies",
                       "levels", "step_grid", "boa_eta", "delay", "normalize", "fixed_lambda",
                       "seed", "output_dir", "allow_incremental_qr"});
  JobConfig cfg;

  const auto& data = detail::require(root, "config", "data");
  detail::expect_keys(data, "data", {"csv", "schema", "synthetic", "series"});
  if (data.contains("csv") == data.contains("synthetic"))
    throw ConfigError("config field 'data' must have exactly one of 'csv' or 'synthetic'");
  if (data.contains("csv")) {
    std::filesystem::path p = data.at("csv").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    cfg.csv_path = p.string();
    cfg.schema = detail::parse_csv_schema(detail::require(data, "data", "schema"));
  } else {
    cfg.synthetic = detail::parse_synthetic(data.at("synthetic"));
  }
  if (data.contains("series")) cfg.series_id = data.at("series").get<std::string>();

  if (root.contains("features")) cfg.features = detail::parse_features(root.at("features"), base_dir);
  if (root.contains("formula")) cfg.formula = detail::parse_formula(root.at("formula"));
  if (root.contains("quantile_features"))
    cfg.z_spec = detail::parse_quantile_features(root.at("quantile_features"));
  if (root.contains("split")) cfg.split = detail::parse_split(root.at("split"));
  if (root.contains("strategies"))
    cfg.strategies = root.at("strategies").get<std::vector<std::string>>();
  if (root.contains("levels")) {
    cfg.levels = root.at("levels").get<std::vector<double>>();
    if (cfg.levels.empty()) throw ConfigError("config field 'levels' must be non-empty");
  }
  if (root.contains("step_grid")) {
    cfg.step_grid = root.at("step_grid").get<std::vector<double>>();
    if (cfg.step_grid.empty()) throw ConfigError("config field 'step_grid' must be non-empty");
  }
  if (root.contains("boa_eta")) cfg.boa_eta = root.at("boa_eta").get<double>();
  if (root.contains("delay")) cfg.delay = root.at("delay").get<int>();
  if (root.contains("normalize")) cfg.normalize = root.at("normalize").get<bool>();
  if (root.contains("fixed_lambda")) cfg.fixed_lambda = root.at("fixed_lambda").get<double>();
  if (root.contains("seed")) cfg.seed = root.at("seed").get<std::uint64_t>();
  if (root.contains("output_dir")) {
    std::filesystem::path p = root.at("output_dir").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    cfg.output_dir = p.string();
  }
  if (root.contains("allow_incremental_qr"))
    cfg.allow_incremental_qr = root.at("allow_incremental_qr").get<bool>();
  return cfg;
}

inline JobConfig load_config(const std::string& path) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config '" + path + "': " + e.what());
  }
  return parse_config(root, std::filesystem::path(path).parent_path());
}

}  // namespace anl
