#include "anl/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "anl/common.hpp"
#include "anl/timeutil.hpp"
#include "testutil.hpp"

using namespace anl;
using anltest::TempDir;

namespace {

CsvSchema basic_schema() {
  CsvSchema s;
  s.timestamp_column = "ts";
  s.target_column = "load";
  return s;
}

}  // namespace

TEST(LoadCsv, IngestsWellFormedRows) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load,temp\n"
                                          "2020-01-01,1.5,10\n"
                                          "2020-01-02,2.5,11\n"
                                          "2020-01-03,3.5,12\n");
  const Dataset d = load_csv(path, basic_schema());
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.step_seconds, kSecondsPerDay);
  EXPECT_DOUBLE_EQ(d.target[1], 2.5);
  EXPECT_DOUBLE_EQ(d.column("temp").values[2], 12.0);
}

TEST(LoadCsv, SortsRowsByTimestamp) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load\n"
                                          "2020-01-03,3\n"
                                          "2020-01-01,1\n"
                                          "2020-01-02,2\n");
  const Dataset d = load_csv(path, basic_schema());
  ASSERT_EQ(d.size(), 3u);
  EXPECT_DOUBLE_EQ(d.target[0], 1.0);
  EXPECT_DOUBLE_EQ(d.target[2], 3.0);
}

TEST(LoadCsv, RejectsDuplicateTimestampNamingIt) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load\n"
                                          "2020-01-01,1\n"
                                          "2020-01-02,2\n"
                                          "2020-01-02,3\n");
  try {
    load_csv(path, basic_schema());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2020-01-02T00:00:00Z"), std::string::npos);
  }
}

TEST(LoadCsv, DropsRowsWithoutTarget) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load\n"
                                          "2020-01-01,1\n"
                                          "2020-01-02,2\n"
                                          "2020-01-03,NA\n");
  const Dataset d = load_csv(path, basic_schema());
  EXPECT_EQ(d.size(), 2u);
}

TEST(LoadCsv, InterpolatesShortCovariateGaps) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load,temp\n"
                                          "2020-01-01,1,1\n"
                                          "2020-01-02,1,\n"
                                          "2020-01-03,1,NaN\n"
                                          "2020-01-04,1,4\n");
  const Dataset d = load_csv(path, basic_schema());
  EXPECT_DOUBLE_EQ(d.column("temp").values[1], 2.0);
  EXPECT_DOUBLE_EQ(d.column("temp").values[2], 3.0);
  EXPECT_EQ(d.usable_count(), 4u);
}

TEST(LoadCsv, LongGapsMarkRowsUnusable) {
  TempDir tmp;
  std::string csv = "ts,load,temp\n2020-01-01,1,1\n";
  for (int i = 2; i <= 5; ++i) csv += "2020-01-0" + std::to_string(i) + ",1,\n";
  csv += "2020-01-06,1,6\n";
  const Dataset d = load_csv(anltest::write(tmp.file("a.csv"), csv), basic_schema());
  EXPECT_EQ(d.size(), 6u);
  EXPECT_EQ(d.usable_count(), 2u);
}

TEST(LoadCsv, NamesBadRowsInErrors) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("a.csv"),
                                          "ts,load\n"
                                          "2020-01-01,1\n"
                                          "garbage,2\n");
  try {
    load_csv(path, basic_schema());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(LoadCsv, MissingColumnsRejected) {
  TempDir tmp;
  const std::string path =
      anltest::write(tmp.file("a.csv"), "ts,demand\n2020-01-01,1\n2020-01-02,2\n");
  EXPECT_THROW(load_csv(path, basic_schema()), DataError);
}

TEST(HolidayCsv, ParsesDatesAndComments) {
  TempDir tmp;
  const std::string path = anltest::write(tmp.file("h.csv"),
                                          "# bank holidays\n"
                                          "2020-01-01\n"
                                          "\n"
                                          "2020-12-25\n");
  const auto days = load_holiday_csv(path);
  EXPECT_EQ(days.size(), 2u);
  EXPECT_TRUE(days.count(epoch_day(parse_timestamp("2020-12-25"))));
}

TEST(BuildFeatures, LagShiftsSource) {
  Dataset d = anltest::make_daily(20);
  for (std::size_t i = 0; i < 20; ++i) d.target[i] = static_cast<double>(i);
  FeatureSpec spec;
  spec.lags.push_back({"target", 7});
  const Dataset out = build_features(d, spec);
  ASSERT_TRUE(out.has_column("target_lag7"));
  for (std::size_t t = 7; t < 20; ++t)
    EXPECT_DOUBLE_EQ(out.column("target_lag7").values[t], static_cast<double>(t - 7));
  for (std::size_t t = 0; t < 7; ++t) EXPECT_FALSE(out.usable[t]);
  EXPECT_EQ(out.usable_count(), 13u);
}

TEST(BuildFeatures, RollingMeanUsesDelayedWindow) {
  Dataset d = anltest::make_daily(10);
  for (std::size_t i = 0; i < 10; ++i) d.target[i] = static_cast<double>(i);
  FeatureSpec spec;
  spec.availability_delay = 1;
  spec.rolling_means.push_back({"target", 3, 1});
  const Dataset out = build_features(d, spec);
  const auto& v = out.column("target_ma3d1").values;
  // window {t-1, t-2, t-3}
  EXPECT_DOUBLE_EQ(v[3], (2.0 + 1.0 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(v[9], (8.0 + 7.0 + 6.0) / 3.0);
  EXPECT_FALSE(out.usable[2]);
  EXPECT_TRUE(out.usable[3]);
}

TEST(BuildFeatures, TimeOfYearEndpoints) {
  Dataset d = anltest::make_daily(365, 2019);
  FeatureSpec spec;
  spec.calendar.time_of_year = true;
  const Dataset out = build_features(d, spec);
  const auto& toy = out.column("toy").values;
  EXPECT_DOUBLE_EQ(toy.front(), 0.0);  // Jan 1
  EXPECT_DOUBLE_EQ(toy.back(), 1.0);   // Dec 31
}

TEST(BuildFeatures, SubDailyStepEmitsTimeOfDaySlot) {
  Dataset d;
  d.series_id = "hh";
  d.step_seconds = 1800;
  const std::int64_t start = parse_timestamp("2020-01-01");
  for (int i = 0; i < 96; ++i) {
    d.timestamps.push_back(start + i * 1800);
    d.target.push_back(0.0);
    d.usable.push_back(1);
  }
  FeatureSpec spec;
  spec.calendar.time_of_day = true;
  spec.calendar.day_of_week = true;
  const Dataset out = build_features(d, spec);
  EXPECT_TRUE(out.column("tod_slot").categorical);
  EXPECT_DOUBLE_EQ(out.column("tod_slot").values[3], 3.0);
  EXPECT_DOUBLE_EQ(out.column("tod_slot").values[48], 0.0);  // next midnight
  EXPECT_DOUBLE_EQ(out.column("tod").values[24], 0.5);
  EXPECT_DOUBLE_EQ(out.column("dow").values[0], 2.0);  // 2020-01-01 was a Wednesday
}

TEST(BuildFeatures, HolidayIndicator) {
  Dataset d = anltest::make_daily(5, 2020);
  FeatureSpec spec;
  spec.calendar.holidays = true;
  HolidayCalendar cal;
  cal.name = "holiday";
  cal.dates.insert(epoch_day(parse_timestamp("2020-01-03")));
  spec.holiday_calendars.push_back(cal);
  const Dataset out = build_features(d, spec);
  EXPECT_DOUBLE_EQ(out.column("holiday").values[2], 1.0);
  EXPECT_DOUBLE_EQ(out.column("holiday").values[1], 0.0);
}

TEST(BuildFeatures, AblationsRemoveColumns) {
  Dataset d = anltest::make_daily(10);
  d.add_column("wind").values.assign(10, 1.0);
  d.add_column("solar").values.assign(10, 2.0);
  d.add_column("temp").values.assign(10, 3.0);
  FeatureSpec spec;
  spec.ablations = {"wind", "solar"};
  const Dataset out = build_features(d, spec);
  EXPECT_FALSE(out.has_column("wind"));
  EXPECT_FALSE(out.has_column("solar"));
  EXPECT_TRUE(out.has_column("temp"));
}

TEST(BuildFeatures, UnknownSourceRejected) {
  Dataset d = anltest::make_daily(10);
  FeatureSpec spec;
  spec.lags.push_back({"nope", 2});
  EXPECT_THROW(build_features(d, spec), DataError);
}

TEST(BuildFeatures, LagLongerThanSeriesRejected) {
  Dataset d = anltest::make_daily(5);
  FeatureSpec spec;
  spec.lags.push_back({"target", 5});
  EXPECT_THROW(build_features(d, spec), DataError);
}

TEST(BuildFeatures, LagBelowAvailabilityDelayRejected) {
  FeatureSpec spec;
  spec.availability_delay = 7;
  spec.lags.push_back({"target", 3});
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(BuildFeatures, NoFeatureReadsPastAvailabilityDelay) {
  // Source equals the row index, so each feature value reveals exactly which
  // rows fed it; verify u <= t - delay for every emitted value.
  const int delay = 2;
  Dataset d = anltest::make_daily(30);
  auto& idx = d.add_column("idx").values;
  for (std::size_t i = 0; i < 30; ++i) {
    idx[i] = static_cast<double>(i);
    d.target[i] = static_cast<double>(i);
  }
  FeatureSpec spec;
  spec.availability_delay = delay;
  spec.lags.push_back({"idx", 2});
  spec.lags.push_back({"target", 5});
  spec.rolling_means.push_back({"target", 4, 2});
  const Dataset out = build_features(d, spec);
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (!out.usable[t]) continue;
    EXPECT_LE(out.column("idx_lag2").values[t], static_cast<double>(t) - delay);
    EXPECT_LE(out.column("target_lag5").values[t], static_cast<double>(t) - delay);
    // newest row a mean of rows <= t - delay can reach is t - delay
    EXPECT_LE(out.column("target_ma4d2").values[t], static_cast<double>(t) - delay);
  }
}

TEST(BuildFeatures, DeterministicAcrossCalls) {
  Dataset d = anltest::make_daily(50);
  for (std::size_t i = 0; i < 50; ++i) d.target[i] = std::sin(0.1 * static_cast<double>(i));
  FeatureSpec spec;
  spec.lags.push_back({"target", 3});
  spec.calendar.day_of_week = true;
  spec.calendar.time_of_year = true;
  EXPECT_EQ(dataset_to_csv(build_features(d, spec)), dataset_to_csv(build_features(d, spec)));
}

TEST(Synthesize, NoiselessTargetsReproduceFromTruth) {
  SyntheticConfig cfg;
  cfg.length = 200;
  cfg.n_effects = 2;
  cfg.noise_sigma = 0.0;
  cfg.schedule.push_back({0, {1.5, -0.5, 2.0}});
  const SyntheticResult res = synthesize(cfg, 11);
  for (std::size_t t = 0; t < res.data.size(); ++t) {
    const double x1 = res.data.column("x1").values[t];
    const double x2 = res.data.column("x2").values[t];
    const double y = 1.5 * res.truth.effect_value(0, x1) - 0.5 * res.truth.effect_value(1, x2) + 2.0;
    EXPECT_NEAR(res.data.target[t], y, 1e-12);
  }
}

TEST(Synthesize, DeterministicBySeed) {
  SyntheticConfig cfg;
  cfg.length = 300;
  cfg.n_effects = 1;
  cfg.noise_sigma = 0.4;
  cfg.schedule.push_back({0, {1.0, 0.0}});
  EXPECT_EQ(dataset_to_csv(synthesize(cfg, 5).data), dataset_to_csv(synthesize(cfg, 5).data));
  EXPECT_NE(dataset_to_csv(synthesize(cfg, 5).data), dataset_to_csv(synthesize(cfg, 6).data));
}

TEST(Synthesize, ScheduleJumpShiftsTheMean) {
  SyntheticConfig cfg;
  cfg.length = 2000;
  cfg.n_effects = 1;
  cfg.noise_sigma = 0.3;
  cfg.schedule.push_back({0, {1.0, 0.0}});
  cfg.schedule.push_back({1000, {1.0, 2.0}});  // intercept jumps by 2
  const SyntheticResult res = synthesize(cfg, 17);
  double before = 0.0, after = 0.0;
  for (std::size_t t = 0; t < 1000; ++t) before += res.data.target[t];
  for (std::size_t t = 1000; t < 2000; ++t) after += res.data.target[t];
  before /= 1000.0;
  after /= 1000.0;
  EXPECT_NEAR(after - before, 2.0, 0.3);
}

TEST(Synthesize, RejectsBadConfig) {
  SyntheticConfig cfg;
  cfg.length = 0;
  cfg.schedule.push_back({0, {1.0, 0.0}});
  EXPECT_THROW(synthesize(cfg, 1), ConfigError);
  cfg.length = 10;
  cfg.noise_sigma = -1.0;
  EXPECT_THROW(synthesize(cfg, 1), ConfigError);
  cfg.noise_sigma = 0.0;
  cfg.schedule[0].theta = {1.0};  // wrong length for n_effects=1 (+ intercept)
  EXPECT_THROW(synthesize(cfg, 1), ConfigError);
}

TEST(Split, CountsRowsEitherSide) {
  Dataset d = anltest::make_daily(100);
  SplitSpec spec;
  spec.train_end = d.timestamps[69];
  spec.test_windows.push_back({"rest", d.timestamps[70], d.timestamps[99] + kSecondsPerDay});
  const SplitResult res = split(d, spec);
  EXPECT_EQ(res.train.size(), 70u);
  ASSERT_EQ(res.test_windows.size(), 1u);
  EXPECT_EQ(res.test_windows[0].second.size(), 30u);
}

TEST(Split, LabeledWindowsAreDisjoint) {
  Dataset d = anltest::make_daily(800, 2018);
  SplitSpec spec;
  spec.train_end = parse_timestamp("2018-12-31");
  spec.test_windows.push_back({"2019", parse_timestamp("2019-01-01"), parse_timestamp("2019-07-01")});
  spec.test_windows.push_back({"2019H2", parse_timestamp("2019-07-01"), parse_timestamp("2020-01-01")});
  const SplitResult res = split(d, spec);
  ASSERT_EQ(res.test_windows.size(), 2u);
  EXPECT_EQ(res.test_windows[0].first, "2019");
  EXPECT_LT(res.test_windows[0].second.timestamps.back(),
            res.test_windows[1].second.timestamps.front());
}

TEST(Split, EmptyTrainRejected) {
  Dataset d = anltest::make_daily(10, 2020);
  SplitSpec spec;
  spec.train_end = parse_timestamp("2019-01-01");
  spec.test_windows.push_back({"w", d.timestamps[0], d.timestamps[9] + kSecondsPerDay});
  EXPECT_THROW(split(d, spec), DataError);
  SplitSpec spec2;
  spec2.train_end = d.timestamps[4];
  spec2.test_windows.push_back(
      {"w", d.timestamps[9] + kSecondsPerDay, d.timestamps[9] + 2 * kSecondsPerDay});
  EXPECT_THROW(split(d, spec2), DataError);
}

TEST(Split, OverlappingWindowsRejected) {
  SplitSpec spec;
  spec.train_end = 0;
  spec.test_windows.push_back({"a", 100, 300});
  spec.test_windows.push_back({"b", 200, 400});
  EXPECT_THROW(spec.validate(), ConfigError);
}
