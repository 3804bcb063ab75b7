#include "anl/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "anl/common.hpp"
#include "anl/quantile.hpp"
#include "anl/timeutil.hpp"
#include "testutil.hpp"

using namespace anl;
using anltest::make_daily;

namespace {

SeriesForecasts constant_quantile_series(const std::string& id, const std::vector<double>& y,
                                         const std::vector<double>& levels, double value,
                                         double mean) {
  SeriesForecasts s;
  s.series_id = id;
  s.y = y;
  for (std::size_t t = 0; t < y.size(); ++t) {
    ForecastRecord r;
    r.timestamp = static_cast<std::int64_t>(t) * kSecondsPerDay;
    r.series_id = id;
    r.mean = mean;
    r.quantiles.assign(levels.size(), value);
    s.records.push_back(std::move(r));
  }
  return s;
}

}  // namespace

TEST(PointMetrics, HandExamples) {
  EXPECT_DOUBLE_EQ(rmse({1.0, 2.0}, {1.0, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(mae({1.0, 2.0}, {1.0, 2.0}), 0.0);
  EXPECT_DOUBLE_EQ(rmse({0.0, 0.0}, {1.0, -1.0}), 1.0);
  EXPECT_DOUBLE_EQ(mae({0.0, 0.0}, {1.0, -1.0}), 1.0);
  EXPECT_DOUBLE_EQ(rmse({0.0, 0.0, 0.0}, {3.0, 0.0, 0.0}), std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(mae({0.0, 0.0, 0.0}, {3.0, 0.0, 0.0}), 1.0);
  EXPECT_THROW(rmse({}, {}), DataError);
  EXPECT_THROW(mae({1.0}, {1.0, 2.0}), DataError);
}

TEST(NormalizedMetrics, MeanPredictorScoresExactlyOne) {
  Rng rng(11);
  std::vector<std::vector<double>> y(2), yhat(2);
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 50; ++t) y[static_cast<std::size_t>(i)].push_back(rng.gaussian() + i);
    double m = 0.0;
    for (double v : y[static_cast<std::size_t>(i)]) m += v;
    m /= 50.0;
    yhat[static_cast<std::size_t>(i)].assign(50, m);
  }
  EXPECT_DOUBLE_EQ(nrmse(y, yhat), 1.0);
  EXPECT_DOUBLE_EQ(nmae(y, yhat), 1.0);
  EXPECT_DOUBLE_EQ(nrmse(y, y), 0.0);
  EXPECT_DOUBLE_EQ(nmae(y, y), 0.0);
}

TEST(NormalizedMetrics, OnePerfectOneMeanPredictingSeries) {
  Rng rng(13);
  std::vector<double> a, b;
  for (int t = 0; t < 40; ++t) {
    a.push_back(rng.gaussian());
    b.push_back(rng.gaussian() + 5.0);
  }
  double bbar = 0.0;
  for (double v : b) bbar += v;
  bbar /= 40.0;
  const std::vector<std::vector<double>> y{a, b};
  const std::vector<std::vector<double>> yhat{a, std::vector<double>(40, bbar)};
  EXPECT_NEAR(nrmse(y, yhat), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(nmae(y, yhat), 0.5, 1e-15);
}

TEST(NormalizedMetrics, ConstantSeriesRejected) {
  const std::vector<std::vector<double>> y{{2.0, 2.0, 2.0}};
  const std::vector<std::vector<double>> yhat{{1.0, 2.0, 3.0}};
  EXPECT_THROW(nrmse(y, yhat), DataError);
  EXPECT_THROW(nmae(y, yhat), DataError);
}

TEST(Rps, SingleLevelEqualsPinballTimesWeight) {
  EXPECT_DOUBLE_EQ(rps({0.5}, {0.0}, 1.0), 0.5);
  Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    const double q = 0.05 + 0.9 * rng.uniform();
    const double v = rng.gaussian();
    const double y = rng.gaussian();
    EXPECT_DOUBLE_EQ(rps({q}, {v}, y), pinball(y, v, q) * 1.0);
  }
}

TEST(Rps, HandExampleAndZeroAtTruth) {
  EXPECT_NEAR(rps({0.25, 0.5, 0.75}, {-1.0, 0.0, 1.0}, 0.0), 0.25, 1e-12);
  EXPECT_DOUBLE_EQ(rps({0.25, 0.5, 0.75}, {2.0, 2.0, 2.0}, 2.0), 0.0);
  EXPECT_THROW(rps({0.5, 0.1}, {0.0, 0.0}, 0.0), ConfigError);
  EXPECT_THROW(rps({0.0, 0.5}, {0.0, 0.0}, 0.0), ConfigError);
  EXPECT_THROW(rps({0.5}, {0.0, 1.0}, 0.0), ConfigError);
}

TEST(Rps, WorseningAQuantileNeverDecreasesIt) {
  Rng rng(19);
  const std::vector<double> levels{0.1, 0.5, 0.9};
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<double> v{rng.gaussian(), 0.0, 0.0};
    v[1] = v[0] + rng.uniform();
    v[2] = v[1] + rng.uniform();
    const double y = rng.gaussian();
    const double base = rps(levels, v, y);
    std::vector<double> worse = v;
    if (worse[2] >= y)
      worse[2] += 0.5;  // push the top quantile further above y
    else
      worse[0] -= 0.5;  // or the bottom one further below
    EXPECT_GE(rps(levels, worse, y), base - 1e-12);
  }
}

TEST(Nrps, DiracForecastMatchesScalarComputation) {
  Rng rng(23);
  const auto levels = default_levels();
  std::vector<double> y;
  for (int t = 0; t < 80; ++t) y.push_back(2.0 + rng.gaussian());
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());

  const auto s = constant_quantile_series("s", y, levels, ybar, ybar);
  const double got = nrps(levels, {s});

  double num = 0.0, den = 0.0;
  for (double yt : y) {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const double lo = i == 0 ? 0.0 : levels[i - 1];
      const double hi = i + 1 == levels.size() ? 1.0 : levels[i + 1];
      const double loss = ((yt < ybar ? 1.0 : 0.0) - levels[i]) * (ybar - yt);
      num += loss * (hi - lo);
    }
    den += std::abs(yt - ybar);
  }
  EXPECT_NEAR(got, num / den, 1e-12 * std::max(1.0, std::abs(num / den)));
}

TEST(Nrps, PerfectSharpForecastIsZeroAndScaleInvariant) {
  Rng rng(29);
  const std::vector<double> levels{0.1, 0.5, 0.9};
  SeriesForecasts s;
  s.series_id = "s";
  for (int t = 0; t < 60; ++t) {
    const double yt = rng.gaussian() * 2.0 + 1.0;
    s.y.push_back(yt);
    ForecastRecord r;
    r.timestamp = t * kSecondsPerDay;
    r.series_id = "s";
    r.mean = yt;
    r.quantiles = {yt, yt, yt};
    s.records.push_back(std::move(r));
  }
  EXPECT_DOUBLE_EQ(nrps(levels, {s}), 0.0);

  SeriesForecasts noisy = s;
  Rng rng2(31);
  for (auto& r : noisy.records)
    for (auto& qv : r.quantiles) qv += rng2.gaussian();
  const double base = nrps(levels, {noisy});
  SeriesForecasts scaled = noisy;
  const double c = 3.7;
  for (auto& v : scaled.y) v *= c;
  for (auto& r : scaled.records) {
    r.mean *= c;
    for (auto& qv : r.quantiles) qv *= c;
  }
  EXPECT_NEAR(nrps(levels, {scaled}), base, 1e-12 * base);
}

TEST(ReliabilityTest, DominanceAndValidation) {
  Rng rng(37);
  std::vector<double> y;
  std::vector<ForecastRecord> records;
  const std::vector<double> levels{0.5};
  for (int t = 0; t < 100; ++t) {
    y.push_back(rng.gaussian());
    ForecastRecord r;
    r.timestamp = t * kSecondsPerDay;
    r.mean = 0.0;
    r.quantiles = {1e9};
    records.push_back(std::move(r));
  }
  const ReliabilityRow row = reliability(records, y, levels, 0.5);
  EXPECT_DOUBLE_EQ(row.frequency, 1.0);
  EXPECT_EQ(row.n, 100u);
  EXPECT_NEAR(row.band_hi - row.band_lo, 2.0 * 1.96 * std::sqrt(0.25 / 100.0), 1e-12);

  EXPECT_THROW(reliability(records, y, levels, 0.9), ConfigError);
  records.resize(10);
  y.resize(10);
  EXPECT_THROW(reliability(records, y, levels, 0.5), DataError);
}

TEST(ReliabilityTest, TrueQuantileForecastCoversTheBand) {
  const std::vector<double> levels{0.8};
  int covered = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(1000 + static_cast<std::uint64_t>(rep));
    std::vector<double> y;
    std::vector<ForecastRecord> records;
    for (int t = 0; t < 5000; ++t) {
      y.push_back(rng.uniform());
      ForecastRecord r;
      r.timestamp = t * kSecondsPerDay;
      r.quantiles = {0.8};
      records.push_back(std::move(r));
    }
    const ReliabilityRow row = reliability(records, y, levels, 0.8);
    covered += (row.frequency >= row.band_lo && row.frequency <= row.band_hi);
  }
  EXPECT_GE(covered, 93);
}

TEST(ReliabilityTest, TimeOfDayFilter) {
  std::vector<double> y;
  std::vector<ForecastRecord> records;
  const std::vector<double> levels{0.5};
  for (int t = 0; t < 120; ++t) {
    const bool noon = t % 2 == 0;
    ForecastRecord r;
    r.timestamp = t * kSecondsPerDay + (noon ? 43200 : 0);
    r.quantiles = {noon ? 1e9 : -1e9};
    records.push_back(std::move(r));
    y.push_back(0.0);
  }
  const ReliabilityRow noon_row = reliability(records, y, levels, 0.5, 43200);
  EXPECT_EQ(noon_row.n, 60u);
  EXPECT_DOUBLE_EQ(noon_row.frequency, 1.0);
  const ReliabilityRow midnight_row = reliability(records, y, levels, 0.5, 0);
  EXPECT_DOUBLE_EQ(midnight_row.frequency, 0.0);
}

TEST(Persistence, ShiftDefinitionAndPeriodicSeries) {
  Dataset d = make_daily(30);
  for (std::size_t i = 0; i < d.size(); ++i)
    d.target[i] = static_cast<double>(i % 7);
  const auto f7 = persistence(d, 7);
  for (std::size_t t = 0; t < 7; ++t) EXPECT_TRUE(std::isnan(f7[t]));
  for (std::size_t t = 7; t < d.size(); ++t) {
    EXPECT_DOUBLE_EQ(f7[t], d.target[t - 7]);
    EXPECT_DOUBLE_EQ(f7[t], d.target[t]);  // period matches the lag
  }
  EXPECT_THROW(persistence(d, 0), ConfigError);
  EXPECT_THROW(persistence(d, 1, 2), ConfigError);
}

TEST(Persistence, RandomWalkRmseMatchesInnovationSd) {
  const std::size_t n = 5000;
  Dataset d = make_daily(n);
  Rng rng(41);
  double level = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    level += 0.7 * rng.gaussian();
    d.target[i] = level;
  }
  const auto f = persistence(d, 1);
  std::vector<double> y(d.target.begin() + 1, d.target.end());
  std::vector<double> yhat(f.begin() + 1, f.end());
  EXPECT_NEAR(rmse(y, yhat), 0.7, 0.07);
}

TEST(Report, AggregatesRecomputeBitForBit) {
  Rng rng(43);
  const std::vector<double> levels{0.25, 0.5, 0.75};
  std::vector<SeriesForecasts> all;
  for (int i = 0; i < 2; ++i) {
    SeriesForecasts s;
    s.series_id = "s" + std::to_string(i);
    for (int t = 0; t < 50; ++t) {
      const double yt = rng.gaussian() + i;
      s.y.push_back(yt);
      ForecastRecord r;
      r.timestamp = t * kSecondsPerDay;
      r.series_id = s.series_id;
      r.mean = yt + 0.3 * rng.gaussian();
      r.quantiles = {r.mean - 1.0, r.mean, r.mean + 1.0};
      s.records.push_back(std::move(r));
    }
    all.push_back(std::move(s));
  }
  EvaluationReport rep = evaluate(all, levels);
  const double nrmse0 = rep.nrmse, nmae0 = rep.nmae, nrps0 = rep.nrps;
  rep.nrmse = rep.nmae = rep.nrps = -1.0;
  rep.recompute_aggregates();
  EXPECT_EQ(rep.nrmse, nrmse0);
  EXPECT_EQ(rep.nmae, nmae0);
  EXPECT_EQ(rep.nrps, nrps0);

  const nlohmann::json j = rep;
  EvaluationReport back = j.get<EvaluationReport>();
  back.recompute_aggregates();
  EXPECT_EQ(back.nrmse, nrmse0);
  EXPECT_EQ(back.nmae, nmae0);
  EXPECT_EQ(back.nrps, nrps0);

  back.per_series[0].sum_sq_dev = 0.0;
  EXPECT_THROW(back.recompute_aggregates(), DataError);
}

TEST(TraceCsv, RoundTripIsExact) {
  Rng rng(47);
  const std::vector<double> levels{0.025, 0.5, 0.975};
  std::vector<ForecastRecord> records;
  for (int t = 0; t < 25; ++t) {
    ForecastRecord r;
    r.timestamp = days_from_civil(2019, 1, 1) * kSecondsPerDay + t * kSecondsPerDay;
    r.series_id = "load";
    r.mean = rng.gaussian() * 1e3;
    r.quantiles = {r.mean - rng.uniform(), r.mean, r.mean + rng.uniform()};
    records.push_back(std::move(r));
  }
  const std::string csv = trace_to_csv(records, levels);
  const ParsedTrace parsed = trace_from_csv(csv);
  ASSERT_EQ(parsed.levels.size(), 3u);
  EXPECT_DOUBLE_EQ(parsed.levels[0], 0.025);
  EXPECT_DOUBLE_EQ(parsed.levels[2], 0.975);
  ASSERT_EQ(parsed.records.size(), records.size());
  for (std::size_t t = 0; t < records.size(); ++t) {
    EXPECT_EQ(parsed.records[t].timestamp, records[t].timestamp);
    EXPECT_EQ(parsed.records[t].series_id, records[t].series_id);
    EXPECT_EQ(parsed.records[t].mean, records[t].mean);
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_EQ(parsed.records[t].quantiles[k], records[t].quantiles[k]);
  }
}

TEST(TraceCsv, MalformedInputsAreNamed) {
  EXPECT_THROW(trace_from_csv(""), DataError);
  EXPECT_THROW(trace_from_csv("time,series,mean,q0.5\n"), DataError);
  EXPECT_THROW(trace_from_csv("timestamp,series,mean,x0.5\n"), DataError);
  try {
    trace_from_csv("timestamp,series,mean,q0.5\n2019-01-01T00:00:00Z,s,1.0\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(ReliabilityCsv, TableFormat) {
  ReliabilityRow r;
  r.level = 0.5;
  r.n = 100;
  r.frequency = 0.52;
  r.band_lo = 0.402;
  r.band_hi = 0.598;
  const std::string csv = reliability_to_csv({r});
  EXPECT_EQ(csv, "level,n,frequency,band_lo,band_hi\n0.5,100,0.52,0.402,0.598\n");
}
