#include "anl/aggregation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "anl/common.hpp"

using namespace anl;

namespace {

QrModel zero_model(double q) { return QrModel{q, Eigen::VectorXd::Zero(1)}; }

std::vector<PoolStep> drift_stream(std::uint64_t seed, int T) {
  Rng rng(seed);
  std::vector<PoolStep> s(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    double mu = 0.0;
    if (t >= T / 3) mu = 3.0;
    if (t >= 2 * T / 3) mu = -2.0;
    s[static_cast<std::size_t>(t)] = PoolStep{Eigen::VectorXd::Ones(1), 0.0,
                                              mu + 0.5 * rng.gaussian()};
  }
  return s;
}

double mean_pinball(const std::vector<PoolStep>& s, const std::vector<double>& fc, double q) {
  double sum = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t) sum += pinball(s[t].y, fc[t], q);
  return sum / static_cast<double>(s.size());
}

}  // namespace

TEST(Aggregate, UniformAverageAndVertexAndHull) {
  ExpertPool pool = make_expert_pool(0.5, {0.1, 0.01, 0.001}, zero_model(0.5));
  EXPECT_DOUBLE_EQ(aggregate(pool, {1.0, 2.0, 3.0}), 2.0);

  pool.weights << 0.0, 1.0, 0.0;
  EXPECT_DOUBLE_EQ(aggregate(pool, {1.0, 2.0, 3.0}), 2.0);
  EXPECT_DOUBLE_EQ(aggregate(pool, {-4.0, 7.5, 100.0}), 7.5);

  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd w(3);
    for (int k = 0; k < 3; ++k) w[k] = rng.uniform() + 1e-6;
    pool.weights = w / w.sum();
    const std::vector<double> f{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double a = aggregate(pool, f);
    EXPECT_GE(a, *std::min_element(f.begin(), f.end()) - 1e-15);
    EXPECT_LE(a, *std::max_element(f.begin(), f.end()) + 1e-15);
  }
}

TEST(Aggregate, NonFiniteForecastNamesTheExpert) {
  ExpertPool pool = make_expert_pool(0.5, {0.1, 0.01}, zero_model(0.5));
  try {
    aggregate(pool, {1.0, std::numeric_limits<double>::quiet_NaN()});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expert 1"), std::string::npos);
    EXPECT_NE(msg.find("0.01"), std::string::npos);
  }
}

TEST(BoaUpdate, IdenticalLossesKeepUniformWeights) {
  ExpertPool pool = make_expert_pool(0.5, {0.1, 0.01, 0.001, 0.0001}, zero_model(0.5));
  pool = boa_update(pool, {0.3, 0.3, 0.3, 0.3}, 0.3);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(pool.weights[k], 0.25, 1e-15);
}

TEST(BoaUpdate, DominantExpertWinsWithinFiveHundredRounds) {
  ExpertPool pool = make_expert_pool(0.5, {0.1, 0.01}, zero_model(0.5), 0.1);
  for (int t = 0; t < 500; ++t) {
    const std::vector<double> losses{0.0, 0.1};
    const double agg = pool.weights[0] * losses[0] + pool.weights[1] * losses[1];
    pool = boa_update(pool, losses, agg);
  }
  EXPECT_GT(pool.weights[0], 0.99);
}

TEST(BoaUpdate, SimplexSurvivesLongRandomStreams) {
  ExpertPool pool = make_expert_pool(0.5, {1.0, 0.1, 0.01, 0.001, 0.0001}, zero_model(0.5));
  Rng rng(17);
  for (int t = 0; t < 100000; ++t) {
    std::vector<double> losses(5);
    for (auto& l : losses) l = rng.uniform();
    const double agg = rng.uniform();
    pool = boa_update(pool, losses, agg);
    ASSERT_NEAR(pool.weights.sum(), 1.0, 1e-9);
    ASSERT_GE(pool.weights.minCoeff(), 0.0);
  }
  pool.validate();
}

TEST(BoaUpdate, RejectsInvalidLosses) {
  ExpertPool pool = make_expert_pool(0.5, {0.1, 0.01}, zero_model(0.5));
  EXPECT_THROW(boa_update(pool, {0.1, -0.2}, 0.1), NumericalError);
  EXPECT_THROW(boa_update(pool, {0.1, 0.2}, -0.1), NumericalError);
  EXPECT_THROW(boa_update(pool, {0.1}, 0.1), NumericalError);
}

TEST(RunPool, SingleExpertPoolIsTheExpert) {
  Rng rng(23);
  std::vector<PoolStep> stream(400);
  for (auto& s : stream)
    s = PoolStep{Eigen::VectorXd::Ones(1), 1.0, 1.0 + rng.gaussian()};

  const ExpertPool pool = make_expert_pool(0.8, {0.05}, zero_model(0.8));
  const PoolTrace trace = run_pool(pool, stream);

  QrModel m = zero_model(0.8);
  for (std::size_t t = 0; t < stream.size(); ++t) {
    EXPECT_DOUBLE_EQ(trace.forecasts[t], predict_quantile(m, stream[t].z, stream[t].mean));
    EXPECT_DOUBLE_EQ(trace.weights[t][0], 1.0);
    m = ogd_step(m, stream[t].z, stream[t].y - stream[t].mean, 0.05);
  }
}

TEST(RunPool, RegretBoundAgainstBestExpert) {
  const auto stream = drift_stream(31, 2000);
  const auto grid = default_step_grid();
  const PoolTrace pool_trace = run_pool(make_expert_pool(0.5, grid, zero_model(0.5)), stream);

  double best = std::numeric_limits<double>::infinity();
  double loss_range = 0.0;
  for (double a : grid) {
    const PoolTrace t = run_pool(make_expert_pool(0.5, {a}, zero_model(0.5)), stream);
    double cum = 0.0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
      const double l = pinball(stream[i].y, t.forecasts[i], 0.5);
      cum += l;
      loss_range = std::max(loss_range, l);
    }
    best = std::min(best, cum);
  }
  double cum_pool = 0.0;
  for (std::size_t i = 0; i < stream.size(); ++i)
    cum_pool += pinball(stream[i].y, pool_trace.forecasts[i], 0.5);

  const double T = static_cast<double>(stream.size());
  const double K = static_cast<double>(grid.size());
  EXPECT_LE(cum_pool, best + loss_range * std::sqrt(T * std::log(K)));
}

TEST(RunPool, NearOracleOnDriftingStream) {
  const auto stream = drift_stream(47, 3000);
  const auto grid = default_step_grid();
  const PoolTrace pool_trace = run_pool(make_expert_pool(0.5, grid, zero_model(0.5)), stream);
  const double pool_rps = mean_pinball(stream, pool_trace.forecasts, 0.5);

  double best = std::numeric_limits<double>::infinity();
  for (double a : grid) {
    const PoolTrace t = run_pool(make_expert_pool(0.5, {a}, zero_model(0.5)), stream);
    best = std::min(best, mean_pinball(stream, t.forecasts, 0.5));
  }
  EXPECT_LE(pool_rps, best * 1.02);
}

TEST(RunPool, RevealedObservationOnlyAffectsLaterForecasts) {
  auto a = drift_stream(53, 300);
  auto b = a;
  b[100].y += 10.0;
  const auto grid = default_step_grid();
  const PoolTrace ta = run_pool(make_expert_pool(0.5, grid, zero_model(0.5)), a);
  const PoolTrace tb = run_pool(make_expert_pool(0.5, grid, zero_model(0.5)), b);

  for (std::size_t t = 0; t <= 100; ++t)
    ASSERT_DOUBLE_EQ(ta.forecasts[t], tb.forecasts[t]) << "t=" << t;
  bool diverged = false;
  for (std::size_t t = 101; t < a.size(); ++t)
    diverged = diverged || ta.forecasts[t] != tb.forecasts[t];
  EXPECT_TRUE(diverged);
}

TEST(RunPool, DuplicatedExpertLeavesCombinationUnchanged) {
  const auto stream = drift_stream(61, 300);
  const double eta = 0.2;

  const ExpertPool dedup = make_expert_pool(0.5, {0.01, 0.1}, zero_model(0.5), eta);
  Eigen::VectorXd w(3);
  w << 0.5, 0.25, 0.25;
  const ExpertPool dup = make_expert_pool(0.5, {0.01, 0.1, 0.1}, zero_model(0.5), eta, w);

  const PoolTrace ta = run_pool(dedup, stream);
  const PoolTrace tb = run_pool(dup, stream);
  for (std::size_t t = 0; t < stream.size(); ++t)
    ASSERT_NEAR(ta.forecasts[t], tb.forecasts[t], 1e-10) << "t=" << t;
}

TEST(PoolJson, RoundTripAndValidation) {
  const auto stream = drift_stream(71, 50);
  ExpertPool pool = run_pool(make_expert_pool(0.8, {0.1, 0.01}, zero_model(0.8)), stream).final_pool;

  const nlohmann::json j = pool;
  const ExpertPool back = j.get<ExpertPool>();
  EXPECT_DOUBLE_EQ(back.q, pool.q);
  EXPECT_EQ(back.alphas, pool.alphas);
  EXPECT_DOUBLE_EQ((back.weights - pool.weights).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ((back.regret_sq_sum - pool.regret_sq_sum).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ((back.regret_max - pool.regret_max).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(back.fixed_eta.has_value());

  ExpertPool tuned = make_expert_pool(0.5, {0.1}, zero_model(0.5), 0.3);
  const ExpertPool tuned_back = nlohmann::json(tuned).get<ExpertPool>();
  ASSERT_TRUE(tuned_back.fixed_eta.has_value());
  EXPECT_DOUBLE_EQ(*tuned_back.fixed_eta, 0.3);

  nlohmann::json bad = j;
  bad["weights"][0] = 2.0;  // breaks the simplex
  EXPECT_THROW(bad.get<ExpertPool>(), NumericalError);
  EXPECT_THROW(make_expert_pool(0.5, std::vector<double>{}, zero_model(0.5)), ConfigError);
  EXPECT_THROW(make_expert_pool(0.5, {-0.1}, zero_model(0.5)), ConfigError);
}
