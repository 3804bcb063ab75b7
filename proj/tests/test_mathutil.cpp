#include "anl/mathutil.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "anl/common.hpp"

using namespace anl;

TEST(NormalQuantile, KnownValues) {
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-9);
  EXPECT_NEAR(normal_quantile(0.995), 2.5758293035489004, 1e-9);
  EXPECT_NEAR(normal_quantile(0.841344746068543), 1.0, 1e-9);
  EXPECT_NEAR(normal_quantile(1e-6), -4.753424308822899, 1e-9);
  EXPECT_NEAR(normal_quantile(1.0 - 1e-6), 4.753424308822899, 1e-9);
}

TEST(NormalQuantile, InverseOfCdfAcrossRange) {
  // x spans the quantile range [1e-6, 1-1e-6].
  for (double x = -4.75; x <= 4.75; x += 0.01) {
    const double q = normal_cdf(x);
    EXPECT_NEAR(normal_quantile(q), x, 1e-9 * (1.0 + std::abs(x)));
  }
}

TEST(NormalQuantile, Symmetry) {
  for (double q : {1e-6, 1e-4, 0.025, 0.1, 0.3, 0.49})
    EXPECT_NEAR(normal_quantile(q) + normal_quantile(1.0 - q), 0.0, 1e-9);
}

TEST(NormalQuantile, RejectsOutOfRange) {
  EXPECT_THROW(normal_quantile(0.0), ConfigError);
  EXPECT_THROW(normal_quantile(1.0), ConfigError);
  EXPECT_THROW(normal_quantile(-0.1), ConfigError);
  EXPECT_THROW(normal_quantile(1.5), ConfigError);
}

TEST(NormalCdf, KnownValues) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(1.959963984540054), 0.975, 1e-12);
  EXPECT_NEAR(normal_cdf(-1.0) + normal_cdf(1.0), 1.0, 1e-15);
}

TEST(NormalPdf, MatchesFormula) {
  EXPECT_NEAR(normal_pdf(0.0), 1.0 / std::sqrt(2.0 * kPi), 1e-15);
  EXPECT_NEAR(normal_pdf(1.0), std::exp(-0.5) / std::sqrt(2.0 * kPi), 1e-15);
}

TEST(Rng, DeterministicBySeed) {
  Rng a(42), b(42), c(43);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform();
    EXPECT_EQ(va, b.uniform());
    EXPECT_GE(va, 0.0);
    EXPECT_LT(va, 1.0);
    if (va != c.uniform()) any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Rng, GaussianMomentsSane) {
  Rng rng(7);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    s += g;
    s2 += g * g;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Hash, Fnv1a64ReferenceVectors) {
  EXPECT_EQ(fnv1a64_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a64_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(fnv1a64_hex("foobar"), "85944171f73967e8");
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(0.025), "0.025");
  for (double v : {3.141592653589793, -2.5e-8, 123456.789, 0.3333333333333333})
    EXPECT_EQ(std::stod(format_double(v)), v);
}
