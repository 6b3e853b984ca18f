#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <vector>

#include "drivestyle/numeric.hpp"

using namespace drivestyle;

TEST(Percentile, InterpolatesBetweenClosestRanks) {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(percentile_sorted(xs, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(xs, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(xs, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(xs, 0.1), 1.4);
  EXPECT_DOUBLE_EQ(percentile_sorted(xs, 0.9), 4.6);
}

TEST(Percentile, SingleElementAndEmpty) {
  const std::vector<double> one = {7.0};
  EXPECT_EQ(percentile_sorted(one, 0.9), 7.0);
  EXPECT_THROW(percentile_sorted(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST(Percentile, MonotoneInP) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(1 + rng() % 40);
    for (auto& x : xs) x = n(rng);
    std::sort(xs.begin(), xs.end());
    double prev = -1e300;
    for (int i = 0; i <= 20; ++i) {
      const double q = percentile_sorted(xs, i / 20.0);
      EXPECT_GE(q, prev);
      prev = q;
    }
  }
}

TEST(MeanStd, PopulationDefinition) {
  const std::vector<double> xs = {2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_DOUBLE_EQ(mean_of(xs), 5.0);
  EXPECT_DOUBLE_EQ(stddev_of(xs), 2.0);
  EXPECT_EQ(mean_of(std::vector<double>{}), 0.0);
}

TEST(FormatDouble, ShortestRoundTrip) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 2000; ++i) {
    double v;
    const std::uint64_t bits = rng();
    std::memcpy(&v, &bits, sizeof v);
    if (!std::isfinite(v)) continue;
    double back = 0.0;
    ASSERT_TRUE(parse_double(format_double(v), back));
    EXPECT_EQ(back, v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(2.0), "2");
}

TEST(ParseDouble, AcceptsLeadingPlusRejectsJunk) {
  double v = 0;
  EXPECT_TRUE(parse_double("+1.5", v));
  EXPECT_EQ(v, 1.5);
  EXPECT_FALSE(parse_double("1.5x", v));
  EXPECT_FALSE(parse_double("", v));
}

TEST(Fnv, KnownVector) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
