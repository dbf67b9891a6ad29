#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ccwf;

TEST(Seeds, DeriveIsDeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
  EXPECT_NE(derive_seed(7, 1, 2), derive_seed(7, 2, 1));
  EXPECT_NE(derive_seed(7, 1), derive_seed(8, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 1000; ++r) seen.insert(derive_seed(42, 0xBE7C, r));
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Seeds, RngStreamsRepeat) {
  Rng a = make_rng(99), b = make_rng(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Random, UniformIndexCoversRangeEvenly) {
  Rng rng = make_rng(3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[uniform_index(rng, 7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Random, StandardNormalMoments) {
  Rng rng = make_rng(11);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(ParallelFor, VisitsEveryIndexOnceForAnyThreadCount) {
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    std::vector<int> hits(101, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(ParallelFor, SlotResultsIndependentOfThreads) {
  auto run = [](std::size_t threads) {
    std::vector<double> out(50);
    parallel_for(out.size(), threads, [&](std::size_t i) {
      Rng rng = make_rng(derive_seed(5, i));
      out[i] = standard_normal(rng);
    });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(20, 4, [](std::size_t i) {
      if (i == 3 || i == 17) throw NumericError("fail " + std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "fail 3");
  }
}

TEST(Format, DoubleRoundTripIsExact) {
  Rng rng = make_rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(uniform(rng, -1.0, 1.0), static_cast<int>(uniform_index(rng, 200)) - 100);
    double back = 0.0;
    ASSERT_TRUE(parse_double(format_double(v), back));
    EXPECT_EQ(back, v);
  }
}

TEST(Format, ParseRejectsJunk) {
  double d;
  int k;
  EXPECT_FALSE(parse_double("", d));
  EXPECT_FALSE(parse_double("1.5x", d));
  EXPECT_TRUE(parse_double(" +2.5 ", d));
  EXPECT_EQ(d, 2.5);
  EXPECT_FALSE(parse_int("3.0", k));
  EXPECT_FALSE(parse_int("abc", k));
  EXPECT_TRUE(parse_int(" 12 ", k));
  EXPECT_EQ(k, 12);
}

TEST(Format, SplitAndTrim) {
  const auto parts = split("a, b,,c", ',');
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(trim(parts[1]), "b");
  EXPECT_EQ(parts[2], "");
}

TEST(MeanSe, MatchesHandComputation) {
  const MeanSe m = mean_se({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(mean_se({5.0}).se, 0.0);
}
