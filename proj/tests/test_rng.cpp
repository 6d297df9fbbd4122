#include "dp2erm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

namespace dp2erm {
namespace {

TEST(Philox, KnownAnswerVectors) {
  const auto zero = Philox::block({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(zero[0], 0x16554d9eca36314cULL);
  EXPECT_EQ(zero[1], 0xdb20fe9d672d0fdcULL);
  EXPECT_EQ(zero[2], 0xd7e772cee186176bULL);
  EXPECT_EQ(zero[3], 0x7e68b68aec7ba23bULL);
  const auto pi = Philox::block(
      {0x243f6a8885a308d3ULL, 0x13198a2e03707344ULL, 0xa4093822299f31d0ULL,
       0x082efa98ec4e6c89ULL},
      {0x452821e638d01377ULL, 0xbe5466cf34e90c6cULL});
  EXPECT_EQ(pi[0], 0xa528f45403e61d95ULL);
  EXPECT_EQ(pi[1], 0x38c72dbd566e9788ULL);
  EXPECT_EQ(pi[2], 0xa5a1610e72fd18b5ULL);
  EXPECT_EQ(pi[3], 0x57bd43b5e52b7fe6ULL);
}

TEST(Philox, FirstOutputsAreBlockAtCounterZero) {
  Philox g(7, 9);
  const auto block = Philox::block({0, 0, 0, 0}, {7, 9});
  for (int k = 0; k < 4; ++k) EXPECT_EQ(g(), block[static_cast<std::size_t>(k)]);
  EXPECT_EQ(g(), Philox::block({1, 0, 0, 0}, {7, 9})[0]);
}

TEST(Rng, SameSeedSameStreamReproduces) {
  Rng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  bool differs_stream = false, differs_seed = false;
  for (int k = 0; k < 100; ++k) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs_stream |= x != c.normal();
    differs_seed |= x != d.normal();
  }
  EXPECT_TRUE(differs_stream);
  EXPECT_TRUE(differs_seed);
}

TEST(Rng, UniformOpenInterval) {
  Rng rng(1, 1);
  double sum = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Rng, BelowCoversRangeUniformly) {
  Rng rng(2, 0);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int k = 0; k < n; ++k) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  // chi-square with 6 df; 99.9% quantile is 22.46
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi2, 22.46);
  EXPECT_THROW(rng.below(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng rng(3, 0);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 3.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(Rng, GammaMeanAndVariance) {
  for (double shape : {0.5, 1.0, 3.0, 10.0}) {
    Rng rng(4, static_cast<std::uint64_t>(shape * 10));
    const double scale = 2.0;
    const int n = 50000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
      const double g = rng.gamma(shape, scale);
      ASSERT_GT(g, 0.0);
      s += g;
      s2 += g * g;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    const double true_var = shape * scale * scale;
    EXPECT_NEAR(mean, shape * scale, 4.0 * std::sqrt(true_var / n)) << shape;
    EXPECT_NEAR(var, true_var, 0.05 * true_var) << shape;
  }
  Rng rng(0, 0);
  EXPECT_THROW(rng.gamma(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(rng.gamma(1.0, -1.0), std::invalid_argument);
}

TEST(StreamId, PackIsInjectiveOverPlanGrid) {
  std::set<std::uint64_t> seen;
  std::size_t count = 0;
  for (std::uint32_t rep = 0; rep < 20; ++rep)
    for (std::uint8_t scheme = 0; scheme < 3; ++scheme)
      for (std::uint8_t mech = 0; mech < 2; ++mech)
        for (std::uint16_t eps = 0; eps < 6; ++eps)
          for (std::uint8_t stage = 0; stage < 4; ++stage) {
            seen.insert(StreamId{rep, scheme, mech, eps, stage}.pack());
            ++count;
          }
  EXPECT_EQ(seen.size(), count);
  EXPECT_THROW((StreamId{0, 0, 16, 0, 0}.pack()), std::out_of_range);
  EXPECT_THROW((StreamId{0, 0, 0, 4096, 0}.pack()), std::out_of_range);
}

}  // namespace
}  // namespace dp2erm
