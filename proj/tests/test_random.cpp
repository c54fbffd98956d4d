#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "lkate/random.hpp"

using namespace lkate;

// Known-answer vectors published with the Random123 distribution.
TEST(Philox, KnownAnswerZero) {
  const auto out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                 {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const auto out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                 {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Philox, SubstreamsDeterministicAndDistinct) {
  auto a = Philox::substream(42, 3, Stream::data);
  auto b = Philox::substream(42, 3, Stream::data);
  auto c = Philox::substream(42, 4, Stream::data);
  auto d = Philox::substream(42, 3, Stream::audit);
  for (int k = 0; k < 100; ++k) {
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
    EXPECT_NE(va, d());
  }
}

TEST(Philox, UniformAndNormalMoments) {
  Philox rng(7, 0);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

TEST(Philox, BelowIsUniform) {
  Philox rng(8, 0);
  std::vector<int> counts(7, 0);
  for (int k = 0; k < 70000; ++k) ++counts[static_cast<std::size_t>(rng.below(7))];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Philox, ShuffleIsPermutation) {
  Philox rng(9, 0);
  std::vector<int> v(50);
  for (int k = 0; k < 50; ++k) v[static_cast<std::size_t>(k)] = k;
  rng.shuffle(v);
  std::vector<int> s = v;
  std::sort(s.begin(), s.end());
  for (int k = 0; k < 50; ++k) EXPECT_EQ(s[static_cast<std::size_t>(k)], k);
}
