#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "svlift/rng.hpp"

using namespace svlift;

TEST(Philox, KnownAnswerZero) {
  const auto out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  const Philox4x32Counter want{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u};
  EXPECT_EQ(out, want);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  const Philox4x32Counter want{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu};
  EXPECT_EQ(out, want);
}

TEST(Philox, KnownAnswerPi) {
  const auto out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  const Philox4x32Counter want{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u};
  EXPECT_EQ(out, want);
}

TEST(PathNormals, DependsOnlyOnKeyAndStep) {
  std::vector<double> a(7), b(7), c(7);
  PathNormals(11, 3).normals(5, a);
  PathNormals(11, 3).normals(4, c);
  PathNormals(11, 3).normals(5, b);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(PathNormals, StreamsPathsAndSeedsDiffer) {
  std::vector<double> base(4), other(4);
  PathNormals(1, 0, Stream::brownian).normals(0, base);
  PathNormals(1, 0, Stream::brownian_alt).normals(0, other);
  EXPECT_NE(base, other);
  PathNormals(1, 0, Stream::initial_state).normals(0, other);
  EXPECT_NE(base, other);
  PathNormals(1, 1, Stream::brownian).normals(0, other);
  EXPECT_NE(base, other);
  PathNormals(2, 0, Stream::brownian).normals(0, other);
  EXPECT_NE(base, other);
}

TEST(PathNormals, PrefixStableAcrossLengths) {
  std::vector<double> a(3), b(8);
  PathNormals(9, 2).normals(1, a);
  PathNormals(9, 2).normals(1, b);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(PathNormals, StandardMoments) {
  const int N = 200000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  int tail = 0;
  std::vector<double> z(5);
  for (int k = 0; k < N / 5; ++k) {
    PathNormals(42, 0).normals(static_cast<std::uint64_t>(k), z);
    for (double x : z) {
      ASSERT_TRUE(std::isfinite(x));
      s1 += x;
      s2 += x * x;
      s4 += x * x * x * x;
      tail += std::abs(x) > 1.959963984540054 ? 1 : 0;
    }
  }
  const double mean = s1 / N, var = s2 / N - mean * mean, kurt = s4 / N;
  EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(N));
  EXPECT_LT(std::abs(var - 1.0), 5.0 * std::sqrt(2.0 / N));
  EXPECT_LT(std::abs(kurt - 3.0), 5.0 * std::sqrt(96.0 / N));
  const double p = static_cast<double>(tail) / N;
  EXPECT_LT(std::abs(p - 0.05), 5.0 * std::sqrt(0.05 * 0.95 / N));
}
