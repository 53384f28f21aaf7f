#pragma once

// Counter-based random numbers (Philox-4x32-10).
//
// Every draw is a pure function of (seed, stream, path, step, block), so
// Monte-Carlo paths can be generated in any order or on any thread and
// still reproduce bit for bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace svlift {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

/// Philox-4x32 with 10 rounds (Salmon et al., SC'11).
inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// Logical stream identifiers; separate streams never share counters.
enum class Stream : std::uint32_t {
  brownian = 0,
  initial_state = 1,
  brownian_alt = 2,
};

/// Gaussian source for one Monte-Carlo path, keyed by (seed, stream, path).
///
/// `normals(step, out)` fills `out` with i.i.d. standard normals that depend
/// only on the key and the step index.
class PathNormals {
 public:
  PathNormals(std::uint64_t seed, std::uint64_t path, Stream stream = Stream::brownian)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        path_(static_cast<std::uint32_t>(path)),
        stream_(static_cast<std::uint32_t>(stream) ^ (static_cast<std::uint32_t>(path >> 32) << 8)) {}

  void normals(std::uint64_t step, std::span<double> out) const {
    std::uint32_t block = 0;
    std::size_t i = 0;
    while (i < out.size()) {
      const auto r = philox4x32_10(
          {block, static_cast<std::uint32_t>(step), path_, stream_ ^ (static_cast<std::uint32_t>(step >> 32) << 16)},
          key_);
      const double u1 = to_unit(r[0], r[1]);
      const double u2 = to_unit(r[2], r[3]);
      // Box-Muller; u1 is in (0, 1] so the log is finite.
      const double rad = std::sqrt(-2.0 * std::log(u1));
      const double ang = 2.0 * std::numbers::pi * u2;
      out[i++] = rad * std::cos(ang);
      if (i < out.size()) out[i++] = rad * std::sin(ang);
      ++block;
    }
  }

 private:
  // 53-bit uniform in (0, 1].
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
  }

  Philox4x32Key key_;
  std::uint32_t path_;
  std::uint32_t stream_;
};

}  // namespace svlift
