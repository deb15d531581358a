#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every random number in a run is a pure function of
// (master seed, trajectory index, stream tag, counter), so any trajectory can
// be regenerated independently of scheduling order and resumed from a stored
// counter.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace twachain {

using Block4 = std::array<std::uint32_t, 4>;

namespace detail {

inline void philox_round(Block4& ctr, std::uint32_t k0, std::uint32_t k1) {
  constexpr std::uint64_t kM0 = 0xD2511F53u;
  constexpr std::uint64_t kM1 = 0xCD9E8D57u;
  const std::uint64_t p0 = kM0 * ctr[0];
  const std::uint64_t p1 = kM1 * ctr[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
}

}  // namespace detail

/// Philox4x32 with 10 rounds: a bijection of the 128-bit counter keyed by 64 bits.
inline Block4 philox4x32(Block4 ctr, std::uint64_t key) {
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  auto k0 = static_cast<std::uint32_t>(key);
  auto k1 = static_cast<std::uint32_t>(key >> 32);
  for (int r = 0; r < 10; ++r) {
    detail::philox_round(ctr, k0, k1);
    k0 += kW0;
    k1 += kW1;
  }
  return ctr;
}

/// Stream tags separate independent uses of the same trajectory index.
enum class StreamTag : std::uint32_t {
  kInitial = 0,
  kDynamics = 1,
  kOracle = 2,
  kSynthetic = 3,
};

/// A single independent random stream. Copyable; a copy replays the same numbers.
class CounterStream {
 public:
  CounterStream() = default;
  CounterStream(std::uint64_t master_seed, std::uint32_t trajectory, StreamTag tag,
                std::uint64_t counter = 0)
      : key_(master_seed), trajectory_(trajectory),
        tag_(static_cast<std::uint32_t>(tag)), counter_(counter) {}

  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  Block4 next_block() {
    Block4 ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
               trajectory_, tag_};
    ++counter_;
    return philox4x32(ctr, key_);
  }

  /// Two uniforms from one block: first in (0, 1], second in [0, 1).
  std::pair<double, double> uniform_pair() {
    const Block4 b = next_block();
    const std::uint64_t a = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
    const std::uint64_t c = (static_cast<std::uint64_t>(b[2]) << 32) | b[3];
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    return {static_cast<double>((a >> 11) + 1) * kScale, static_cast<double>(c >> 11) * kScale};
  }

  /// Complex Gaussian with E|z|^2 = variance, split evenly over both quadratures.
  std::complex<double> complex_gaussian(double variance) {
    const auto [u1, u2] = uniform_pair();
    const double radius = std::sqrt(-variance * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// Uniform angle on [-pi, pi).
  double uniform_angle() {
    const auto [u1, u2] = uniform_pair();
    (void)u1;
    return std::numbers::pi * (2.0 * u2 - 1.0);
  }

  double uniform01() { return uniform_pair().second; }

 private:
  std::uint64_t key_ = 0;
  std::uint32_t trajectory_ = 0;
  std::uint32_t tag_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace twachain
