// SPDX-License-Identifier: MIT
//
// Deterministic random number generation.
//
// Two generators cover every stochastic path in the library:
//
//  * CounterRng — counter-based (stateless) generator built on the
//    splitmix64 finalizer. A stream is keyed by (seed, stream id); draw k
//    is a pure function of (key, k). Per-point corruption uses this so a
//    point's outcome is independent of cloud slicing and of how work is
//    scheduled across threads.
//  * SplitMix — the classic sequential splitmix64 engine, for places where
//    a simple ordered stream is the natural fit (scene generation, dataset
//    synthesis, parameter init).
//
// mix64(seed, i) equals the (i+1)-th output of SplitMix(seed), so the two
// views of the stream never disagree.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wxbench {

// splitmix64 output finalizer applied to a raw state word.
constexpr std::uint64_t mix64_finalize(std::uint64_t x) noexcept {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// Keyed mixing: mix64(a, b) is the (b+1)-th splitmix64 output for seed a.
constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64_finalize(a + (b + 1) * kGolden);
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  return mix64(x, 0);
}

namespace detail {
// 53-bit mantissa to [0,1).
constexpr double to_unit(std::uint64_t x) noexcept {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}
// (0,1]; safe under log().
constexpr double to_unit_pos(std::uint64_t x) noexcept {
  return static_cast<double>((x >> 11) + 1) * 0x1.0p-53;
}
}  // namespace detail

// Counter-based stream. All draws are pure functions of (seed, stream,
// counter); callers own the counter-space layout. gauss() consumes the
// counters {2k, 2k+1} of a separate internal lane, so it never collides
// with uniform()/bits() counters.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(seed, stream)), gauss_key_(mix64(key_ ^ kGaussTag, 1)) {}

  std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_, counter);
  }

  double uniform(std::uint64_t counter) const noexcept {
    return detail::to_unit(bits(counter));
  }

  // Half-open [lo, hi) for lo < hi.
  double uniform(std::uint64_t counter, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(counter);
  }

  // Standard normal via Box–Muller.
  double gauss(std::uint64_t counter) const noexcept {
    const double u1 = detail::to_unit_pos(mix64(gauss_key_, 2 * counter));
    const double u2 = detail::to_unit(mix64(gauss_key_, 2 * counter + 1));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t kGaussTag = 0x8bb84b93962eacc9ull;
  std::uint64_t key_;
  std::uint64_t gauss_key_;
};

// Sequential splitmix64 engine (public-domain algorithm by Steele et al.).
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += kGolden;
    return mix64_finalize(state_);
  }

  double uniform() noexcept { return detail::to_unit(next()); }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  double gauss() noexcept {
    const double u1 = detail::to_unit_pos(next());
    const double u2 = detail::to_unit(next());
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n) via 128-bit multiply-shift.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

}  // namespace wxbench
