#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace scale {

/// Counter-based SplitMix64 stream.
///
/// Every random decision in the library is drawn from a stream derived from a
/// path of integers, e.g. (seed, epoch, batch, datapoint, sample, block), so a
/// draw depends only on its coordinates and never on evaluation order. Doubles
/// are built from the top 53 bits, which keeps sequences identical across
/// standard library implementations.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr explicit Stream(std::uint64_t key = 0) noexcept : state_(key) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Child stream identified by `tag`. Children with distinct tags are
  /// statistically independent of each other and of the parent.
  [[nodiscard]] constexpr Stream split(std::uint64_t tag) const noexcept {
    return Stream(mix(key_ ^ mix(tag + kGolden)));
  }

  [[nodiscard]] static constexpr Stream derive(
      std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    Stream s(mix(seed + kGolden));
    for (auto p : path) s = s.split(p);
    return s;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform on [0, 1).
  constexpr double uniform01() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform01();
  }

  /// Uniform index in {0, ..., n - 1}; n must be positive.
  constexpr std::uint64_t index(std::uint64_t n) noexcept {
    auto i = static_cast<std::uint64_t>(uniform01() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  constexpr bool bernoulli(double p) noexcept { return uniform01() < p; }

  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  // `key_` identifies the stream for splitting; `state_` advances on draws.
  std::uint64_t state_;
  std::uint64_t key_ = state_;
};

}  // namespace scale
