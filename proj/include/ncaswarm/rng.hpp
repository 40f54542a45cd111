#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ncaswarm {

// SplitMix64 finalizer. Used as the mixing function of the counter-based
// stream below and for deriving child keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

// Counter-based generator: output i is a pure function of (key, i), so a
// stream can be snapshotted as two integers and sub-streams can be drawn in
// any order (which keeps parallel kernels reproducible).
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  static CounterRng for_stream(std::uint64_t seed, std::uint64_t stream) {
    return CounterRng(derive_key(seed, stream));
  }

  static std::uint64_t at(std::uint64_t key, std::uint64_t index) noexcept {
    return mix64(key ^ mix64(index));
  }

  std::uint64_t next_u64() noexcept { return at(key_, counter_++); }

  // Uniform in [0, 1), 24 random mantissa bits so the float is exact.
  float uniform() noexcept { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  double uniform_double() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Multiply-shift; bias is < n / 2^64, irrelevant at our sizes.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() noexcept {
    double u1 = uniform_double();
    const double u2 = uniform_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  bool operator==(const CounterRng&) const = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace ncaswarm
