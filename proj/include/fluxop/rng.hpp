#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace fluxop {

/// SplitMix64 finalizer. Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based random stream.
///
/// The output for draw `n` is a pure function of (key, n), so a stream is
/// fully described by its key and counter. Substreams derive new keys from
/// the parent key and an integer id and never depend on how many values the
/// parent has already produced. Distribution sampling is implemented here
/// rather than through <random> so sequences are identical across standard
/// library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) + mix64(stream + 0x3c6ef372fe94f82bULL))) {}

  /// Independent stream keyed by (this key, id).
  RngStream substream(std::uint64_t id) const noexcept { return RngStream(key_, id); }

  std::uint64_t next_u64() noexcept {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(key_ ^ counter_);
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform on (0, 1].
  double uniform_open_low() noexcept { return 1.0 - uniform(); }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  /// Exponential with the given rate; +inf for rate 0.
  double exponential(double rate) noexcept {
    if (rate <= 0.0) return INFINITY;
    return -std::log(uniform_open_low()) / rate;
  }

  /// Standard normal via Box-Muller (one value per call, no cached pair).
  double normal() noexcept {
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fluxop
