#pragma once

// Counter-based seeding and the frozen normal generator.
//
// Every perturbation is regenerated from a 64-bit seed alone, so any worker
// can rebuild any other worker's sample. Seeds are derived as
//   seed(parent, index) = mix64(mix64(parent ^ kSeedSalt) + (index + 1) * kGolden)
// and a sample stream is splitmix64 over that seed. Normals use the
// Box-Muller transform, both outputs consumed in order (cos, then sin).
// The layout is part of the wire protocol: changing it breaks replay.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pgrad {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kSeedSalt = 0xA0761D6478BD642FULL;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Pure function of (parent, index); used for per-sample, per-trial and per-round seeds.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return mix64(mix64(parent ^ kSeedSalt) + (index + 1) * kGolden);
}

class SampleStream {
 public:
  explicit constexpr SampleStream(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += kGolden;
    return mix64(state_);
  }

  /// Uniform on the open interval (0, 1).
  double next_uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  bool next_bit() noexcept { return (next_u64() >> 63) != 0; }

  double next_normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pgrad
