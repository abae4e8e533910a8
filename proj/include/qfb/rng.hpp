#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace qfb {

/// SplitMix64 finalizer; decorrelates nearby integer seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of trajectory `index` in an ensemble. Depends only on (base, index),
/// so results do not depend on which worker runs which trajectory.
constexpr std::uint64_t trajectory_seed(std::uint64_t base_seed,
                                        std::uint64_t index) {
  return base_seed + index;
}

/// Stream of Gaussian Wiener increments for one trajectory.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double normal() { return dist_(engine_); }
  double wiener(double dt) { return std::sqrt(dt) * normal(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace qfb
