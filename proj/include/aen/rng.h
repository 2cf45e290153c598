#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace aen {

// Deterministic random source. All randomness in the library flows through
// this class so that a run is reproducible from a single seed across
// platforms and standard-library versions. std::mt19937_64 has a fixed
// portable output sequence; the distribution transforms below are written
// out by hand because the std::*_distribution wrappers are not guaranteed
// to produce identical streams everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1), 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both ends inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Desk-scale spans; modulo bias is ~span/2^64 and irrelevant here.
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps
  // no cached spare, so the consumed stream is easy to reason about.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // guard log(0)
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream from (seed, salt0, salt1). Used to give
  // every fold / epoch / sample its own generator so that the result does
  // not depend on scheduling or worker count. splitmix64-style mixing.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt0,
                              std::uint64_t salt1 = 0) {
    auto mix = [](std::uint64_t z) {
      z += 0x9e3779b97f4a7c15ull;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ salt0) ^ salt1);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace aen
