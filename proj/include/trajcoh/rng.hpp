#pragma once

// Deterministic random streams.
//
// Every independent unit of work (one sampled path, one block of shots) gets
// its own generator seeded from (seed, item index), so results do not depend
// on how work is split across threads.  Uniforms and normals are computed by
// hand because the standard distributions are not specified bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "trajcoh/lattice.hpp"

namespace trajcoh {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t index)
      : gen_(splitmix64(splitmix64(seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL))) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(static_cast<std::uint64_t>(uniform() * static_cast<double>(span)) % span);
  }

  /// Standard normal via Box-Muller (one value per call, the pair's twin is dropped).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64 gen_;
};

/// Cumulative table for drawing indices proportional to non-negative weights.
class Categorical {
 public:
  explicit Categorical(const std::vector<double>& weights) : cdf_(weights.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
        throw ValidationError("sampling weights must be finite and >= 0");
      acc += weights[i];
      cdf_[i] = acc;
    }
    if (!(acc > 0.0)) throw ValidationError("sampling weights sum to zero");
    total_ = acc;
  }

  std::size_t draw(Stream& s) const {
    const double u = s.uniform() * total_;
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::size_t>(it - cdf_.begin());
  }

  double probability(std::size_t i) const {
    return (cdf_[i] - (i ? cdf_[i - 1] : 0.0)) / total_;
  }
  std::size_t size() const { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
  double total_ = 0.0;
};

}  // namespace trajcoh
