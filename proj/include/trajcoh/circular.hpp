#pragma once

// Angle helpers.  Phases elsewhere are kept unwrapped; wrapping happens here.

#include <algorithm>
#include <cmath>
#include <span>

#include "trajcoh/lattice.hpp"

namespace trajcoh {

/// Shortest angular separation, in [0, pi].
inline double circular_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  return r;
}

struct CircularMoments {
  double mean = 0.0;            // direction of the resultant, (-pi, pi]
  double resultant_length = 0;  // in [0, 1]
  double variance() const { return 1.0 - resultant_length; }
};

inline CircularMoments circular_moments(std::span<const double> angles) {
  CircularMoments m;
  if (angles.empty()) return m;
  double c = 0.0, s = 0.0;
  for (double a : angles) {
    c += std::cos(a);
    s += std::sin(a);
  }
  const double n = static_cast<double>(angles.size());
  m.mean = std::atan2(s, c);
  m.resultant_length = std::hypot(c, s) / n;
  return m;
}

}  // namespace trajcoh
