#pragma once

// Space-time lattice, trajectories and wave-function fields.
//
// Space is one-dimensional with n_x cells of width dx; time is sliced into
// n_t steps of length dt.  Trajectories visit one cell per time slice, so a
// trajectory on a grid always has n_t + 1 positions.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajcoh {

using Complex = std::complex<double>;
using TrajectoryId = std::uint64_t;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Bad input: malformed grids, configs, endpoint constraints.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Overflow, NaN or a singular linear solve during propagation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PhysicalConstants {
  double hbar = 1.0;
  double mass = 1.0;

  void validate() const {
    if (!(hbar > 0.0) || !std::isfinite(hbar))
      throw ValidationError("hbar must be finite and > 0");
    if (!(mass > 0.0) || !std::isfinite(mass))
      throw ValidationError("mass must be finite and > 0");
  }
};

class SpaceTimeGrid {
 public:
  static SpaceTimeGrid make(double x_min, double x_max, long long n_x,
                            double t_start, double t_end, long long n_t) {
    if (!std::isfinite(x_min) || !std::isfinite(x_max) ||
        !std::isfinite(t_start) || !std::isfinite(t_end))
      throw ValidationError("grid extents must be finite");
    if (!(x_max > x_min))
      throw ValidationError("grid requires x_max > x_min (got x_min=" +
                            std::to_string(x_min) +
                            ", x_max=" + std::to_string(x_max) + ")");
    if (!(t_end > t_start))
      throw ValidationError("grid requires t_end > t_start");
    if (n_x < 2) throw ValidationError("grid requires n_x >= 2");
    if (n_t < 1) throw ValidationError("grid requires n_t >= 1");
    SpaceTimeGrid g;
    g.x_min_ = x_min;
    g.x_max_ = x_max;
    g.n_x_ = static_cast<std::size_t>(n_x);
    g.t_start_ = t_start;
    g.t_end_ = t_end;
    g.n_t_ = static_cast<std::size_t>(n_t);
    g.dx_ = (x_max - x_min) / static_cast<double>(n_x);
    g.dt_ = (t_end - t_start) / static_cast<double>(n_t);
    if (!(g.dx_ > 0.0) || !(g.dt_ > 0.0))
      throw ValidationError("grid spacing underflows to zero");
    return g;
  }

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  std::size_t n_x() const { return n_x_; }
  std::size_t n_t() const { return n_t_; }
  double dx() const { return dx_; }
  double dt() const { return dt_; }
  double duration() const { return t_end_ - t_start_; }

  /// Center of cell i.
  double x(std::size_t i) const {
    return x_min_ + (static_cast<double>(i) + 0.5) * dx_;
  }
  /// Coordinate of a fractional cell index (cell centers at integers).
  double x_at(double index) const { return x_min_ + (index + 0.5) * dx_; }
  /// Time of slice k.
  double t(std::size_t k) const {
    return t_start_ + static_cast<double>(k) * dt_;
  }

  /// Cell containing x, or nullopt outside [x_min, x_max).
  std::optional<std::size_t> index_of(double x) const {
    if (!(x >= x_min_) || !(x < x_max_)) return std::nullopt;
    auto i = static_cast<std::size_t>(std::floor((x - x_min_) / dx_));
    if (i >= n_x_) i = n_x_ - 1;
    return i;
  }

  bool operator==(const SpaceTimeGrid&) const = default;

 private:
  SpaceTimeGrid() = default;

  double x_min_ = 0.0;
  double x_max_ = 1.0;
  std::size_t n_x_ = 2;
  double t_start_ = 0.0;
  double t_end_ = 1.0;
  std::size_t n_t_ = 1;
  double dx_ = 0.5;
  double dt_ = 1.0;
};

inline SpaceTimeGrid make_grid(double x_min, double x_max, long long n_x,
                               double t_start, double t_end, long long n_t) {
  return SpaceTimeGrid::make(x_min, x_max, n_x, t_start, t_end, n_t);
}

struct Trajectory {
  TrajectoryId id = 0;
  std::vector<int> positions;  // one cell index per time slice

  bool operator==(const Trajectory&) const = default;
};

/// max_hop <= 0 means unrestricted.
inline void validate_trajectory(const Trajectory& traj,
                                const SpaceTimeGrid& grid, int max_hop = 0) {
  if (traj.positions.size() != grid.n_t() + 1)
    throw ValidationError("trajectory " + std::to_string(traj.id) + " has " +
                          std::to_string(traj.positions.size()) +
                          " positions, grid needs " +
                          std::to_string(grid.n_t() + 1));
  const auto n_x = static_cast<int>(grid.n_x());
  for (std::size_t k = 0; k < traj.positions.size(); ++k) {
    const int p = traj.positions[k];
    if (p < 0 || p >= n_x)
      throw ValidationError("trajectory " + std::to_string(traj.id) +
                            " leaves the grid at slice " + std::to_string(k));
    if (max_hop > 0 && k > 0 && std::abs(p - traj.positions[k - 1]) > max_hop)
      throw ValidationError("trajectory " + std::to_string(traj.id) +
                            " exceeds max_hop at slice " + std::to_string(k));
  }
}

struct PhasedTrajectory {
  Trajectory trajectory;
  std::vector<double> phases;  // unwrapped, phases[k] at slice k
  Complex weight{1.0, 0.0};

  TrajectoryId id() const { return trajectory.id; }
  int cell(std::size_t k) const { return trajectory.positions[k]; }
  double final_phase() const { return phases.back(); }
};

struct WaveFunctionField {
  SpaceTimeGrid grid;
  std::size_t time_index = 0;
  std::vector<Complex> amplitudes;

  static WaveFunctionField zeros(const SpaceTimeGrid& g,
                                 std::size_t time_index = 0) {
    return {g, time_index, std::vector<Complex>(g.n_x(), Complex{})};
  }

  void validate() const {
    if (amplitudes.size() != grid.n_x())
      throw ValidationError("field has " + std::to_string(amplitudes.size()) +
                            " amplitudes for a grid of " +
                            std::to_string(grid.n_x()) + " cells");
    if (time_index > grid.n_t())
      throw ValidationError("field time_index beyond the grid");
  }
};

inline double norm_squared(const WaveFunctionField& psi) {
  psi.validate();
  double s = 0.0;
  for (const auto& a : psi.amplitudes) s += std::norm(a);
  return s * psi.grid.dx();
}

/// Copy scaled to unit norm.  A zero field is returned unchanged.
inline WaveFunctionField normalized(WaveFunctionField psi) {
  const double n2 = norm_squared(psi);
  if (n2 > 0.0) {
    const double s = 1.0 / std::sqrt(n2);
    for (auto& a : psi.amplitudes) a *= s;
  }
  return psi;
}

/// L2 distance between two fields on the same grid (sqrt(sum |a-b|^2 dx)).
inline double l2_distance(const WaveFunctionField& a,
                          const WaveFunctionField& b) {
  if (!(a.grid == b.grid))
    throw ValidationError("l2_distance: fields live on different grids");
  double s = 0.0;
  for (std::size_t i = 0; i < a.amplitudes.size(); ++i)
    s += std::norm(a.amplitudes[i] - b.amplitudes[i]);
  return std::sqrt(s * a.grid.dx());
}

/// ||a - b|| / ||reference||.
inline double relative_l2(const WaveFunctionField& a,
                          const WaveFunctionField& reference) {
  const double ref = std::sqrt(norm_squared(reference));
  if (!(ref > 0.0)) throw ValidationError("relative_l2: zero reference field");
  return l2_distance(a, reference) / ref;
}

/// Normalized Gaussian packet exp(-(x-x0)^2 / (4 sigma0^2) + i p0 x / hbar),
/// so |psi|^2 has standard deviation sigma0.
inline WaveFunctionField gaussian_packet(const SpaceTimeGrid& grid, double x0,
                                         double sigma0, double p0,
                                         const PhysicalConstants& c = {}) {
  if (!(sigma0 > 0.0)) throw ValidationError("packet sigma0 must be > 0");
  auto psi = WaveFunctionField::zeros(grid);
  for (std::size_t i = 0; i < grid.n_x(); ++i) {
    const double x = grid.x(i);
    const double env = std::exp(-(x - x0) * (x - x0) / (4.0 * sigma0 * sigma0));
    psi.amplitudes[i] = env * std::polar(1.0, p0 * x / c.hbar);
  }
  if (!(norm_squared(psi) > 0.0))
    throw ValidationError("packet has no support on the grid");
  return normalized(std::move(psi));
}

}  // namespace trajcoh
