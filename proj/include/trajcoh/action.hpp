#pragma once

// Discrete classical action and phase profiles.
//
// A segment from cell j at slice k to cell i at slice k+1 is the straight line
// between the two cell centers.  Its action is
//
//   m (x_i - x_j)^2 / (2 dt)  -  V(midpoint, t_k + dt/2) dt
//
// with V linearly interpolated between cell-center values.  The propagators
// price a transfer-matrix entry with exactly this function.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "trajcoh/lattice.hpp"

namespace trajcoh {

struct FreePotential {};

/// V(x) = m omega^2 x^2 / 2.
struct HarmonicPotential {
  double omega = 1.0;
};

/// Per-cell values switched on for t in [t_on, t_off).  A value of +inf is a
/// hard wall: amplitude there is removed and paths through it carry no weight.
struct BarrierPotential {
  std::vector<double> values;
  double t_on = -std::numeric_limits<double>::infinity();
  double t_off = std::numeric_limits<double>::infinity();
};

using Potential = std::variant<FreePotential, HarmonicPotential, BarrierPotential>;

struct LagrangianSpec {
  PhysicalConstants constants;
  Potential potential = FreePotential{};

  bool is_free() const {
    return std::holds_alternative<FreePotential>(potential);
  }

  void validate(const SpaceTimeGrid& grid) const {
    constants.validate();
    if (const auto* h = std::get_if<HarmonicPotential>(&potential)) {
      if (!(h->omega > 0.0) || !std::isfinite(h->omega))
        throw ValidationError("harmonic omega must be finite and > 0");
    } else if (const auto* b = std::get_if<BarrierPotential>(&potential)) {
      if (b->values.size() != grid.n_x())
        throw ValidationError("barrier profile has " +
                              std::to_string(b->values.size()) +
                              " values for a grid of " +
                              std::to_string(grid.n_x()) + " cells");
      for (double v : b->values)
        if (std::isnan(v) || v == -std::numeric_limits<double>::infinity())
          throw ValidationError("barrier values must be finite or +inf");
      if (!(b->t_off > b->t_on))
        throw ValidationError("barrier window requires t_off > t_on");
    }
  }

  /// Potential at cell i during a step whose midpoint time is t.
  double cell_potential(const SpaceTimeGrid& grid, std::size_t i,
                        double t) const {
    return std::visit(
        [&](const auto& p) -> double {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, FreePotential>) {
            return 0.0;
          } else if constexpr (std::is_same_v<P, HarmonicPotential>) {
            const double x = grid.x(i);
            return 0.5 * constants.mass * p.omega * p.omega * x * x;
          } else {
            return (t >= p.t_on && t < p.t_off) ? p.values[i] : 0.0;
          }
        },
        potential);
  }

  /// Linear interpolation of cell-center values at a fractional cell index,
  /// clamped to the grid.
  double potential_at(const SpaceTimeGrid& grid, double index, double t) const {
    if (is_free()) return 0.0;
    const double last = static_cast<double>(grid.n_x() - 1);
    index = std::clamp(index, 0.0, last);
    const double fl = std::floor(index);
    const double frac = index - fl;
    const auto i0 = static_cast<std::size_t>(fl);
    const double v0 = cell_potential(grid, i0, t);
    if (frac == 0.0) return v0;
    const double v1 = cell_potential(grid, i0 + 1, t);
    return (1.0 - frac) * v0 + frac * v1;
  }

  /// dV/d(index) from interpolated centered differences; smooth enough for
  /// Newton-type relaxation.  Requires finite potential values.
  double potential_slope_at(const SpaceTimeGrid& grid, double index,
                            double t) const {
    if (is_free()) return 0.0;
    const auto n = grid.n_x();
    auto slope = [&](std::size_t i) {
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 >= n ? n - 1 : i + 1;
      return (cell_potential(grid, hi, t) - cell_potential(grid, lo, t)) /
             static_cast<double>(hi - lo);
    };
    const double last = static_cast<double>(n - 1);
    index = std::clamp(index, 0.0, last);
    const double fl = std::floor(index);
    const double frac = index - fl;
    const auto i0 = static_cast<std::size_t>(fl);
    if (frac == 0.0) return slope(i0);
    return (1.0 - frac) * slope(i0) + frac * slope(i0 + 1);
  }
};

/// Midpoint time of the step from slice k to slice k+1.
inline double step_midtime(const SpaceTimeGrid& grid, std::size_t k) {
  return grid.t(k) + 0.5 * grid.dt();
}

/// Action of one straight segment between fractional cell indices.
inline double segment_action(const LagrangianSpec& lag,
                             const SpaceTimeGrid& grid, double from_index,
                             double to_index, std::size_t step) {
  const double dxs = (to_index - from_index) * grid.dx();
  const double dt = grid.dt();
  const double kinetic = 0.5 * lag.constants.mass * dxs * dxs / dt;
  const double v = lag.potential_at(grid, 0.5 * (from_index + to_index),
                                    step_midtime(grid, step));
  return kinetic - v * dt;
}

struct ActionValue {
  double total = 0.0;
  std::vector<double> per_step;
};

/// Action along fractional cell indices (one per slice).
inline ActionValue discrete_action(std::span<const double> indices,
                                   const LagrangianSpec& lag,
                                   const SpaceTimeGrid& grid) {
  if (indices.size() != grid.n_t() + 1)
    throw ValidationError("path length " + std::to_string(indices.size()) +
                          " does not match grid n_t + 1 = " +
                          std::to_string(grid.n_t() + 1));
  ActionValue a;
  a.per_step.resize(grid.n_t());
  for (std::size_t k = 0; k < grid.n_t(); ++k) {
    a.per_step[k] = segment_action(lag, grid, indices[k], indices[k + 1], k);
    a.total += a.per_step[k];
  }
  return a;
}

inline ActionValue discrete_action(const Trajectory& traj,
                                   const LagrangianSpec& lag,
                                   const SpaceTimeGrid& grid) {
  validate_trajectory(traj, grid);
  std::vector<double> idx(traj.positions.begin(), traj.positions.end());
  return discrete_action(idx, lag, grid);
}

/// phases[k] = initial_phase + (sum of the first k step actions) / hbar.
inline PhasedTrajectory phase_profile(const Trajectory& traj,
                                      const LagrangianSpec& lag,
                                      const SpaceTimeGrid& grid,
                                      double initial_phase = 0.0) {
  const ActionValue a = discrete_action(traj, lag, grid);
  PhasedTrajectory pt;
  pt.trajectory = traj;
  pt.phases.resize(grid.n_t() + 1);
  pt.phases[0] = initial_phase;
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.n_t(); ++k) {
    acc += a.per_step[k];
    pt.phases[k + 1] = initial_phase + acc / lag.constants.hbar;
  }
  return pt;
}

/// Recomputes the phase profile and compares phase increments.
inline bool phases_consistent(const PhasedTrajectory& pt,
                              const LagrangianSpec& lag,
                              const SpaceTimeGrid& grid,
                              double rel_tol = 1e-12) {
  if (pt.phases.size() != grid.n_t() + 1) return false;
  const ActionValue a = discrete_action(pt.trajectory, lag, grid);
  for (std::size_t k = 0; k < grid.n_t(); ++k) {
    const double stored = pt.phases[k + 1] - pt.phases[k];
    const double expect = a.per_step[k] / lag.constants.hbar;
    const double scale = std::max({1.0, std::abs(expect), std::abs(pt.phases[k + 1])});
    if (std::abs(stored - expect) > rel_tol * scale) return false;
  }
  return true;
}

/// Thrown when stationary_path runs out of iterations; carries the best path.
class StationaryPathError : public NumericError {
 public:
  StationaryPathError(const std::string& what, Trajectory best)
      : NumericError(what), best_(std::move(best)) {}
  const Trajectory& best() const { return best_; }

 private:
  Trajectory best_;
};

struct StationaryPathOptions {
  std::size_t max_iter = 200000;   // Gauss-Seidel sweeps
  double tolerance = 1e-10;        // max coordinate change, in cells
  std::size_t max_polish = 100000; // discrete improvement passes
};

namespace detail {

inline int round_toward(double q, double anchor) {
  const double fl = std::floor(q);
  const double frac = q - fl;
  if (frac < 0.5) return static_cast<int>(fl);
  if (frac > 0.5) return static_cast<int>(fl) + 1;
  return anchor <= q ? static_cast<int>(fl) : static_cast<int>(fl) + 1;
}

}  // namespace detail

/// Classical (stationary-action) lattice path between two cells.
///
/// Interior positions are relaxed as real numbers by coordinate-wise Newton
/// sweeps on the discrete action, rounded to the nearest cell (ties toward
/// x_a), then polished with single-cell moves until no one-cell change of a
/// single interior slice lowers the action.
inline Trajectory stationary_path(int x_a, int x_b, const LagrangianSpec& lag,
                                  const SpaceTimeGrid& grid,
                                  const StationaryPathOptions& opt = {}) {
  lag.validate(grid);
  const int n_x = static_cast<int>(grid.n_x());
  if (x_a < 0 || x_a >= n_x || x_b < 0 || x_b >= n_x)
    throw ValidationError("stationary_path endpoints must lie inside the grid");
  if (const auto* b = std::get_if<BarrierPotential>(&lag.potential))
    for (double v : b->values)
      if (!std::isfinite(v))
        throw ValidationError("stationary_path needs a finite potential");

  const std::size_t n_t = grid.n_t();
  const double m = lag.constants.mass;
  const double dx = grid.dx();
  const double dt = grid.dt();
  const double stiffness = m * dx * dx / dt;  // d^2 kinetic / dq_k^2 is 2x this

  std::vector<double> q(n_t + 1);
  for (std::size_t k = 0; k <= n_t; ++k)
    q[k] = x_a + (x_b - x_a) * static_cast<double>(k) / static_cast<double>(n_t);

  auto to_trajectory = [&](const std::vector<double>& qs) {
    Trajectory t;
    t.positions.resize(n_t + 1);
    for (std::size_t k = 0; k <= n_t; ++k)
      t.positions[k] =
          std::clamp(detail::round_toward(qs[k], x_a), 0, n_x - 1);
    t.positions.front() = x_a;
    t.positions.back() = x_b;
    return t;
  };

  const double last = static_cast<double>(n_x - 1);
  bool converged = n_t < 2;
  for (std::size_t it = 0; it < opt.max_iter && !converged; ++it) {
    double max_change = 0.0;
    for (std::size_t k = 1; k < n_t; ++k) {
      const double grad =
          stiffness * (2.0 * q[k] - q[k - 1] - q[k + 1]) -
          0.5 * dt *
              (lag.potential_slope_at(grid, 0.5 * (q[k - 1] + q[k]),
                                      step_midtime(grid, k - 1)) +
               lag.potential_slope_at(grid, 0.5 * (q[k] + q[k + 1]),
                                      step_midtime(grid, k)));
      const double next = std::clamp(q[k] - grad / (2.0 * stiffness), 0.0, last);
      max_change = std::max(max_change, std::abs(next - q[k]));
      q[k] = next;
    }
    if (!std::isfinite(max_change))
      throw StationaryPathError("stationary_path relaxation diverged",
                                to_trajectory(q));
    converged = max_change < opt.tolerance;
  }
  if (!converged)
    throw StationaryPathError(
        "stationary_path did not converge within " +
            std::to_string(opt.max_iter) + " sweeps",
        to_trajectory(q));

  Trajectory path = to_trajectory(q);
  auto local = [&](std::size_t k, int p) {
    return segment_action(lag, grid, path.positions[k - 1], p, k - 1) +
           segment_action(lag, grid, p, path.positions[k + 1], k);
  };
  for (std::size_t pass = 0;; ++pass) {
    if (pass >= opt.max_polish)
      throw StationaryPathError("stationary_path polishing did not settle",
                                path);
    bool improved = false;
    for (std::size_t k = 1; k < n_t; ++k) {
      const int p = path.positions[k];
      const double here = local(k, p);
      int best = p;
      double best_val = here;
      for (int cand : {p - 1, p + 1}) {
        if (cand < 0 || cand >= n_x) continue;
        const double v = local(k, cand);
        if (v < best_val - 1e-13 * std::max(1.0, std::abs(here))) {
          best = cand;
          best_val = v;
        }
      }
      if (best != p) {
        path.positions[k] = best;
        improved = true;
      }
    }
    if (!improved) break;
  }
  return path;
}

}  // namespace trajcoh
