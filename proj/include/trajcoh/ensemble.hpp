#pragma once

// Trajectory ensembles and their coherence.
//
// Two trajectories "meet" when they occupy the same cell at the same slice.
// An ensemble is coherent when members that meet carry (nearly) the same
// phase there.  This header measures that, samples ensembles, rebuilds a wave
// function from one, prunes cancelling contributions, keeps the subset that
// agrees with a target wave function, and relaxes phase offsets toward
// agreement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trajcoh/action.hpp"
#include "trajcoh/circular.hpp"
#include "trajcoh/lattice.hpp"
#include "trajcoh/parallel.hpp"
#include "trajcoh/rng.hpp"

namespace trajcoh {

struct Provenance {
  std::string sampler = "manual";
  std::uint64_t seed = 0;
  std::string constraints;
  bool empty_selection = false;
};

struct Ensemble {
  SpaceTimeGrid grid;
  std::vector<PhasedTrajectory> members;
  Provenance provenance;

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }

  void validate() const {
    std::unordered_set<TrajectoryId> ids;
    ids.reserve(members.size());
    for (const auto& m : members) {
      validate_trajectory(m.trajectory, grid);
      if (m.phases.size() != grid.n_t() + 1)
        throw ValidationError("member " + std::to_string(m.id()) +
                              " has a phase profile of the wrong length");
      if (!std::isfinite(std::abs(m.weight)))
        throw ValidationError("member " + std::to_string(m.id()) +
                              " has a non-finite weight");
      if (!ids.insert(m.id()).second)
        throw ValidationError("duplicate trajectory id " + std::to_string(m.id()));
    }
  }
};

/// Adds c to every phase of every member.
inline Ensemble shift_phases(Ensemble e, double c) {
  for (auto& m : e.members)
    for (auto& p : m.phases) p += c;
  return e;
}

struct Participant {
  TrajectoryId id = 0;
  double phase = 0.0;
  std::size_t member = 0;  // index into Ensemble::members
};

struct IntersectionEvent {
  std::size_t time_index = 0;
  int cell = 0;
  std::vector<Participant> participants;  // sorted by id
};

/// Every (slice, cell) occupied by two or more members, ordered by
/// (time_index, cell).  `slice` restricts the scan to one time slice.
inline std::vector<IntersectionEvent> detect_intersections(
    const Ensemble& e, std::optional<std::size_t> slice = std::nullopt) {
  std::vector<IntersectionEvent> out;
  const std::size_t k_lo = slice.value_or(0);
  const std::size_t k_hi = slice ? *slice + 1 : e.grid.n_t() + 1;
  if (slice && *slice > e.grid.n_t())
    throw ValidationError("slice beyond the grid");
  struct Occ {
    int cell;
    TrajectoryId id;
    std::size_t member;
  };
  std::vector<Occ> occ(e.members.size());
  for (std::size_t k = k_lo; k < k_hi; ++k) {
    for (std::size_t m = 0; m < e.members.size(); ++m)
      occ[m] = {e.members[m].cell(k), e.members[m].id(), m};
    std::sort(occ.begin(), occ.end(), [](const Occ& a, const Occ& b) {
      return a.cell != b.cell ? a.cell < b.cell : a.id < b.id;
    });
    for (std::size_t i = 0; i < occ.size();) {
      std::size_t j = i;
      while (j < occ.size() && occ[j].cell == occ[i].cell) ++j;
      if (j - i >= 2) {
        IntersectionEvent ev{k, occ[i].cell, {}};
        ev.participants.reserve(j - i);
        for (std::size_t q = i; q < j; ++q)
          ev.participants.push_back(
              {occ[q].id, e.members[occ[q].member].phases[k], occ[q].member});
        out.push_back(std::move(ev));
      }
      i = j;
    }
  }
  return out;
}

struct EventMeasure {
  double raw = 0.0;
  double smooth = 0.0;
  double circular_variance = 0.0;  // auxiliary, 1 - mean resultant length
};

struct DecoherenceReport {
  std::vector<IntersectionEvent> events;
  std::vector<EventMeasure> per_event;
  double raw_measure = 0.0;     // sum of pairwise circular distances
  double smooth_measure = 0.0;  // sum of pairwise 1 - cos
};

inline EventMeasure measure_event(const IntersectionEvent& ev) {
  EventMeasure m;
  const auto& p = ev.participants;
  std::vector<double> angles;
  angles.reserve(p.size());
  for (std::size_t a = 0; a < p.size(); ++a) {
    angles.push_back(p[a].phase);
    for (std::size_t b = a + 1; b < p.size(); ++b) {
      m.raw += circular_distance(p[a].phase, p[b].phase);
      m.smooth += 1.0 - std::cos(p[a].phase - p[b].phase);
    }
  }
  m.circular_variance = circular_moments(angles).variance();
  return m;
}

inline DecoherenceReport decoherence_measure(
    const Ensemble& e, std::optional<std::size_t> slice = std::nullopt) {
  DecoherenceReport r;
  r.events = detect_intersections(e, slice);
  r.per_event.reserve(r.events.size());
  for (const auto& ev : r.events) {
    r.per_event.push_back(measure_event(ev));
    r.raw_measure += r.per_event.back().raw;
    r.smooth_measure += r.per_event.back().smooth;
  }
  return r;
}

/// True when every pair of members meeting anywhere is within eps (circular).
inline bool is_coherent(const Ensemble& e, double eps,
                        std::optional<std::size_t> slice = std::nullopt) {
  if (!(eps > 0.0)) throw ValidationError("coherence tolerance must be > 0");
  for (const auto& ev : detect_intersections(e, slice)) {
    const auto& p = ev.participants;
    for (std::size_t a = 0; a < p.size(); ++a)
      for (std::size_t b = a + 1; b < p.size(); ++b)
        if (circular_distance(p[a].phase, p[b].phase) > eps) return false;
  }
  return true;
}

// ---------------------------------------------------------------- sampling

/// How sampled paths start, end and wander.
///
/// Start: `start_cell` if set, otherwise drawn from |source|^2.  The initial
/// phase is arg source(start) when a source is given, else 0.
/// End: `end_cell` if set, otherwise drawn from |end_density|^2 if given,
/// otherwise free.
/// Interior: uniform over reachable cells when walk_sigma == 0, otherwise
/// Gaussian steps of walk_sigma cells (pulled toward a fixed end).
struct SampleSpec {
  std::optional<WaveFunctionField> source;
  std::optional<int> start_cell;
  std::optional<int> end_cell;
  std::optional<WaveFunctionField> end_density;
  int max_hop = 0;  // <= 0: unrestricted
  double walk_sigma = 0.0;
  TrajectoryId first_id = 0;
  unsigned workers = 1;
};

namespace detail {

inline std::vector<double> density_weights(const WaveFunctionField& psi,
                                           const SpaceTimeGrid& grid,
                                           const char* what) {
  psi.validate();
  if (!(psi.grid == grid))
    throw ValidationError(std::string(what) + " lives on a different grid");
  std::vector<double> w(psi.amplitudes.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::norm(psi.amplitudes[i]);
  return w;
}

}  // namespace detail

inline Ensemble sample_paths(const SampleSpec& spec, std::size_t n,
                             std::uint64_t seed, const LagrangianSpec& lag,
                             const SpaceTimeGrid& grid) {
  if (n == 0) throw ValidationError("sample_paths needs n >= 1");
  lag.validate(grid);
  const int n_x = static_cast<int>(grid.n_x());
  const int n_t = static_cast<int>(grid.n_t());
  const int hop = spec.max_hop > 0 ? spec.max_hop : n_x;
  auto inside = [&](int c) { return c >= 0 && c < n_x; };
  if (spec.start_cell && !inside(*spec.start_cell))
    throw ValidationError("start cell outside the grid");
  if (spec.end_cell && !inside(*spec.end_cell))
    throw ValidationError("end cell outside the grid");
  if (!spec.start_cell && !spec.source)
    throw ValidationError("sample_paths needs a source field or a start cell");
  if (!(spec.walk_sigma >= 0.0) || !std::isfinite(spec.walk_sigma))
    throw ValidationError("walk_sigma must be finite and >= 0");
  if (spec.start_cell && spec.end_cell &&
      static_cast<long long>(std::abs(*spec.end_cell - *spec.start_cell)) >
          static_cast<long long>(n_t) * hop)
    throw ValidationError("required displacement " +
                          std::to_string(std::abs(*spec.end_cell - *spec.start_cell)) +
                          " exceeds n_t * max_hop = " +
                          std::to_string(static_cast<long long>(n_t) * hop));

  std::optional<Categorical> start_dist, end_dist;
  if (!spec.start_cell)
    start_dist.emplace(detail::density_weights(*spec.source, grid, "source field"));
  if (spec.source) (void)detail::density_weights(*spec.source, grid, "source field");
  if (!spec.end_cell && spec.end_density)
    end_dist.emplace(detail::density_weights(*spec.end_density, grid, "end density"));

  std::vector<PhasedTrajectory> members(n);
  parallel_for(n, spec.workers, [&](std::size_t i) {
    Stream s(seed, i);
    const int start = spec.start_cell
                          ? *spec.start_cell
                          : static_cast<int>(start_dist->draw(s));
    std::optional<int> end = spec.end_cell;
    if (!end && end_dist) {
      for (int attempt = 0; attempt < 1000 && !end; ++attempt) {
        const int c = static_cast<int>(end_dist->draw(s));
        if (static_cast<long long>(std::abs(c - start)) <=
            static_cast<long long>(n_t) * hop)
          end = c;
      }
      if (!end)
        throw ValidationError("no reachable end cell for start cell " +
                              std::to_string(start));
    }
    Trajectory t{spec.first_id + i, std::vector<int>(grid.n_t() + 1)};
    t.positions[0] = start;
    for (int k = 1; k <= n_t; ++k) {
      const int prev = t.positions[k - 1];
      int lo = std::max(0, prev - hop);
      int hi = std::min(n_x - 1, prev + hop);
      const int remaining = n_t - k;
      if (end) {
        const long long reach = static_cast<long long>(hop) * remaining;
        lo = static_cast<int>(std::max<long long>(lo, *end - reach));
        hi = static_cast<int>(std::min<long long>(hi, *end + reach));
      }
      int cell;
      if (spec.walk_sigma > 0.0) {
        double target = prev + spec.walk_sigma * s.normal();
        if (end) target += static_cast<double>(*end - prev) / (remaining + 1);
        cell = static_cast<int>(std::clamp(std::lround(target), static_cast<long>(lo),
                                           static_cast<long>(hi)));
      } else {
        cell = s.integer(lo, hi);
      }
      t.positions[k] = cell;
    }
    const double phase0 =
        spec.source ? std::arg(spec.source->amplitudes[static_cast<std::size_t>(start)])
                    : 0.0;
    members[i] = phase_profile(t, lag, grid, phase0);
  });

  Ensemble e{grid, std::move(members), {}};
  e.provenance.sampler = spec.walk_sigma > 0.0 ? "random-walk" : "uniform-bridge";
  e.provenance.seed = seed;
  std::string c;
  c += spec.start_cell ? "start=" + std::to_string(*spec.start_cell) : "start~|source|^2";
  c += spec.end_cell ? ";end=" + std::to_string(*spec.end_cell)
                     : (spec.end_density ? ";end~|target|^2" : ";end=free");
  c += ";max_hop=" + std::to_string(spec.max_hop > 0 ? spec.max_hop : 0);
  e.provenance.constraints = c;
  return e;
}

// ----------------------------------------------------------- reconstruction

struct Reconstruction {
  WaveFunctionField field;
  std::vector<bool> confident;  // false = masked (occupancy < min_count)
  std::vector<std::size_t> occupancy;

  std::size_t confident_cells() const {
    return static_cast<std::size_t>(std::count(confident.begin(), confident.end(), true));
  }
};

/// |psi_i| = sqrt(occupancy_i / (N dx)); arg psi_i = circular mean of member
/// phases in cell i at `time_index`.
inline Reconstruction reconstruct_wavefunction(const Ensemble& e,
                                               std::size_t time_index,
                                               std::size_t min_count = 1) {
  if (e.empty()) throw ValidationError("cannot reconstruct from an empty ensemble");
  if (time_index > e.grid.n_t()) throw ValidationError("time_index beyond the grid");
  const std::size_t n_x = e.grid.n_x();
  std::vector<double> c(n_x, 0.0), s(n_x, 0.0);
  Reconstruction r{WaveFunctionField::zeros(e.grid, time_index),
                   std::vector<bool>(n_x, false), std::vector<std::size_t>(n_x, 0)};
  for (const auto& m : e.members) {
    const auto cell = static_cast<std::size_t>(m.cell(time_index));
    ++r.occupancy[cell];
    c[cell] += std::cos(m.phases[time_index]);
    s[cell] += std::sin(m.phases[time_index]);
  }
  const double scale = 1.0 / (static_cast<double>(e.size()) * e.grid.dx());
  for (std::size_t i = 0; i < n_x; ++i) {
    if (r.occupancy[i] == 0) continue;
    const double mag = std::sqrt(static_cast<double>(r.occupancy[i]) * scale);
    r.field.amplitudes[i] = std::polar(mag, std::atan2(s[i], c[i]));
    r.confident[i] = r.occupancy[i] >= std::max<std::size_t>(min_count, 1);
  }
  return r;
}

/// Relative L2 distance over confident cells, after rotating `target` by the
/// global phase that best aligns it with the reconstruction.
inline double masked_relative_l2(const Reconstruction& r,
                                 const WaveFunctionField& target) {
  if (!(r.field.grid == target.grid))
    throw ValidationError("reconstruction and target live on different grids");
  Complex overlap{};
  double ref = 0.0;
  for (std::size_t i = 0; i < target.amplitudes.size(); ++i) {
    if (!r.confident[i]) continue;
    overlap += std::conj(target.amplitudes[i]) * r.field.amplitudes[i];
    ref += std::norm(target.amplitudes[i]);
  }
  if (!(ref > 0.0)) throw ValidationError("target vanishes on every confident cell");
  const Complex rot = std::abs(overlap) > 0.0 ? overlap / std::abs(overlap) : Complex{1.0};
  double err = 0.0;
  for (std::size_t i = 0; i < target.amplitudes.size(); ++i)
    if (r.confident[i]) err += std::norm(r.field.amplitudes[i] - rot * target.amplitudes[i]);
  return std::sqrt(err / ref);
}

// ------------------------------------------------------------------ pruning

struct Contribution {
  std::size_t id = 0;
  double phase = 0.0;
  double magnitude = 0.0;

  Complex value() const { return std::polar(magnitude, phase); }
};

struct PruneResult {
  std::vector<Contribution> kept;
  std::vector<std::pair<Contribution, Contribution>> removed;
  double residual_bound = 0.0;  // sum over removed pairs of |z_a + z_b|
};

/// |z_a + z_b| from magnitudes and the phase difference; exactly zero for an
/// equal-magnitude pair whose phases differ by pi.
inline double pair_residual(const Contribution& a, const Contribution& b) {
  const double d = a.magnitude - b.magnitude;
  const double v = d * d + 2.0 * a.magnitude * b.magnitude *
                               (1.0 + std::cos(a.phase - b.phase));
  return std::sqrt(std::max(0.0, v));
}

/// Greedy antipodal pairing.  Contributions are scanned in order of wrapped
/// phase (ties by id); each unmatched one is paired with the unmatched partner
/// closest to antipodal, provided the phase difference is within eps_phase of
/// pi and the magnitudes agree within eps_mag relative to the larger one.
/// Equally good partners are resolved toward the lower id.
inline PruneResult prune_cancelling_pairs(std::vector<Contribution> items,
                                          double eps_phase, double eps_mag) {
  if (!(eps_phase > 0.0 && eps_phase < kPi))
    throw ValidationError("eps_phase must lie in (0, pi)");
  if (!(eps_mag >= 0.0)) throw ValidationError("eps_mag must be >= 0");
  for (const auto& c : items)
    if (!std::isfinite(c.phase) || !(c.magnitude >= 0.0) || !std::isfinite(c.magnitude))
      throw ValidationError("contributions need finite phase and magnitude >= 0");

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> wrapped(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) wrapped[i] = wrap_angle(items[i].phase);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (wrapped[a] != wrapped[b]) return wrapped[a] < wrapped[b];
    return items[a].id < items[b].id;
  });

  std::vector<bool> used(items.size(), false);
  PruneResult r;
  for (std::size_t a : order) {
    if (used[a]) continue;
    std::optional<std::size_t> best;
    double best_gap = 0.0;
    for (std::size_t b = 0; b < items.size(); ++b) {
      if (b == a || used[b]) continue;
      const double gap = kPi - circular_distance(items[a].phase, items[b].phase);
      if (gap > eps_phase) continue;
      const double ma = items[a].magnitude, mb = items[b].magnitude;
      if (std::abs(ma - mb) > eps_mag * std::max(ma, mb)) continue;
      if (!best || gap < best_gap || (gap == best_gap && items[b].id < items[*best].id)) {
        best = b;
        best_gap = gap;
      }
    }
    if (!best) continue;
    used[a] = used[*best] = true;
    r.removed.emplace_back(items[a], items[*best]);
    r.residual_bound += pair_residual(items[a], items[*best]);
  }
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!used[i]) r.kept.push_back(items[i]);
  return r;
}

/// Final-slice contributions grouped by arrival cell: phase = final phase +
/// arg(weight), magnitude = |weight|, id = trajectory id.
inline std::map<int, std::vector<Contribution>> arrival_contributions(const Ensemble& e) {
  std::map<int, std::vector<Contribution>> out;
  const std::size_t k = e.grid.n_t();
  for (const auto& m : e.members)
    out[m.cell(k)].push_back({static_cast<std::size_t>(m.id()),
                              m.phases[k] + std::arg(m.weight), std::abs(m.weight)});
  return out;
}

// ---------------------------------------------------------------- selection

/// Keeps members whose final phase lies within eps (circular) of arg target at
/// their arrival cell.  Cells where |target| falls below amplitude_floor times
/// the peak amplitude are excluded.  eps >= pi keeps everything.
inline Ensemble select_coherent_ensemble(const WaveFunctionField& target,
                                         const Ensemble& paths, double eps,
                                         double amplitude_floor = 1e-3) {
  target.validate();
  if (!(eps > 0.0)) throw ValidationError("selection tolerance must be > 0");
  if (!(target.grid == paths.grid))
    throw ValidationError("target and ensemble live on different grids");
  if (target.time_index != paths.grid.n_t())
    throw ValidationError("target must sit at the ensemble's final slice");
  Ensemble out{paths.grid, {}, paths.provenance};
  out.provenance.sampler = paths.provenance.sampler + "+select";
  if (eps >= kPi) {
    out.members = paths.members;
  } else {
    double peak = 0.0;
    for (const auto& a : target.amplitudes) peak = std::max(peak, std::abs(a));
    const double floor = amplitude_floor * peak;
    const std::size_t k = paths.grid.n_t();
    for (const auto& m : paths.members) {
      const Complex t = target.amplitudes[static_cast<std::size_t>(m.cell(k))];
      if (!(std::abs(t) > floor)) continue;
      if (circular_distance(m.phases[k], std::arg(t)) <= eps) out.members.push_back(m);
    }
  }
  out.provenance.empty_selection = out.members.empty();
  return out;
}

// --------------------------------------------------------------- relaxation

struct RelaxOptions {
  std::size_t max_steps = 1000;
  double initial_step = 0.0;  // <= 0: 1 / (2 * max pairs per member), a curvature bound
  double shrink = 0.5;
  double armijo = 1e-4;
  double gradient_tolerance = 1e-6;
  std::size_t max_backtracks = 60;
};

struct RelaxResult {
  Ensemble ensemble;            // members with offsets applied
  std::vector<double> offsets;  // one per member
  std::vector<double> history;  // smooth measure, initial value first
  std::size_t steps = 0;        // accepted steps
  bool converged = false;       // gradient tolerance reached
};

/// Gradient descent with backtracking line search on the smooth measure,
/// over one constant phase offset per member.
inline RelaxResult relax_coherence(const Ensemble& e, const RelaxOptions& opt = {}) {
  struct Pair {
    std::size_t a, b;
    double delta;  // phase_a - phase_b at the event, before offsets
  };
  std::vector<Pair> pairs;
  for (const auto& ev : detect_intersections(e)) {
    const auto& p = ev.participants;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i + 1; j < p.size(); ++j)
        pairs.push_back({p[i].member, p[j].member, p[i].phase - p[j].phase});
  }
  const std::size_t n = e.size();
  std::vector<double> theta(n, 0.0), grad(n), trial(n);
  double step0 = opt.initial_step;
  if (!(step0 > 0.0)) {
    std::vector<std::size_t> degree(n, 0);
    for (const auto& q : pairs) {
      ++degree[q.a];
      ++degree[q.b];
    }
    const std::size_t dmax = n ? *std::max_element(degree.begin(), degree.end()) : 0;
    step0 = dmax ? 1.0 / (2.0 * static_cast<double>(dmax)) : 1.0;
  }

  auto objective = [&](const std::vector<double>& th) {
    double f = 0.0;
    for (const auto& q : pairs) f += 1.0 - std::cos(q.delta + th[q.a] - th[q.b]);
    return f;
  };
  auto gradient = [&](const std::vector<double>& th) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& q : pairs) {
      const double s = std::sin(q.delta + th[q.a] - th[q.b]);
      grad[q.a] += s;
      grad[q.b] -= s;
    }
    double inf = 0.0, sq = 0.0;
    for (double g : grad) {
      inf = std::max(inf, std::abs(g));
      sq += g * g;
    }
    return std::pair{inf, sq};
  };

  RelaxResult r{e, {}, {}, 0, false};
  double f = objective(theta);
  r.history.push_back(f);
  for (std::size_t step = 0; step < opt.max_steps; ++step) {
    const auto [g_inf, g_sq] = gradient(theta);
    if (g_inf < opt.gradient_tolerance) {
      r.converged = true;
      break;
    }
    double alpha = step0;
    bool accepted = false;
    for (std::size_t bt = 0; bt <= opt.max_backtracks; ++bt, alpha *= opt.shrink) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = theta[i] - alpha * grad[i];
      const double ft = objective(trial);
      if (ft <= f - opt.armijo * alpha * g_sq) {
        theta.swap(trial);
        f = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // line search exhausted; best iterate stands
    r.history.push_back(f);
    ++r.steps;
  }
  if (!r.converged && r.steps < opt.max_steps)
    r.converged = gradient(theta).first < opt.gradient_tolerance;

  for (std::size_t i = 0; i < n; ++i)
    for (auto& p : r.ensemble.members[i].phases) p += theta[i];
  r.offsets = std::move(theta);
  r.ensemble.provenance.sampler = e.provenance.sampler + "+relax";
  return r;
}

}  // namespace trajcoh
