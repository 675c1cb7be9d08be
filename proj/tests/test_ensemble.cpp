#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "trajcoh/ensemble.hpp"
#include "trajcoh/experiments.hpp"

using namespace trajcoh;

namespace {

const SpaceTimeGrid kGrid = make_grid(0, 5, 5, 0, 3, 3);  // 5 cells x 4 slices

PhasedTrajectory member(TrajectoryId id, std::vector<int> cells, std::vector<double> phases) {
  return {{id, std::move(cells)}, std::move(phases), {1.0, 0.0}};
}

// Two lines crossing at slice 2, cell 2, with phases 0 and pi there.
Ensemble crossing() {
  return {kGrid,
          {member(1, {0, 1, 2, 3}, {0, 0, 0, 0}), member(2, {4, 3, 2, 1}, {0, 0, kPi, 0})},
          {}};
}

Ensemble random_ensemble(std::size_t n, unsigned seed, const SpaceTimeGrid& g) {
  std::mt19937_64 rng(seed);
  Ensemble e{g, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    PhasedTrajectory m;
    m.trajectory.id = 1000 + i;
    for (std::size_t k = 0; k <= g.n_t(); ++k) {
      m.trajectory.positions.push_back(static_cast<int>(rng() % g.n_x()));
      m.phases.push_back(std::uniform_real_distribution<double>(-20, 20)(rng));
    }
    e.members.push_back(m);
  }
  return e;
}

// Exhaustive scan of every (slice, cell): the number of co-occupied cells.
std::size_t scan_events(const Ensemble& e) {
  std::size_t count = 0;
  for (std::size_t k = 0; k <= e.grid.n_t(); ++k)
    for (std::size_t c = 0; c < e.grid.n_x(); ++c) {
      int occ = 0;
      for (const auto& m : e.members) occ += m.cell(k) == static_cast<int>(c);
      count += occ >= 2;
    }
  return count;
}

}  // namespace

TEST(Ensemble, RejectsDuplicateIds) {
  Ensemble e{kGrid, {member(1, {0, 1, 2, 3}, {0, 0, 0, 0}), member(1, {0, 0, 0, 0}, {0, 0, 0, 0})},
             {}};
  EXPECT_THROW(e.validate(), ValidationError);
}

TEST(Intersections, SingleTrajectoryHasNone) {
  Ensemble e{kGrid, {member(1, {0, 1, 2, 3}, {0, 0, 0, 0})}, {}};
  EXPECT_TRUE(detect_intersections(e).empty());
}

TEST(Intersections, IdenticalPathsMeetEverySlice) {
  Ensemble e{kGrid,
             {member(1, {0, 1, 2, 3}, {0, 1, 2, 3}), member(2, {0, 1, 2, 3}, {0, 1, 2, 3})},
             {}};
  const auto ev = detect_intersections(e);
  ASSERT_EQ(ev.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(ev[k].time_index, k);
    EXPECT_EQ(ev[k].participants.size(), 2u);
  }
}

TEST(Intersections, CrossingLinesMeetOnce) {
  const auto e = crossing();
  const auto ev = detect_intersections(e);
  ASSERT_EQ(ev.size(), scan_events(e));
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].time_index, 2u);
  EXPECT_EQ(ev[0].cell, 2);
}

TEST(Intersections, MatchExhaustiveScanAndOrdering) {
  const auto g = make_grid(0, 1, 7, 0, 1, 5);
  for (unsigned seed = 0; seed < 20; ++seed) {
    const auto e = random_ensemble(9, seed, g);
    const auto ev = detect_intersections(e);
    EXPECT_EQ(ev.size(), scan_events(e));
    for (std::size_t i = 1; i < ev.size(); ++i)
      EXPECT_TRUE(std::pair(ev[i - 1].time_index, ev[i - 1].cell) <
                  std::pair(ev[i].time_index, ev[i].cell));
    for (const auto& x : ev)
      for (const auto& p : x.participants)
        EXPECT_EQ(e.members[p.member].cell(x.time_index), x.cell);
  }
}

TEST(Decoherence, SingleTrajectoryIsZero) {
  Ensemble e{kGrid, {member(1, {0, 1, 2, 3}, {0, 5, 1, 2})}, {}};
  const auto r = decoherence_measure(e);
  EXPECT_EQ(r.raw_measure, 0.0);
  EXPECT_EQ(r.smooth_measure, 0.0);
}

TEST(Decoherence, OppositePhasesAtOneCrossing) {
  const auto r = decoherence_measure(crossing());
  EXPECT_NEAR(r.raw_measure, kPi, 1e-15);
  EXPECT_NEAR(r.smooth_measure, 2.0, 1e-15);
  ASSERT_EQ(r.per_event.size(), 1u);
  EXPECT_NEAR(r.per_event[0].circular_variance, 1.0, 1e-15);
}

TEST(Decoherence, PairwiseSumMatchesDirectEvaluation) {
  const auto g = make_grid(0, 1, 4, 0, 1, 3);
  const auto e = random_ensemble(12, 3, g);
  const auto r = decoherence_measure(e);
  double raw = 0, smooth = 0;
  for (std::size_t k = 0; k <= g.n_t(); ++k)
    for (std::size_t a = 0; a < e.size(); ++a)
      for (std::size_t b = a + 1; b < e.size(); ++b)
        if (e.members[a].cell(k) == e.members[b].cell(k)) {
          const double d = std::abs(e.members[a].phases[k] - e.members[b].phases[k]);
          const double w = d - kTwoPi * std::floor(d / kTwoPi);
          raw += std::min(w, kTwoPi - w);
          smooth += 1 - std::cos(d);
        }
  EXPECT_NEAR(r.raw_measure, raw, 1e-10 * raw);
  EXPECT_NEAR(r.smooth_measure, smooth, 1e-10 * smooth);
}

TEST(Decoherence, ZeroExactlyWhenColocatedPhasesAgree) {
  Ensemble e{kGrid,
             {member(1, {0, 1, 2, 3}, {0, 0, 1, 0}), member(2, {4, 3, 2, 1}, {0, 0, 1 + 4 * kPi, 0})},
             {}};
  const auto r = decoherence_measure(e);
  EXPECT_NEAR(r.raw_measure, 0.0, 1e-14);
  EXPECT_NEAR(r.smooth_measure, 0.0, 1e-14);
}

TEST(Decoherence, GaugeAndPermutationInvariant) {
  const auto g = make_grid(0, 1, 6, 0, 1, 4);
  const auto e = random_ensemble(40, 8, g);
  const auto base = decoherence_measure(e);
  for (double c : {0.1, -2.7, 1e2, kPi}) {
    const auto r = decoherence_measure(shift_phases(e, c));
    EXPECT_NEAR(r.raw_measure, base.raw_measure, 1e-12 * base.raw_measure);
    EXPECT_NEAR(r.smooth_measure, base.smooth_measure, 1e-12 * base.smooth_measure);
  }
  auto shuffled = e;
  std::shuffle(shuffled.members.begin(), shuffled.members.end(), std::mt19937(4));
  const auto r = decoherence_measure(shuffled);
  EXPECT_EQ(r.raw_measure, base.raw_measure);
  EXPECT_EQ(r.smooth_measure, base.smooth_measure);
}

TEST(Coherent, EmptyAndSingletonAreVacuouslyCoherent) {
  EXPECT_TRUE(is_coherent({kGrid, {}, {}}, 0.1));
  EXPECT_TRUE(is_coherent({kGrid, {member(1, {0, 1, 2, 3}, {0, 0, 0, 0})}, {}}, 0.1));
  EXPECT_THROW(is_coherent({kGrid, {}, {}}, 0.0), ValidationError);
}

TEST(Coherent, CrossingIsIncoherentUntilShifted) {
  auto e = crossing();
  EXPECT_FALSE(is_coherent(e, 0.1));
  for (auto& p : e.members[0].phases) p += kPi;
  EXPECT_TRUE(is_coherent(e, 1e-9));
}

TEST(Sample, SingleFixedPathIsDeterministic) {
  const auto g = make_grid(-2, 2, 16, 0, 1, 6);
  SampleSpec spec;
  spec.start_cell = 5;
  spec.end_cell = 5;
  const auto a = sample_paths(spec, 1, 42, {}, g);
  const auto b = sample_paths(spec, 1, 42, {}, g);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.members[0].trajectory, b.members[0].trajectory);
  EXPECT_EQ(a.members[0].phases, b.members[0].phases);
  EXPECT_EQ(a.members[0].cell(0), 5);
  EXPECT_EQ(a.members[0].cell(6), 5);
}

TEST(Sample, RejectsEmptyAndImpossibleRequests) {
  const auto g = make_grid(-2, 2, 16, 0, 1, 3);
  SampleSpec spec;
  spec.start_cell = 0;
  EXPECT_THROW(sample_paths(spec, 0, 1, {}, g), ValidationError);
  spec.end_cell = 15;
  spec.max_hop = 4;
  EXPECT_THROW(sample_paths(spec, 5, 1, {}, g), ValidationError);
  spec.max_hop = 5;
  const auto e = sample_paths(spec, 50, 1, {}, g);
  for (const auto& m : e.members) EXPECT_NO_THROW(validate_trajectory(m.trajectory, g, 5));
}

TEST(Sample, StartHistogramFitsSourceDensity) {
  const auto g = make_grid(-6, 6, 96, 0, 1, 4);
  SampleSpec spec;
  spec.source = gaussian_packet(g, 0.4, 1.1, 0.8);
  spec.walk_sigma = 2.0;
  const auto e = sample_paths(spec, 10000, 9, {}, g);
  std::vector<std::uint64_t> counts(g.n_x(), 0);
  for (const auto& m : e.members) ++counts[m.cell(0)];
  std::vector<double> p(g.n_x());
  for (std::size_t i = 0; i < g.n_x(); ++i) p[i] = std::norm(spec.source->amplitudes[i]);
  EXPECT_TRUE(chi_square_fit(counts, p, 0.01).pass);
  for (const auto& m : e.members)
    EXPECT_NEAR(m.phases[0], std::arg(spec.source->amplitudes[m.cell(0)]), 1e-15);
}

TEST(Sample, IndependentOfWorkerCount) {
  const auto g = make_grid(-6, 6, 64, 0, 1, 5);
  SampleSpec spec;
  spec.source = gaussian_packet(g, 0, 1, 0);
  spec.end_density = gaussian_packet(g, 0.5, 1.5, 0);
  const auto a = sample_paths(spec, 777, 3, {}, g);
  spec.workers = 4;
  const auto b = sample_paths(spec, 777, 3, {}, g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.members[i].trajectory, b.members[i].trajectory);
    EXPECT_EQ(a.members[i].phases, b.members[i].phases);
  }
}

TEST(Reconstruct, IdenticalMembers) {
  Ensemble e{kGrid, {}, {}};
  for (TrajectoryId i = 0; i < 7; ++i) e.members.push_back(member(i, {0, 1, 2, 3}, {0, 0, 0.8, 0}));
  const auto r = reconstruct_wavefunction(e, 2);
  EXPECT_NEAR(std::abs(r.field.amplitudes[2]), std::sqrt(1.0 / kGrid.dx()), 1e-15);
  EXPECT_NEAR(std::arg(r.field.amplitudes[2]), 0.8, 1e-15);
  for (int c : {0, 1, 3, 4}) {
    EXPECT_FALSE(r.confident[c]);
    EXPECT_EQ(r.field.amplitudes[c], Complex{});
  }
}

TEST(Reconstruct, EmptyEnsembleIsAnError) {
  EXPECT_THROW(reconstruct_wavefunction({kGrid, {}, {}}, 0), ValidationError);
}

TEST(Reconstruct, ConvergesToGeneratingField) {
  const auto g = make_grid(-5, 5, 64, 0, 1, 1);
  SampleSpec spec;
  spec.source = gaussian_packet(g, 0.3, 1.0, 1.7);
  const auto e = sample_paths(spec, 100000, 5, {}, g);
  const auto r = reconstruct_wavefunction(e, 0, 5);
  EXPECT_LE(masked_relative_l2(r, *spec.source), 0.05);
  // Global phase is irrelevant.
  auto rotated = *spec.source;
  for (auto& z : rotated.amplitudes) z *= std::polar(1.0, 2.1);
  EXPECT_NEAR(masked_relative_l2(r, rotated), masked_relative_l2(r, *spec.source), 1e-12);
}

TEST(Prune, ExactAntipodesCancel) {
  const auto r = prune_cancelling_pairs({{0, 0.0, 1.0}, {1, kPi, 1.0}}, 0.1, 0.0);
  EXPECT_EQ(r.removed.size(), 1u);
  EXPECT_TRUE(r.kept.empty());
  EXPECT_EQ(r.residual_bound, 0.0);
}

TEST(Prune, EqualPhasesStay) {
  std::vector<Contribution> c;
  for (std::size_t i = 0; i < 6; ++i) c.push_back({i, 0.4, 1.0 + i});
  const auto r = prune_cancelling_pairs(c, 0.5, 10.0);
  EXPECT_TRUE(r.removed.empty());
  EXPECT_EQ(r.kept.size(), 6u);
}

TEST(Prune, ResidualBoundCoversBruteForceResummation) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ph(-10, 10), mag(0.5, 1.5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 7;
    std::vector<Contribution> c;
    for (std::size_t i = 0; i < n; ++i) c.push_back({i, ph(rng), mag(rng)});
    const auto r = prune_cancelling_pairs(c, 0.8, 0.6);
    Complex before{}, after{}, removed{};
    double scale = 0;
    for (const auto& x : c) {
      before += std::polar(x.magnitude, x.phase);
      scale += x.magnitude;
    }
    for (const auto& x : r.kept) after += std::polar(x.magnitude, x.phase);
    for (const auto& [a, b] : r.removed)
      removed += std::polar(a.magnitude, a.phase) + std::polar(b.magnitude, b.phase);
    const double slack = 64 * std::numeric_limits<double>::epsilon() * scale;
    EXPECT_LE(std::abs(removed), r.residual_bound + slack);
    EXPECT_LE(std::abs(after - before), r.residual_bound + slack);
    EXPECT_EQ(r.kept.size() + 2 * r.removed.size(), n);
    for (const auto& [a, b] : r.removed) {
      EXPECT_GE(circular_distance(a.phase, b.phase), kPi - 0.8);
      EXPECT_LE(std::abs(a.magnitude - b.magnitude), 0.6 * std::max(a.magnitude, b.magnitude));
    }
  }
}

TEST(Prune, ScanPrefersClosestAntipodeThenLowerId) {
  // Id 7 is scanned first; ids 5 and 2 are equally antipodal to it and id 2
  // wins the tie.  Id 9 is further from antipodal.
  const auto r = prune_cancelling_pairs(
      {{7, 0.0, 1.0}, {5, kPi, 1.0}, {2, kPi, 1.0}, {9, kPi - 0.2, 1.0}}, 0.3, 0.0);
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].first.id, 7u);
  EXPECT_EQ(r.removed[0].second.id, 2u);
  ASSERT_EQ(r.kept.size(), 2u);
}

TEST(Prune, RejectsBadTolerances) {
  EXPECT_THROW(prune_cancelling_pairs({}, 0.0, 0.1), ValidationError);
  EXPECT_THROW(prune_cancelling_pairs({}, kPi, 0.1), ValidationError);
  EXPECT_THROW(prune_cancelling_pairs({}, 0.1, -1.0), ValidationError);
}

TEST(Select, KeepsMembersInPhaseWithTarget) {
  auto target = WaveFunctionField::zeros(kGrid, 3);
  for (std::size_t i = 0; i < 5; ++i) target.amplitudes[i] = std::polar(1.0, 0.3 * i);
  Ensemble e{kGrid, {}, {}};
  for (TrajectoryId i = 0; i < 5; ++i)
    e.members.push_back(member(i, {0, 1, 2, static_cast<int>(i)}, {0, 0, 0, 0.3 * i + 8 * kPi}));
  EXPECT_EQ(select_coherent_ensemble(target, e, 1e-9).size(), 5u);
}

TEST(Select, DropsTheOppositeMember) {
  auto target = WaveFunctionField::zeros(kGrid, 3);
  for (auto& a : target.amplitudes) a = 1.0;
  Ensemble e{kGrid,
             {member(1, {0, 1, 2, 3}, {0, 0, 0, 0}), member(2, {4, 3, 2, 3}, {0, 0, 0, kPi})},
             {}};
  const auto s = select_coherent_ensemble(target, e, 0.1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.members[0].id(), 1u);
  EXPECT_FALSE(s.provenance.empty_selection);
}

TEST(Select, EmptySelectionIsFlagged) {
  auto target = WaveFunctionField::zeros(kGrid, 3);
  for (auto& a : target.amplitudes) a = 1.0;
  Ensemble e{kGrid, {member(2, {4, 3, 2, 3}, {0, 0, 0, kPi})}, {}};
  const auto s = select_coherent_ensemble(target, e, 0.1);
  EXPECT_TRUE(s.empty());
  EXPECT_TRUE(s.provenance.empty_selection);
}

TEST(Select, FinalSliceCoherentWithinTwoEpsilon) {
  const auto g = make_grid(-4, 4, 24, 0, 1, 3);
  auto target = gaussian_packet(g, 0, 1, 1.3);
  target.time_index = 3;
  const auto e = random_ensemble(400, 17, g);
  const double eps = 0.3;
  const auto s = select_coherent_ensemble(target, e, eps);
  EXPECT_TRUE(is_coherent(s, 2 * eps, g.n_t()));
}

TEST(Select, RequiresAlignedFinalSlice) {
  auto target = WaveFunctionField::zeros(kGrid, 1);
  EXPECT_THROW(select_coherent_ensemble(target, crossing(), 0.1), ValidationError);
}

TEST(Relax, CoherentEnsembleIsAFixedPoint) {
  Ensemble e{kGrid,
             {member(1, {0, 1, 2, 3}, {0, 0, 1, 0}), member(2, {4, 3, 2, 1}, {0, 0, 1, 0})},
             {}};
  const auto r = relax_coherence(e);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.steps, 0u);
  for (double o : r.offsets) EXPECT_EQ(o, 0.0);
}

TEST(Relax, TwoPathsMeetAtTheCircularMean) {
  Ensemble e{kGrid,
             {member(1, {0, 1, 2, 3}, {0, 0, 0, 0}), member(2, {4, 3, 2, 1}, {0, 0, 1, 0})},
             {}};
  const auto r = relax_coherence(e);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.ensemble.members[0].phases[2], 0.5, 1e-6);
  EXPECT_NEAR(r.ensemble.members[1].phases[2], 0.5, 1e-6);
  EXPECT_LT(r.history.back(), 1e-12);
}

TEST(Relax, HistoryNeverIncreases) {
  const auto g = make_grid(0, 1, 10, 0, 1, 6);
  const auto e = random_ensemble(100, 12, g);
  const auto r = relax_coherence(e, {200});
  ASSERT_GE(r.history.size(), 2u);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
  EXPECT_LE(decoherence_measure(r.ensemble).raw_measure, decoherence_measure(e).raw_measure);
  EXPECT_NEAR(decoherence_measure(r.ensemble).smooth_measure, r.history.back(),
              1e-9 * r.history.front());
}
