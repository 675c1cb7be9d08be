// Acceptance runner.  `trajcoh_acceptance N` checks criterion N (1-8) and
// prints one [PASS]/[FAIL] line; with no argument every criterion runs.
// Exit status is 0 only when every requested criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "trajcoh/cli.hpp"
#include "trajcoh/config.hpp"
#include "trajcoh/ensemble.hpp"
#include "trajcoh/experiments.hpp"
#include "trajcoh/io.hpp"
#include "trajcoh/propagators.hpp"

using namespace trajcoh;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string config_path(const char* name) {
  return std::string(TRAJCOH_CONFIG_DIR) + "/" + name;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Path sum, Crank-Nicolson and the exact free kernel agree pairwise on the
//    default lattice, within 30 s.
Verdict oracle_triangle() {
  const auto cfg = load_config(config_path("default.cfg"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto psi0 = cfg.initial_packet();
  const auto ps = pathsum_propagate(psi0, cfg.lagrangian(), cfg.grid());
  const auto cn = schrodinger_propagate(psi0, cfg.lagrangian(), cfg.grid());
  const auto fk = free_kernel_propagate(psi0, cfg.grid(), cfg.constants);
  const double secs = seconds_since(t0);
  const double e1 = relative_l2(ps, cn), e2 = relative_l2(ps, fk), e3 = relative_l2(cn, fk);
  const double worst = std::max({e1, e2, e3});
  return {worst <= 1e-2 && secs <= 30.0,
          "pathsum-cn " + num(e1) + ", pathsum-kernel " + num(e2) + ", cn-kernel " + num(e3) +
              " (limit 1e-2), " + num(secs) + " s (limit 30 s)"};
}

// 2. Exhaustive enumeration of every lattice path reproduces the path sum.
Verdict brute_force() {
  double worst = 0.0;
  std::size_t grids = 0;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int n_x = 2; n_x <= 5; ++n_x)
    for (int n_t = 1; n_t <= 4; ++n_t) {
      const auto g = make_grid(-1.0, 1.5, n_x, 0, 0.7, n_t);
      BarrierPotential barrier{std::vector<double>(n_x), 0.2, 0.5};
      for (int i = 0; i < n_x; ++i) barrier.values[i] = 0.3 * i * i - 0.5;
      const LagrangianSpec lags[] = {{{}, FreePotential{}},
                                     {{}, HarmonicPotential{1.7}},
                                     {{}, barrier}};
      for (const auto& lag : lags) {
        auto psi0 = WaveFunctionField::zeros(g);
        for (auto& a : psi0.amplitudes) a = {nd(rng), nd(rng)};
        const auto ps = pathsum_propagate(psi0, lag, g);
        const Complex c = pathsum_normalization(lag.constants, g).value();
        std::vector<Complex> sum(n_x);
        oracle::for_each_path(n_x, n_t + 1, [&](const std::vector<int>& p) {
          const auto pt = phase_profile({0, p}, lag, g, 0.0);
          sum[p.back()] +=
              std::pow(c, n_t) * std::polar(1.0, pt.final_phase()) * psi0.amplitudes[p.front()];
        });
        worst = std::max(worst, oracle::l2(sum, ps.amplitudes) / oracle::l2(sum));
        ++grids;
      }
    }
  return {worst <= 1e-12,
          std::to_string(grids) + " grid/potential cases, worst relative L2 " + num(worst) +
              " (limit 1e-12)"};
}

// 3. Selecting the in-phase members of a sampled ensemble rebuilds the
//    path-sum wave function and lowers final-slice decoherence.
Verdict coherent_selection() {
  const auto cfg = load_config(config_path("selection.cfg"));
  const auto target = pathsum_target(cfg);
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = run_selection(cfg, target, seed);
    const bool ok = !s.empty_selection && s.recon_pass && s.raw_after < s.raw_before;
    pass = pass && ok;
    detail += "seed " + std::to_string(seed) + ": " + std::to_string(s.selected) + "/" +
              std::to_string(s.sampled) + " kept, L2 " + num(s.recon_error_selected) +
              ", raw " + num(s.raw_before) + " -> " + num(s.raw_after) + "; ";
  }
  return {pass, detail + "limit L2 " + num(cfg.run.recon_tolerance)};
}

// 4. The reported residual bound covers the actual change in the sum.
Verdict pruning() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ph(-kPi, kPi), mag(0.1, 2.0), eps(0.05, 1.0);
  std::size_t removed = 0;
  double worst_ratio = 0.0;
  bool pass = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 1000;
    std::vector<Contribution> c;
    for (std::size_t i = 0; i < n; ++i) {
      // Half the entries get an exact antipode of equal magnitude.
      if (i % 2 == 1 && rng() % 2 == 0) c.push_back({i, c.back().phase + kPi, c.back().magnitude});
      else c.push_back({i, ph(rng), mag(rng)});
    }
    const auto r = prune_cancelling_pairs(c, eps(rng), 0.5);
    Complex before{}, after{};
    double scale = 0.0;
    for (const auto& x : c) {
      before += x.value();
      scale += x.magnitude;
    }
    for (const auto& x : r.kept) after += x.value();
    const double change = std::abs(after - before);
    const double slack = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    if (change > r.residual_bound + slack) pass = false;
    if (r.residual_bound > 0) worst_ratio = std::max(worst_ratio, change / r.residual_bound);
    removed += r.removed.size();
  }
  // Exact antipodes always go, with nothing left over.
  std::size_t antipode_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = ph(rng), m = mag(rng);
    const auto r = prune_cancelling_pairs({{0, a, m}, {1, a + kPi, m}}, 1e-3, 0.0);
    if (r.removed.size() != 1 || !r.kept.empty() || r.residual_bound != 0.0) pass = false;
    else ++antipode_cases;
  }
  return {pass, "100 random sets, " + std::to_string(removed) +
                    " pairs removed, max change/bound " + num(worst_ratio) + "; " +
                    std::to_string(antipode_cases) + "/100 exact antipode pairs removed with zero residual"};
}

// 5. Relaxation never increases the smooth measure and solves the two-path
//    case exactly.
Verdict relaxation() {
  bool pass = true;
  std::size_t accepted = 0;
  const auto g = make_grid(0, 1, 10, 0, 1, 6);
  for (unsigned seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ph(-kPi, kPi);
    Ensemble e{g, {}, {}};
    for (std::size_t i = 0; i < 60; ++i) {
      PhasedTrajectory m;
      m.trajectory.id = i;
      for (std::size_t k = 0; k <= g.n_t(); ++k) {
        m.trajectory.positions.push_back(static_cast<int>(rng() % g.n_x()));
        m.phases.push_back(ph(rng));
      }
      e.members.push_back(std::move(m));
    }
    const auto r = relax_coherence(e, {300});
    for (std::size_t i = 1; i < r.history.size(); ++i)
      if (r.history[i] > r.history[i - 1]) pass = false;
    accepted += r.steps;
  }
  const auto g2 = make_grid(0, 5, 5, 0, 3, 3);
  const double a = 0.3, b = 1.9;
  Ensemble two{g2,
               {{{1, {0, 1, 2, 3}}, {0, 0, a, 0}, {1, 0}},
                {{2, {4, 3, 2, 1}}, {0, 0, b, 0}, {1, 0}}},
               {}};
  const auto r = relax_coherence(two);
  const double mean = circular_moments(std::vector<double>{a, b}).mean;
  const double d1 = circular_distance(r.ensemble.members[0].phases[2], mean);
  const double d2 = circular_distance(r.ensemble.members[1].phases[2], mean);
  const bool two_ok = r.converged && d1 <= 1e-6 && d2 <= 1e-6;
  return {pass && two_ok, "10 ensembles, " + std::to_string(accepted) +
                              " accepted steps, history monotone: " + (pass ? "yes" : "no") +
                              "; two-path distance to circular mean " + num(std::max(d1, d2)) +
                              " (limit 1e-6)"};
}

// 6. Double-slit symmetry, contrast, fringe spacing and shot statistics.
Verdict double_slit() {
  const auto cfg = load_config(config_path("double_slit.cfg"));
  const auto two = run_double_slit(cfg);
  auto single_cfg = cfg;
  single_cfg.slits.half_width1 = 0.0;
  const auto one = run_double_slit(single_cfg);
  const double spacing_err = std::abs(two.fringes.measured_spacing - two.fringes.predicted_spacing) /
                             two.fringes.predicted_spacing;
  const bool pass = two.asymmetry <= 1e-10 && two.fringes.visibility >= 0.6 &&
                    one.fringes.visibility <= 0.2 && spacing_err <= 0.1 && two.fit.pass;
  return {pass, "asymmetry " + num(two.asymmetry) + ", visibility " +
                    num(two.fringes.visibility) + " (two slits) / " +
                    num(one.fringes.visibility) + " (one slit), spacing " +
                    num(two.fringes.measured_spacing) + " vs " +
                    num(two.fringes.predicted_spacing) + ", fit p " + num(two.fit.p_value) +
                    " over " + std::to_string(two.fit.bins) + " bins"};
}

// 7. Crank-Nicolson keeps the norm; coherence measures ignore a global phase.
Verdict conservation_and_gauge() {
  double worst_drift = 0.0;
  const LagrangianSpec lags[] = {{{}, FreePotential{}}, {{}, HarmonicPotential{1.0}}};
  for (const auto& lag : lags) {
    const auto g = make_grid(-8, 8, 256, 0, 5, 1000);
    const auto psi0 = gaussian_packet(g, 0.5, 1, 1);
    const auto out = schrodinger_propagate(psi0, lag, g);
    worst_drift = std::max(worst_drift, std::abs(norm_squared(out) - norm_squared(psi0)));
  }
  const auto cfg = load_config(config_path("selection.cfg"));
  const auto e = sample_bridges(cfg, pathsum_target(cfg), 5);
  const auto base = decoherence_measure(e);
  double worst_gauge = 0.0, worst_total = 0.0;
  bool same_verdict = true;
  for (double shift : {0.7, -2.9, 12.5}) {
    const auto s = shift_phases(e, shift);
    const auto r = decoherence_measure(s);
    worst_total = std::max({worst_total,
                            std::abs(r.raw_measure - base.raw_measure) / base.raw_measure,
                            std::abs(r.smooth_measure - base.smooth_measure) / base.smooth_measure});
    for (std::size_t i = 0; i < r.per_event.size(); ++i) {
      const auto& a = r.per_event[i];
      const auto& b = base.per_event[i];
      const double k = static_cast<double>(base.events[i].participants.size());
      const double pairs = 0.5 * k * (k - 1.0);
      worst_gauge = std::max({worst_gauge, std::abs(a.raw - b.raw) / pairs,
                              std::abs(a.smooth - b.smooth) / pairs,
                              std::abs(a.circular_variance - b.circular_variance)});
    }
    same_verdict = same_verdict && is_coherent(s, 1.0) == is_coherent(e, 1.0) &&
                   r.events.size() == base.events.size();
  }
  // Shifting a phase near 250 rounds it by ~3e-14, so event sums over up to
  // ~10^6 pairs are held to 1e-12 per pair and the totals to 1e-12 relative.
  const bool pass =
      worst_drift < 1e-10 && worst_gauge <= 1e-12 && worst_total <= 1e-12 && same_verdict;
  return {pass, "norm drift over 1000 steps " + num(worst_drift) +
                    " (limit 1e-10); gauge change per pair " + num(worst_gauge) + " over " +
                    std::to_string(base.events.size()) + " events, relative total change " +
                    num(worst_total) + " (limit 1e-12)"};
}

// 8. Same config and seed give byte-identical files across runs and worker
//    counts.
Verdict determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("trajcoh_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto run = [&](std::vector<std::string> args, const std::string& tag) {
    std::vector<const char*> argv{"trajcoh"};
    for (auto& a : args) {
      if (a == "@") a = (dir / tag).string();
      argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return std::pair{code, read_text_file((dir / tag).string())};
  };
  struct Job {
    std::string name;
    std::vector<std::string> args;
  };
  const std::string sel = config_path("selection.cfg"), ds = config_path("double_slit.cfg");
  const Job jobs[] = {
      {"propagate", {"propagate", "--config", sel, "--out", "@"}},
      {"sample", {"sample", "--config", sel, "--seed", "3", "--out", "@"}},
      {"double-slit", {"double-slit", "--config", ds, "--seed", "9", "--format", "csv", "--out", "@"}},
  };
  bool pass = true;
  std::string detail;
  for (const auto& j : jobs) {
    std::vector<std::string> outputs;
    int bad = 0;
    for (const char* workers : {"1", "1", "4", "0"}) {
      auto args = j.args;
      args.insert(args.end(), {"--workers", workers});
      const auto [code, text] = run(args, j.name + "_" + std::to_string(outputs.size()));
      if (code != 0) ++bad;
      outputs.push_back(text);
    }
    bool same = bad == 0 && !outputs[0].empty();
    for (const auto& o : outputs) same = same && o == outputs[0];
    pass = pass && same;
    detail += j.name + " " + (same ? "identical" : "DIFFERS") + " (" +
              std::to_string(outputs[0].size()) + " bytes); ";
  }
  fs::remove_all(dir);
  return {pass, detail + "runs at workers 1, 1, 4, all cores"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::function<Verdict()> checks[] = {oracle_triangle, brute_force,  coherent_selection,
                                             pruning,         relaxation,   double_slit,
                                             conservation_and_gauge, determinism};
  const char* names[] = {"oracle triangle",   "brute-force equivalence", "coherent selection",
                         "pruning soundness", "relaxation",              "double slit",
                         "conservation and gauge", "determinism"};
  std::vector<int> which;
  if (argc < 2) {
    for (int i = 1; i <= 8; ++i) which.push_back(i);
  } else {
    for (int i = 1; i < argc; ++i) {
      const int k = std::atoi(argv[i]);
      if (k < 1 || k > 8) {
        std::fprintf(stderr, "usage: %s [1-8 ...]\n", argv[0]);
        return 1;
      }
      which.push_back(k);
    }
  }
  bool all = true;
  for (int k : which) {
    Verdict v;
    try {
      v = checks[k - 1]();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    all = all && v.pass;
    std::printf("[%s] criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", k, names[k - 1],
                v.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
