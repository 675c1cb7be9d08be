#pragma once

// Config-driven experiments: the one-by-one double slit and the oracle
// comparison pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "trajcoh/config.hpp"
#include "trajcoh/ensemble.hpp"
#include "trajcoh/io.hpp"
#include "trajcoh/parallel.hpp"
#include "trajcoh/propagators.hpp"
#include "trajcoh/rng.hpp"

namespace trajcoh {

// ------------------------------------------------------------ arrivals

struct ArrivalHistogram {
  std::vector<double> edges;           // n_x + 1 screen cell boundaries
  std::vector<std::uint64_t> counts;   // one per screen cell
  std::uint64_t shots = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Draws `shots` independent arrivals from |psi|^2 dx.  Shots are generated
/// in fixed-size blocks, each with its own stream, so the histogram does not
/// depend on `workers`.
inline ArrivalHistogram sample_arrivals(const WaveFunctionField& psi,
                                        std::uint64_t shots, std::uint64_t seed,
                                        unsigned workers = 1) {
  if (shots < 1) throw ValidationError("shots must be >= 1");
  psi.validate();
  std::vector<double> w(psi.amplitudes.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::norm(psi.amplitudes[i]);
  const Categorical dist(w);

  constexpr std::uint64_t kBlock = 4096;
  const std::uint64_t blocks = (shots + kBlock - 1) / kBlock;
  std::vector<std::vector<std::uint64_t>> partial(
      blocks, std::vector<std::uint64_t>(w.size(), 0));
  parallel_for(blocks, workers, [&](std::size_t b) {
    Stream s(seed, b);
    const std::uint64_t n = std::min<std::uint64_t>(kBlock, shots - b * kBlock);
    for (std::uint64_t i = 0; i < n; ++i) ++partial[b][dist.draw(s)];
  });

  ArrivalHistogram h;
  h.shots = shots;
  h.seed = seed;
  h.counts.assign(w.size(), 0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < p.size(); ++i) h.counts[i] += p[i];
  const auto& g = psi.grid;
  h.edges.resize(g.n_x() + 1);
  for (std::size_t i = 0; i <= g.n_x(); ++i)
    h.edges[i] = g.x_min() + static_cast<double>(i) * g.dx();
  return h;
}

struct GoodnessOfFit {
  double statistic = 0.0;
  std::size_t bins = 0;  // after merging
  std::size_t dof = 0;
  double p_value = 1.0;
  bool pass = true;
};

/// Pearson chi-square of counts against expected probabilities.  Adjacent
/// bins are merged left to right until each expects at least `min_expected`.
inline GoodnessOfFit chi_square_fit(const std::vector<std::uint64_t>& counts,
                                    const std::vector<double>& probabilities,
                                    double significance, double min_expected = 5.0) {
  if (counts.size() != probabilities.size())
    throw ValidationError("chi_square_fit: size mismatch");
  double total_p = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    total_p += probabilities[i];
    n += counts[i];
  }
  if (!(total_p > 0.0) || n == 0) throw ValidationError("chi_square_fit: empty input");
  std::vector<double> exp_b, obs_b;
  double e = 0.0, o = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    e += static_cast<double>(n) * probabilities[i] / total_p;
    o += static_cast<double>(counts[i]);
    if (e >= min_expected) {
      exp_b.push_back(e);
      obs_b.push_back(o);
      e = o = 0.0;
    }
  }
  if (e > 0.0 || o > 0.0) {
    if (exp_b.empty()) {
      exp_b.push_back(e);
      obs_b.push_back(o);
    } else {
      exp_b.back() += e;
      obs_b.back() += o;
    }
  }
  GoodnessOfFit g;
  g.bins = exp_b.size();
  for (std::size_t i = 0; i < exp_b.size(); ++i) {
    const double d = obs_b[i] - exp_b[i];
    g.statistic += d * d / exp_b[i];
  }
  if (g.bins < 2) return g;  // a single bin always fits
  g.dof = g.bins - 1;
  boost::math::chi_squared dist(static_cast<double>(g.dof));
  g.p_value = boost::math::cdf(boost::math::complement(dist, g.statistic));
  g.pass = g.p_value >= significance;
  return g;
}

// ------------------------------------------------------------ fringes

struct FringeReport {
  double center = 0.0;
  double predicted_spacing = 0.0;  // lambda L / d = 2 pi hbar tau / (m d)
  double measured_spacing = 0.0;   // mean gap of central intensity peaks
  std::vector<double> peaks;       // peak positions in the central region
  double visibility = 0.0;         // over |x - center| <= predicted_spacing
};

/// I = |psi|^2 analysis.  Peaks are local maxima of I smoothed over a tenth
/// of the predicted spacing, above 5% of the central maximum, at least half a
/// predicted spacing apart (the higher one wins), searched within three
/// predicted spacings of the center.
inline FringeReport analyze_fringes(const WaveFunctionField& psi, double center,
                                    double predicted_spacing) {
  const auto& g = psi.grid;
  const std::size_t n = g.n_x();
  std::vector<double> I(n);
  for (std::size_t i = 0; i < n; ++i) I[i] = std::norm(psi.amplitudes[i]);

  FringeReport f;
  f.center = center;
  f.predicted_spacing = predicted_spacing;

  double i_max = 0.0, i_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(g.x(i) - center) <= predicted_spacing) {
      i_max = std::max(i_max, I[i]);
      i_min = std::min(i_min, I[i]);
    }
  if (i_max > 0.0) f.visibility = (i_max - i_min) / (i_max + i_min);

  const auto h = static_cast<std::ptrdiff_t>(std::lround(0.05 * predicted_spacing / g.dx()));
  std::vector<double> S(n, 0.0);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    double acc = 0.0;
    std::ptrdiff_t cnt = 0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - h);
         j <= std::min<std::ptrdiff_t>(sn - 1, i + h); ++j, ++cnt)
      acc += I[static_cast<std::size_t>(j)];
    S[static_cast<std::size_t>(i)] = acc / static_cast<double>(cnt);
  }
  double s_max = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(g.x(i) - center) <= predicted_spacing) s_max = std::max(s_max, S[i]);

  struct Peak {
    double x, height;
  };
  std::vector<Peak> found;
  const double reach = 3.0 * predicted_spacing;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (std::abs(g.x(i) - center) > reach) continue;
    if (!(S[i] > S[i - 1] && S[i] >= S[i + 1]) || S[i] < 0.05 * s_max) continue;
    const double denom = S[i - 1] - 2.0 * S[i] + S[i + 1];
    const double shift = denom != 0.0 ? 0.5 * (S[i - 1] - S[i + 1]) / denom : 0.0;
    const Peak p{g.x(i) + shift * g.dx(), S[i]};
    if (!found.empty() && p.x - found.back().x < 0.5 * predicted_spacing) {
      if (p.height > found.back().height) found.back() = p;
      continue;
    }
    found.push_back(p);
  }
  for (const auto& p : found) f.peaks.push_back(p.x);
  if (f.peaks.size() >= 2)
    f.measured_spacing = (f.peaks.back() - f.peaks.front()) /
                         static_cast<double>(f.peaks.size() - 1);
  return f;
}

struct DoubleSlitResult {
  WaveFunctionField screen;
  ArrivalHistogram histogram;
  FringeReport fringes;
  GoodnessOfFit fit;
  double asymmetry = 0.0;  // max | |psi(c + u)| - |psi(c - u)| |, mirror about the grid center
  double lattice_correction = 1.0;
};

inline double mirror_asymmetry(const WaveFunctionField& psi) {
  const std::size_t n = psi.amplitudes.size();
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    a = std::max(a, std::abs(std::abs(psi.amplitudes[i]) -
                             std::abs(psi.amplitudes[n - 1 - i])));
  return a;
}

inline DoubleSlitResult run_double_slit(const ExperimentConfig& cfg,
                                        const LogSink& log = {}) {
  if (cfg.kind != PotentialKind::double_slit)
    throw ValidationError("double-slit run needs potential.kind = double_slit");
  cfg.validate();
  const auto grid = cfg.grid();
  const auto lag = cfg.lagrangian();
  const auto psi0 = cfg.initial_packet();

  DoubleSlitResult r{propagate(cfg.run.method, psi0, lag, grid, log), {}, {}, {}, 0.0, 1.0};
  if (cfg.run.method == Method::pathsum)
    r.lattice_correction = pathsum_normalization(cfg.constants, grid).lattice_correction;
  r.histogram = sample_arrivals(r.screen, cfg.run.shots, cfg.run.seed, cfg.run.workers);
  r.histogram.config_hash = cfg.hash;

  const double tau = cfg.t_end - cfg.slits.t_off;
  const double d = std::abs(cfg.slits.s2 - cfg.slits.s1);
  const double spacing = kTwoPi * cfg.constants.hbar * tau / (cfg.constants.mass * d);
  r.fringes = analyze_fringes(r.screen, 0.5 * (cfg.slits.s1 + cfg.slits.s2), spacing);

  std::vector<double> p(grid.n_x());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(r.screen.amplitudes[i]);
  r.fit = chi_square_fit(r.histogram.counts, p, cfg.run.fit_significance);
  r.asymmetry = mirror_asymmetry(r.screen);
  return r;
}

// ------------------------------------------------------ oracle comparison

struct MethodError {
  std::string a, b;
  double l2 = 0.0;  // ||a - b|| / ||b||
  bool pass = false;
};

struct SelectionSummary {
  double epsilon = 0.0;
  std::size_t sampled = 0;
  std::size_t selected = 0;
  bool empty_selection = false;
  std::size_t confident_cells = 0;
  double recon_error_selected = 0.0;
  double recon_error_all = 0.0;
  double raw_before = 0.0;  // final slice
  double raw_after = 0.0;
  double smooth_before = 0.0;
  double smooth_after = 0.0;
  bool recon_pass = false;
  bool decoherence_pass = false;  // strictly lower after selection
};

struct ComparisonReport {
  std::vector<MethodError> methods;
  double lattice_correction = 1.0;
  SelectionSummary selection;
  std::vector<std::string> failures;
  bool pass() const { return failures.empty(); }
};

/// The lattice target used by the selection stage: path-sum output, scaled to
/// unit norm (the lattice kernel is unitary only up to discretization error).
inline WaveFunctionField pathsum_target(const ExperimentConfig& cfg, const LogSink& log = {}) {
  return normalized(pathsum_propagate(cfg.initial_packet(), cfg.lagrangian(), cfg.grid(),
                                      {log, {}}));
}

/// Ensemble of bridges: start ~ |psi0|^2 with phase arg psi0, end ~ |target|^2.
inline Ensemble sample_bridges(const ExperimentConfig& cfg, const WaveFunctionField& target,
                               std::uint64_t seed) {
  SampleSpec spec;
  spec.source = cfg.initial_packet();
  spec.end_density = WaveFunctionField{target.grid, 0, target.amplitudes};
  spec.max_hop = cfg.run.max_hop;
  spec.walk_sigma = cfg.run.walk_sigma;
  spec.workers = cfg.run.workers;
  return sample_paths(spec, cfg.run.paths, seed, cfg.lagrangian(), cfg.grid());
}

inline SelectionSummary run_selection(const ExperimentConfig& cfg,
                                      const WaveFunctionField& target, std::uint64_t seed) {
  const auto grid = cfg.grid();
  const Ensemble all = sample_bridges(cfg, target, seed);
  const Ensemble sel =
      select_coherent_ensemble(target, all, cfg.run.epsilon, cfg.run.amplitude_floor);
  SelectionSummary s;
  s.epsilon = cfg.run.epsilon;
  s.sampled = all.size();
  s.selected = sel.size();
  s.empty_selection = sel.provenance.empty_selection;
  const auto before = decoherence_measure(all, grid.n_t());
  s.raw_before = before.raw_measure;
  s.smooth_before = before.smooth_measure;
  const auto rec_all = reconstruct_wavefunction(all, grid.n_t(), cfg.run.min_count);
  s.recon_error_all = masked_relative_l2(rec_all, target);
  if (!sel.empty()) {
    const auto after = decoherence_measure(sel, grid.n_t());
    s.raw_after = after.raw_measure;
    s.smooth_after = after.smooth_measure;
    const auto rec = reconstruct_wavefunction(sel, grid.n_t(), cfg.run.min_count);
    s.confident_cells = rec.confident_cells();
    if (s.confident_cells > 0) {
      s.recon_error_selected = masked_relative_l2(rec, target);
      s.recon_pass = s.recon_error_selected <= cfg.run.recon_tolerance;
    }
  }
  // Keeping everything (eps >= pi) cannot lower the measure; only the
  // reconstruction is judged then.
  s.decoherence_pass = cfg.run.epsilon >= kPi ? s.raw_after == s.raw_before
                                              : s.raw_after < s.raw_before;
  return s;
}

inline ComparisonReport run_oracle_comparison(const ExperimentConfig& cfg,
                                              const LogSink& log = {}) {
  cfg.validate();
  const auto grid = cfg.grid();
  const auto lag = cfg.lagrangian();
  const auto psi0 = cfg.initial_packet();

  ComparisonReport r;
  r.lattice_correction = pathsum_normalization(cfg.constants, grid).lattice_correction;
  const auto ps = pathsum_propagate(psi0, lag, grid, {log, {}});
  const auto cn = schrodinger_propagate(psi0, lag, grid);
  auto add = [&](const char* a, const WaveFunctionField& fa, const char* b,
                 const WaveFunctionField& fb) {
    MethodError e{a, b, relative_l2(fa, fb), false};
    e.pass = e.l2 <= cfg.run.tolerance;
    if (!e.pass)
      r.failures.push_back(std::string(a) + " vs " + b + " L2 " + format_real(e.l2) +
                           " > " + format_real(cfg.run.tolerance));
    r.methods.push_back(e);
  };
  add("pathsum", ps, "cn", cn);
  if (lag.is_free()) {
    const auto fk = free_kernel_propagate(psi0, grid, cfg.constants);
    add("pathsum", ps, "free-kernel", fk);
    add("cn", cn, "free-kernel", fk);
  }

  r.selection = run_selection(cfg, normalized(ps), cfg.run.seed);
  const auto& s = r.selection;
  if (s.empty_selection) r.failures.push_back("selection is empty");
  else if (!s.recon_pass)
    r.failures.push_back("reconstruction L2 " + format_real(s.recon_error_selected) + " > " +
                         format_real(cfg.run.recon_tolerance));
  if (!s.decoherence_pass)
    r.failures.push_back("selection did not lower final-slice decoherence (" +
                         format_real(s.raw_after) + " vs " + format_real(s.raw_before) + ")");
  return r;
}

inline Json comparison_json(const ComparisonReport& r, const ExperimentConfig& cfg) {
  Json j;
  j["config_hash"] = cfg.hash;
  j["seed"] = cfg.run.seed;
  j["lattice_correction"] = r.lattice_correction;
  j["tolerance"] = cfg.run.tolerance;
  Json m = Json::array();
  for (const auto& e : r.methods)
    m.push_back({{"a", e.a}, {"b", e.b}, {"l2", e.l2}, {"pass", e.pass}});
  j["methods"] = std::move(m);
  const auto& s = r.selection;
  j["selection"] = {{"epsilon", s.epsilon},
                    {"sampled", s.sampled},
                    {"selected", s.selected},
                    {"empty_selection", s.empty_selection},
                    {"confident_cells", s.confident_cells},
                    {"recon_tolerance", cfg.run.recon_tolerance},
                    {"recon_error_selected", s.recon_error_selected},
                    {"recon_error_all", s.recon_error_all},
                    {"raw_before", s.raw_before},
                    {"raw_after", s.raw_after},
                    {"smooth_before", s.smooth_before},
                    {"smooth_after", s.smooth_after}};
  j["failures"] = r.failures;
  j["pass"] = r.pass();
  return j;
}

inline Json double_slit_json(const DoubleSlitResult& r, const ExperimentConfig& cfg) {
  Json j;
  j["config_hash"] = cfg.hash;
  j["seed"] = cfg.run.seed;
  j["method"] = std::string(method_name(cfg.run.method));
  j["shots"] = r.histogram.shots;
  j["asymmetry"] = r.asymmetry;
  j["fringes"] = {{"center", r.fringes.center},
                  {"predicted_spacing", r.fringes.predicted_spacing},
                  {"measured_spacing", r.fringes.measured_spacing},
                  {"peaks", r.fringes.peaks},
                  {"visibility", r.fringes.visibility}};
  j["fit"] = {{"statistic", r.fit.statistic},
              {"bins", r.fit.bins},
              {"dof", r.fit.dof},
              {"p_value", r.fit.p_value},
              {"significance", cfg.run.fit_significance},
              {"pass", r.fit.pass}};
  return j;
}

}  // namespace trajcoh
