#pragma once

// Experiment configuration: an INI file with sections grid, constants,
// potential, packet and run.  Unknown sections or keys are errors, so a typo
// never silently falls back to a default.
//
//   [grid]       x_min x_max n_x t_start t_end n_t
//   [constants]  hbar mass
//   [potential]  kind = free | harmonic | double_slit
//                omega                                      (harmonic)
//                s1 s2 slit_half_width slit1_half_width
//                slit2_half_width t_on t_off wall            (double_slit)
//   [packet]     x0 sigma0 p0
//   [run]        method paths seed shots epsilon tolerance recon_tolerance
//                min_count workers walk_sigma max_hop amplitude_floor
//                fit_significance

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "trajcoh/action.hpp"
#include "trajcoh/io.hpp"
#include "trajcoh/lattice.hpp"
#include "trajcoh/propagators.hpp"

namespace trajcoh {

enum class PotentialKind { free, harmonic, double_slit };

struct DoubleSlitGeometry {
  double s1 = -6.0;
  double s2 = 6.0;
  double half_width1 = 0.5;  // 0 closes the slit
  double half_width2 = 0.5;
  double t_on = 0.0;
  double t_off = 0.1;
  double wall = std::numeric_limits<double>::infinity();
};

struct PacketSpec {
  double x0 = 0.0;
  double sigma0 = 1.0;
  double p0 = 0.0;
};

struct RunSpec {
  Method method = Method::pathsum;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  std::size_t shots = 100000;
  double epsilon = kPi / 8;
  double tolerance = 1e-2;        // method-vs-method relative L2
  double recon_tolerance = 0.10;  // reconstruction relative L2
  std::size_t min_count = 5;
  unsigned workers = 1;
  double walk_sigma = 0.0;
  int max_hop = 0;
  double amplitude_floor = 1e-3;
  double fit_significance = 0.01;
};

struct ExperimentConfig {
  double x_min = -8.0, x_max = 8.0;
  long long n_x = 256;
  double t_start = 0.0, t_end = 1.0;
  long long n_t = 200;
  PhysicalConstants constants;
  PotentialKind kind = PotentialKind::free;
  double omega = 1.0;
  DoubleSlitGeometry slits;
  PacketSpec packet;
  RunSpec run;
  std::string hash;  // FNV-1a of the canonical key=value listing

  SpaceTimeGrid grid() const {
    return make_grid(x_min, x_max, n_x, t_start, t_end, n_t);
  }

  LagrangianSpec lagrangian() const {
    LagrangianSpec lag{constants, FreePotential{}};
    if (kind == PotentialKind::harmonic) {
      lag.potential = HarmonicPotential{omega};
    } else if (kind == PotentialKind::double_slit) {
      const auto g = grid();
      BarrierPotential b;
      b.values.assign(g.n_x(), slits.wall);
      b.t_on = slits.t_on;
      b.t_off = slits.t_off;
      for (std::size_t i = 0; i < g.n_x(); ++i) {
        const double x = g.x(i);
        if (std::abs(x - slits.s1) < slits.half_width1 ||
            std::abs(x - slits.s2) < slits.half_width2)
          b.values[i] = 0.0;
      }
      lag.potential = std::move(b);
    }
    return lag;
  }

  WaveFunctionField initial_packet() const {
    return gaussian_packet(grid(), packet.x0, packet.sigma0, packet.p0, constants);
  }

  void validate() const {
    const auto g = grid();
    constants.validate();
    if (kind == PotentialKind::harmonic && !(omega > 0.0 && std::isfinite(omega)))
      throw ValidationError("potential.omega must be finite and > 0");
    if (kind == PotentialKind::double_slit) {
      const auto& s = slits;
      if (!(s.half_width1 >= 0.0) || !(s.half_width2 >= 0.0))
        throw ValidationError("slit half widths must be >= 0");
      if (!(s.half_width1 > 0.0) && !(s.half_width2 > 0.0))
        throw ValidationError("at least one slit must be open");
      auto inside = [&](double c, double w) {
        return w == 0.0 || (c - w >= x_min && c + w <= x_max);
      };
      if (!inside(s.s1, s.half_width1) || !inside(s.s2, s.half_width2))
        throw ValidationError("slit intervals must lie inside the grid");
      if (s.half_width1 > 0.0 && s.half_width2 > 0.0 &&
          !(std::abs(s.s1 - s.s2) > s.half_width1 + s.half_width2))
        throw ValidationError("slit intervals must be disjoint");
      if (!(s.wall >= 1e3))
        throw ValidationError("potential.wall must be >= 1e3 (or inf for a hard wall)");
      if (!(s.t_off > s.t_on)) throw ValidationError("potential.t_off must exceed t_on");
      if (!(s.t_off < t_end))
        throw ValidationError("barrier must switch off before t_end");
    }
    if (!(packet.sigma0 > 0.0)) throw ValidationError("packet.sigma0 must be > 0");
    const auto& r = run;
    if (r.paths < 1) throw ValidationError("run.paths must be >= 1");
    if (r.shots < 1) throw ValidationError("run.shots must be >= 1");
    for (auto [v, name] : {std::pair{r.epsilon, "run.epsilon"},
                           std::pair{r.tolerance, "run.tolerance"},
                           std::pair{r.recon_tolerance, "run.recon_tolerance"},
                           std::pair{r.amplitude_floor, "run.amplitude_floor"},
                           std::pair{r.fit_significance, "run.fit_significance"}})
      if (!(v > 0.0) || !std::isfinite(v))
        throw ValidationError(std::string(name) + " must be finite and > 0");
    if (!(r.fit_significance < 1.0))
      throw ValidationError("run.fit_significance must be < 1");
    if (!(r.walk_sigma >= 0.0)) throw ValidationError("run.walk_sigma must be >= 0");
    if (r.max_hop < 0) throw ValidationError("run.max_hop must be >= 0");
    lagrangian().validate(g);
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long long parse_integer(const std::string& s, const std::string& key) {
  const char* b = s.c_str();
  char* e = nullptr;
  const long long v = std::strtoll(b, &e, 10);
  if (e == b || *e != '\0')
    throw ValidationError(key + ": expected an integer, got '" + s + "'");
  return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& key) {
  const long long v = parse_integer(s, key);
  if (v < 0) throw ValidationError(key + " must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Parses INI text.  `origin` only labels error messages.
inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& origin = "<config>") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(origin + ": " + e.message() + " (line " +
                          std::to_string(e.line()) + ")");
  }

  static const std::map<std::string, std::set<std::string>> known = {
      {"grid", {"x_min", "x_max", "n_x", "t_start", "t_end", "n_t"}},
      {"constants", {"hbar", "mass"}},
      {"potential",
       {"kind", "omega", "s1", "s2", "slit_half_width", "slit1_half_width",
        "slit2_half_width", "t_on", "t_off", "wall"}},
      {"packet", {"x0", "sigma0", "p0"}},
      {"run",
       {"method", "paths", "seed", "shots", "epsilon", "tolerance", "recon_tolerance",
        "min_count", "workers", "walk_sigma", "max_hop", "amplitude_floor",
        "fit_significance"}},
  };

  std::map<std::string, std::string> kv;  // "section.key" -> value
  for (const auto& [section, body] : tree) {
    const auto sec = known.find(section);
    if (sec == known.end())
      throw ValidationError(origin + ": unknown section [" + section + "]");
    if (!body.data().empty())
      throw ValidationError(origin + ": key '" + section + "' outside any section");
    for (const auto& [key, leaf] : body) {
      if (!sec->second.count(key))
        throw ValidationError(origin + ": unknown key '" + key + "' in [" + section + "]");
      kv[section + "." + key] = detail::trim(leaf.data());
    }
  }

  ExperimentConfig c;
  std::string canonical;
  for (const auto& [k, v] : kv) canonical += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  c.hash = buf;

  auto real = [&](const char* key, double& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = detail::parse_real(it->second, key);
  };
  auto integer = [&](const char* key, auto& dst) {
    if (auto it = kv.find(key); it != kv.end())
      dst = static_cast<std::decay_t<decltype(dst)>>(detail::parse_integer(it->second, key));
  };
  auto count = [&](const char* key, std::size_t& dst) {
    if (auto it = kv.find(key); it != kv.end()) dst = detail::parse_count(it->second, key);
  };

  real("grid.x_min", c.x_min);
  real("grid.x_max", c.x_max);
  integer("grid.n_x", c.n_x);
  real("grid.t_start", c.t_start);
  real("grid.t_end", c.t_end);
  integer("grid.n_t", c.n_t);
  real("constants.hbar", c.constants.hbar);
  real("constants.mass", c.constants.mass);

  if (auto it = kv.find("potential.kind"); it != kv.end()) {
    if (it->second == "free") c.kind = PotentialKind::free;
    else if (it->second == "harmonic") c.kind = PotentialKind::harmonic;
    else if (it->second == "double_slit") c.kind = PotentialKind::double_slit;
    else
      throw ValidationError(origin + ": potential.kind must be free, harmonic or double_slit");
  }
  const bool slit_keys = std::any_of(kv.begin(), kv.end(), [](const auto& p) {
    return p.first.rfind("potential.", 0) == 0 && p.first != "potential.kind" &&
           p.first != "potential.omega";
  });
  if (slit_keys && c.kind != PotentialKind::double_slit)
    throw ValidationError(origin + ": slit keys require potential.kind = double_slit");
  if (kv.count("potential.omega") && c.kind != PotentialKind::harmonic)
    throw ValidationError(origin + ": potential.omega requires kind = harmonic");
  real("potential.omega", c.omega);
  real("potential.s1", c.slits.s1);
  real("potential.s2", c.slits.s2);
  double hw = std::numeric_limits<double>::quiet_NaN();
  real("potential.slit_half_width", hw);
  if (!std::isnan(hw)) c.slits.half_width1 = c.slits.half_width2 = hw;
  real("potential.slit1_half_width", c.slits.half_width1);
  real("potential.slit2_half_width", c.slits.half_width2);
  real("potential.t_on", c.slits.t_on);
  real("potential.t_off", c.slits.t_off);
  real("potential.wall", c.slits.wall);

  real("packet.x0", c.packet.x0);
  real("packet.sigma0", c.packet.sigma0);
  real("packet.p0", c.packet.p0);

  if (auto it = kv.find("run.method"); it != kv.end()) c.run.method = parse_method(it->second);
  count("run.paths", c.run.paths);
  if (auto it = kv.find("run.seed"); it != kv.end())
    c.run.seed = static_cast<std::uint64_t>(detail::parse_count(it->second, "run.seed"));
  count("run.shots", c.run.shots);
  real("run.epsilon", c.run.epsilon);
  real("run.tolerance", c.run.tolerance);
  real("run.recon_tolerance", c.run.recon_tolerance);
  count("run.min_count", c.run.min_count);
  if (auto it = kv.find("run.workers"); it != kv.end())
    c.run.workers = static_cast<unsigned>(detail::parse_count(it->second, "run.workers"));
  real("run.walk_sigma", c.run.walk_sigma);
  integer("run.max_hop", c.run.max_hop);
  real("run.amplitude_floor", c.run.amplitude_floor);
  real("run.fit_significance", c.run.fit_significance);

  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_text_file(path), path);
}

}  // namespace trajcoh
