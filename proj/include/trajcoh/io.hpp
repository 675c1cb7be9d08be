#pragma once

// Text formats:
//   field CSV        x,re,im        one row per cell, %.17g (round-trips exactly)
//   histogram CSV    x,count        one row per screen cell
//   trajectory JSONL {"id","positions","phases","weight_re","weight_im"} per line

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "trajcoh/ensemble.hpp"
#include "trajcoh/lattice.hpp"

namespace trajcoh {

using Json = nlohmann::ordered_json;

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline double parse_real(const std::string& s, const std::string& what) {
  const char* b = s.c_str();
  char* e = nullptr;
  const double v = std::strtod(b, &e);
  if (e == b || *e != '\0')
    throw ValidationError("cannot parse '" + s + "' as a number (" + what + ")");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

inline void write_field_csv(std::ostream& os, const WaveFunctionField& psi) {
  psi.validate();
  os << "x,re,im\n";
  for (std::size_t i = 0; i < psi.amplitudes.size(); ++i)
    os << format_real(psi.grid.x(i)) << ',' << format_real(psi.amplitudes[i].real())
       << ',' << format_real(psi.amplitudes[i].imag()) << '\n';
}

/// Reads a field written by write_field_csv; the grid supplies geometry and
/// every x column must match a cell center.
inline WaveFunctionField read_field_csv(std::istream& is, const SpaceTimeGrid& grid,
                                        std::size_t time_index = 0) {
  std::string line;
  if (!std::getline(is, line) || detail::strip_cr(line) != "x,re,im")
    throw ValidationError("field CSV must start with the header x,re,im");
  auto psi = WaveFunctionField::zeros(grid, time_index);
  std::size_t row = 0;
  while (std::getline(is, line)) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cols = detail::split_csv(line);
    if (cols.size() != 3)
      throw ValidationError("field CSV row " + std::to_string(row + 1) + " needs 3 columns");
    if (row >= grid.n_x()) throw ValidationError("field CSV has more rows than grid cells");
    const double x = detail::parse_real(cols[0], "x");
    if (std::abs(x - grid.x(row)) > 1e-9 * std::max(1.0, std::abs(x)))
      throw ValidationError("field CSV row " + std::to_string(row + 1) +
                            " does not sit on the grid cell center");
    psi.amplitudes[row] = {detail::parse_real(cols[1], "re"),
                           detail::parse_real(cols[2], "im")};
    ++row;
  }
  if (row != grid.n_x())
    throw ValidationError("field CSV has " + std::to_string(row) + " rows for " +
                          std::to_string(grid.n_x()) + " cells");
  return psi;
}

inline Json field_json(const WaveFunctionField& psi) {
  Json j;
  j["time_index"] = psi.time_index;
  Json x = Json::array(), re = Json::array(), im = Json::array();
  for (std::size_t i = 0; i < psi.amplitudes.size(); ++i) {
    x.push_back(psi.grid.x(i));
    re.push_back(psi.amplitudes[i].real());
    im.push_back(psi.amplitudes[i].imag());
  }
  j["x"] = std::move(x);
  j["re"] = std::move(re);
  j["im"] = std::move(im);
  return j;
}

inline void write_histogram_csv(std::ostream& os, const SpaceTimeGrid& grid,
                                const std::vector<std::uint64_t>& counts) {
  os << "x,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i)
    os << format_real(grid.x(i)) << ',' << counts[i] << '\n';
}

inline Json trajectory_json(const PhasedTrajectory& m) {
  Json j;
  j["id"] = m.id();
  j["positions"] = m.trajectory.positions;
  j["phases"] = m.phases;
  j["weight_re"] = m.weight.real();
  j["weight_im"] = m.weight.imag();
  return j;
}

inline void write_ensemble_jsonl(std::ostream& os, const Ensemble& e) {
  for (const auto& m : e.members) os << trajectory_json(m).dump() << '\n';
}

inline Ensemble read_ensemble_jsonl(std::istream& is, const SpaceTimeGrid& grid) {
  Ensemble e{grid, {}, {}};
  e.provenance.sampler = "jsonl";
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      PhasedTrajectory m;
      m.trajectory.id = j.at("id").get<TrajectoryId>();
      m.trajectory.positions = j.at("positions").get<std::vector<int>>();
      m.phases = j.at("phases").get<std::vector<double>>();
      m.weight = {j.at("weight_re").get<double>(), j.at("weight_im").get<double>()};
      for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "id" && it.key() != "positions" && it.key() != "phases" &&
            it.key() != "weight_re" && it.key() != "weight_im")
          throw ValidationError("unknown key '" + it.key() + "'");
      e.members.push_back(std::move(m));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("trajectory JSONL line " + std::to_string(n) + ": " + ex.what());
    } catch (const ValidationError& ex) {
      throw ValidationError("trajectory JSONL line " + std::to_string(n) + ": " + ex.what());
    }
  }
  e.validate();
  return e;
}

/// JSON view of a decoherence report; events beyond max_events are dropped
/// from the list but still counted in n_events.
inline Json decoherence_json(const DecoherenceReport& r, std::size_t max_events) {
  Json j;
  j["raw_measure"] = r.raw_measure;
  j["smooth_measure"] = r.smooth_measure;
  j["n_events"] = r.events.size();
  Json ev = Json::array();
  for (std::size_t i = 0; i < r.events.size() && i < max_events; ++i) {
    const auto& e = r.events[i];
    Json item;
    item["time_index"] = e.time_index;
    item["cell"] = e.cell;
    Json parts = Json::array();
    for (const auto& p : e.participants) parts.push_back({{"id", p.id}, {"phase", p.phase}});
    item["participants"] = std::move(parts);
    item["raw"] = r.per_event[i].raw;
    item["smooth"] = r.per_event[i].smooth;
    item["circular_variance"] = r.per_event[i].circular_variance;
    ev.push_back(std::move(item));
  }
  j["events"] = std::move(ev);
  j["events_truncated"] = r.events.size() > max_events;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw ValidationError("failed writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace trajcoh
