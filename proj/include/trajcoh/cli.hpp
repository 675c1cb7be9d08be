#pragma once

// trajcoh command line.  Exit codes: 0 success, 1 validation or usage error,
// 2 numeric failure, 3 failed comparison.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajcoh/config.hpp"
#include "trajcoh/ensemble.hpp"
#include "trajcoh/experiments.hpp"
#include "trajcoh/io.hpp"
#include "trajcoh/propagators.hpp"

namespace trajcoh {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumeric = 2, kExitCompare = 3 };

namespace detail {

struct CliOptions {
  std::string command;
  std::string config;
  std::string out;
  std::string in;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string method;
  std::optional<double> epsilon;
  bool full_events = false;
  double eps_phase = 0.1;
  double eps_mag = 0.05;
  std::size_t max_steps = 1000;
  std::string field_out;
  std::string hist_out;
};

class CliRun {
 public:
  CliRun(const CliOptions& o, std::ostream& out, std::ostream& err)
      : o_(o), out_(out), err_(err) {}

  int run() {
    cfg_ = load_config(o_.config);
    if (o_.seed) cfg_.run.seed = *o_.seed;
    if (o_.workers) cfg_.run.workers = *o_.workers;
    if (!o_.method.empty()) cfg_.run.method = parse_method(o_.method);
    if (o_.epsilon) cfg_.run.epsilon = *o_.epsilon;
    cfg_.validate();
    log_ = [this](std::string_view msg) { err_ << msg << '\n'; };

    const auto& c = o_.command;
    if (c == "propagate") return propagate_cmd();
    if (c == "sample") return sample_cmd();
    if (c == "coherence") return coherence_cmd();
    if (c == "prune") return prune_cmd();
    if (c == "select") return select_cmd();
    if (c == "relax") return relax_cmd();
    if (c == "double-slit") return double_slit_cmd();
    if (c == "compare") return compare_cmd();
    throw ValidationError("unknown subcommand " + c);
  }

 private:
  std::string format_or(std::initializer_list<const char*> allowed) const {
    if (o_.format.empty()) return *allowed.begin();
    for (const char* a : allowed)
      if (o_.format == a) return o_.format;
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
    throw ValidationError("--format " + o_.format + " is not available for " + o_.command +
                          " (use " + list + ")");
  }

  Json meta() const {
    Json m;
    m["command"] = o_.command;
    m["config_hash"] = cfg_.hash;
    m["seed"] = cfg_.run.seed;
    m["method"] = std::string(method_name(cfg_.run.method));
    return m;
  }

  /// Sends text to --out (or stdout).  CSV and JSONL files get a sidecar
  /// <out>.meta.json carrying the config hash.
  void emit(const std::string& text, const std::string& format) {
    if (o_.out.empty()) {
      out_ << text;
      return;
    }
    write_text_file(o_.out, text);
    if (format != "json") write_text_file(o_.out + ".meta.json", meta().dump(2) + "\n");
  }

  void emit_json(Json j) {
    Json full;
    full["config_hash"] = cfg_.hash;
    full["seed"] = cfg_.run.seed;
    for (auto it = j.begin(); it != j.end(); ++it) full[it.key()] = it.value();
    emit(full.dump(2) + "\n", "json");
  }

  Ensemble input_ensemble() const {
    if (o_.in.empty()) throw ValidationError("--in <ensemble.jsonl> is required for " + o_.command);
    std::istringstream is(read_text_file(o_.in));
    return read_ensemble_jsonl(is, cfg_.grid());
  }

  WaveFunctionField target() const {
    const auto t = propagate(cfg_.run.method, cfg_.initial_packet(), cfg_.lagrangian(),
                             cfg_.grid(), log_);
    return normalized(t);
  }

  int propagate_cmd() {
    const auto fmt = format_or({"csv", "json"});
    const auto psi = propagate(cfg_.run.method, cfg_.initial_packet(), cfg_.lagrangian(),
                               cfg_.grid(), log_);
    if (fmt == "csv") {
      std::ostringstream os;
      write_field_csv(os, psi);
      emit(os.str(), fmt);
    } else {
      Json j = field_json(psi);
      j["method"] = std::string(method_name(cfg_.run.method));
      j["norm_squared"] = norm_squared(psi);
      emit_json(std::move(j));
    }
    return kExitOk;
  }

  int sample_cmd() {
    format_or({"jsonl"});
    const auto e = sample_bridges(cfg_, target(), cfg_.run.seed);
    std::ostringstream os;
    write_ensemble_jsonl(os, e);
    emit(os.str(), "jsonl");
    return kExitOk;
  }

  int coherence_cmd() {
    format_or({"json"});
    const auto e = input_ensemble();
    const auto r = decoherence_measure(e);
    Json j = decoherence_json(r, o_.full_events ? std::numeric_limits<std::size_t>::max() : 100);
    j["epsilon"] = cfg_.run.epsilon;
    j["coherent"] = is_coherent(e, cfg_.run.epsilon);
    emit_json(std::move(j));
    return kExitOk;
  }

  int prune_cmd() {
    format_or({"json"});
    const auto e = input_ensemble();
    Json cells = Json::array();
    double bound = 0.0;
    std::size_t removed = 0, total = 0;
    for (const auto& [cell, items] : arrival_contributions(e)) {
      Complex before{};
      for (const auto& c : items) before += c.value();
      const auto r = prune_cancelling_pairs(items, o_.eps_phase, o_.eps_mag);
      Complex after{};
      for (const auto& c : r.kept) after += c.value();
      bound += r.residual_bound;
      removed += 2 * r.removed.size();
      total += items.size();
      cells.push_back({{"cell", cell},
                       {"contributions", items.size()},
                       {"removed", 2 * r.removed.size()},
                       {"residual_bound", r.residual_bound},
                       {"sum_change", std::abs(after - before)}});
    }
    emit_json({{"eps_phase", o_.eps_phase},
               {"eps_mag", o_.eps_mag},
               {"contributions", total},
               {"removed", removed},
               {"residual_bound", bound},
               {"cells", std::move(cells)}});
    return kExitOk;
  }

  int select_cmd() {
    format_or({"jsonl"});
    const auto e = input_ensemble();
    const auto sel = select_coherent_ensemble(target(), e, cfg_.run.epsilon,
                                              cfg_.run.amplitude_floor);
    if (sel.provenance.empty_selection) err_ << "select: empty selection\n";
    std::ostringstream os;
    write_ensemble_jsonl(os, sel);
    emit(os.str(), "jsonl");
    return kExitOk;
  }

  int relax_cmd() {
    const auto fmt = format_or({"jsonl", "json"});
    RelaxOptions opt;
    opt.max_steps = o_.max_steps;
    const auto r = relax_coherence(input_ensemble(), opt);
    if (fmt == "jsonl") {
      std::ostringstream os;
      write_ensemble_jsonl(os, r.ensemble);
      emit(os.str(), fmt);
    } else {
      emit_json({{"steps", r.steps},
                 {"converged", r.converged},
                 {"history", r.history},
                 {"offsets", r.offsets}});
    }
    return kExitOk;
  }

  int double_slit_cmd() {
    const auto fmt = format_or({"json", "csv"});
    const auto r = run_double_slit(cfg_, log_);
    if (!o_.field_out.empty()) {
      std::ostringstream os;
      write_field_csv(os, r.screen);
      write_text_file(o_.field_out, os.str());
      write_text_file(o_.field_out + ".meta.json", meta().dump(2) + "\n");
    }
    std::ostringstream hist;
    write_histogram_csv(hist, r.screen.grid, r.histogram.counts);
    if (!o_.hist_out.empty()) {
      write_text_file(o_.hist_out, hist.str());
      write_text_file(o_.hist_out + ".meta.json", meta().dump(2) + "\n");
    }
    if (fmt == "csv") emit(hist.str(), fmt);
    else emit_json(double_slit_json(r, cfg_));
    return kExitOk;
  }

  int compare_cmd() {
    format_or({"json"});
    const auto r = run_oracle_comparison(cfg_, log_);
    emit_json(comparison_json(r, cfg_));
    for (const auto& f : r.failures) err_ << "compare: " << f << '\n';
    return r.pass() ? kExitOk : kExitCompare;
  }

  const CliOptions& o_;
  std::ostream& out_;
  std::ostream& err_;
  ExperimentConfig cfg_;
  LogSink log_;
};

}  // namespace detail

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out,
                        std::ostream& err) {
  CLI::App app{"Lattice path sums, trajectory ensembles and phase coherence", "trajcoh"};
  app.require_subcommand(1);
  detail::CliOptions o;

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"propagate", "propagate the configured packet and write the final field"},
      {"sample", "sample a trajectory ensemble (JSONL)"},
      {"coherence", "decoherence report for an ensemble"},
      {"prune", "drop cancelling arrival pairs and report the residual bound"},
      {"select", "keep ensemble members in phase with the propagated target"},
      {"relax", "gradient descent on per-member phase offsets"},
      {"double-slit", "one-by-one double-slit experiment"},
      {"compare", "oracle comparison and coherent-selection check"},
  };
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", o.config, "experiment config file")->required();
    sub->add_option("--out", o.out, "output path (default stdout)");
    sub->add_option("--seed", o.seed, "override run.seed");
    sub->add_option("--format", o.format, "output format")
        ->check(CLI::IsMember({"csv", "json", "jsonl"}));
    sub->add_option("--workers", o.workers, "worker threads (0 = all cores)");
    const std::string name = s.name;
    if (name == "propagate" || name == "sample" || name == "select" || name == "double-slit" ||
        name == "compare")
      sub->add_option("--method", o.method, "pathsum|cn|free-kernel|imaginary")
          ->check(CLI::IsMember({"pathsum", "cn", "free-kernel", "imaginary"}));
    if (name == "coherence" || name == "prune" || name == "select" || name == "relax")
      sub->add_option("--in", o.in, "input ensemble (JSONL)")->required();
    if (name == "coherence" || name == "select" || name == "compare")
      sub->add_option("--epsilon", o.epsilon, "coherence tolerance (radians)");
    if (name == "coherence") sub->add_flag("--full-events", o.full_events, "list every event");
    if (name == "prune") {
      sub->add_option("--eps-phase", o.eps_phase, "antipodal phase tolerance");
      sub->add_option("--eps-mag", o.eps_mag, "relative magnitude tolerance");
    }
    if (name == "relax") sub->add_option("--max-steps", o.max_steps, "descent steps");
    if (name == "double-slit") {
      sub->add_option("--field-out", o.field_out, "screen field CSV");
      sub->add_option("--hist-out", o.hist_out, "arrival histogram CSV");
    }
    sub->callback([&o, name] { o.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    detail::CliRun run(o, out, err);
    return run.run();
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace trajcoh
