// Command-line front door: characterize measured count-rate data, run
// simulated sessions and sweeps, and bin click-time traces into
// plot-ready histograms.
//
// Exit codes: 0 success, 2 input/configuration error, 3 empty or
// indeterminate result.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qkdsim/characterize.hpp"
#include "qkdsim/csv.hpp"
#include "qkdsim/engine.hpp"
#include "qkdsim/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kNs = 1e-9;

struct CommonOptions {
  std::string out;
  bool quiet = false;
};

fs::path resolve_out(const CommonOptions& common, const char* fallback) {
  if (!common.out.empty()) return common.out;
  fs::path dir = ".";
  if (const char* env = std::getenv("QKDSIM_OUT_DIR")) dir = env;
  return dir / fallback;
}

void write_text(const CommonOptions& common, const char* fallback,
                const std::string& payload, const std::string& summary) {
  if (common.out == "-") {
    std::cout << payload;
    return;
  }
  const fs::path path = resolve_out(common, fallback);
  std::ofstream out(path);
  if (!out) throw qkdsim::ConfigError("cannot write " + path.string());
  out << payload;
  if (!common.quiet) {
    std::cout << summary << "\n" << "wrote " << path.string() << "\n";
  }
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw qkdsim::ConfigError("cannot open file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw qkdsim::ConfigError(path + ": " + e.what());
  }
}

// -----------------------------------------------------------------------
// characterize

json report_to_json(const qkdsim::characterize::SuperlinearityReport& report) {
  using qkdsim::characterize::to_string;
  json j;
  json surface;
  json shifts = json::array();
  for (double t : report.estimate.trigger_shifts_s) shifts.push_back(t / kNs);
  surface["trigger_shifts_ns"] = std::move(shifts);
  surface["mus"] = report.estimate.mus;
  surface["eta"] = report.estimate.eta;
  json flags = json::array();
  for (const auto& row : report.estimate.flags) {
    json r = json::array();
    for (auto f : row) r.push_back(to_string(f));
    flags.push_back(std::move(r));
  }
  surface["flags"] = std::move(flags);
  j["eta_surface"] = std::move(surface);

  json s_grid = json::array();
  for (const auto& cell : report.s_grid) {
    json c;
    c["trigger_shift_ns"] = cell.trigger_shift_s / kNs;
    c["mu"] = cell.mu;
    c["S"] = cell.s;
    s_grid.push_back(std::move(c));
  }
  j["S_grid"] = std::move(s_grid);
  j["max_S"] = report.max_s;
  if (report.max_s_cell) {
    json at;
    at["trigger_shift_ns"] = report.max_s_cell->trigger_shift_s / kNs;
    at["mu"] = report.max_s_cell->mu;
    j["max_S_at"] = std::move(at);
  } else {
    j["max_S_at"] = nullptr;
  }
  j["verdict"] = to_string(report.decision.verdict);
  if (report.decision.witness) {
    const auto& w = *report.decision.witness;
    json wj;
    wj["trigger_shift_ns"] = w.trigger_shift_s / kNs;
    wj["mu_low"] = w.mu_low;
    wj["mu_high"] = w.mu_high;
    wj["eta_low"] = w.eta_low;
    wj["eta_high"] = w.eta_high;
    j["witness"] = std::move(wj);
  } else {
    j["witness"] = nullptr;
  }
  json masked = json::array();
  for (const auto& [t, mu] : report.masked_points) {
    json m;
    m["trigger_shift_ns"] = t / kNs;
    m["mu"] = mu;
    masked.push_back(std::move(m));
  }
  j["masked_points"] = std::move(masked);
  json curve = json::array();
  for (const auto& p : report.qber_curve) {
    json c;
    c["trigger_shift_ns"] = p.trigger_shift_s / kNs;
    c["mu"] = p.mu;
    c["qber"] = p.qber;
    curve.push_back(std::move(c));
  }
  j["eq8_qber_curve"] = std::move(curve);
  return j;
}

int cmd_characterize(const std::string& rates_path,
                     const std::string& meta_path,
                     const CommonOptions& common) {
  const json meta_json = load_json(meta_path);
  qkdsim::characterize::MeasurementMeta meta;
  auto need = [&](const char* key) {
    if (!meta_json.contains(key) || !meta_json[key].is_number()) {
      throw qkdsim::ConfigError(meta_path + ": missing number '" +
                                std::string(key) + "'");
    }
    return meta_json[key].get<double>();
  };
  meta.pulse_rate_hz = need("f_hz");
  meta.window_s = need("theta_ns") * kNs;
  meta.gate_frequency_hz = need("F_hz");
  meta.dark_rate_hz = need("D_hz");

  const auto records = qkdsim::characterize::records_from_csv(rates_path, meta);
  const auto report = qkdsim::characterize::analyze(records, meta);

  std::ostringstream summary;
  summary << "verdict: " << to_string(report.decision.verdict)
          << ", max S = " << report.max_s;
  write_text(common, "report.json", report_to_json(report).dump(2) + "\n",
             summary.str());
  if (report.decision.verdict ==
      qkdsim::characterize::Verdict::indeterminate) {
    if (!common.quiet) {
      std::cerr << "all grid points masked; verdict indeterminate\n";
    }
    return 3;
  }
  return 0;
}

// -----------------------------------------------------------------------
// simulate

int cmd_simulate(const std::string& config_path, const CommonOptions& common,
                 std::optional<std::uint64_t> seed_override,
                 const std::string& trace_path) {
  json config = load_json(config_path);
  const fs::path base_dir = fs::path(config_path).parent_path();
  if (seed_override) config["seed"] = *seed_override;

  std::ofstream trace_file;
  std::optional<qkdsim::engine::TraceSink> sink;
  if (!trace_path.empty()) {
    trace_file.open(trace_path);
    if (!trace_file) {
      throw qkdsim::ConfigError("cannot write " + trace_path);
    }
    sink.emplace(trace_file);
  }

  if (qkdsim::engine::is_exercise_config(config)) {
    const auto cfg =
        qkdsim::engine::exercise_config_from_json(config, base_dir);
    const auto points = qkdsim::engine::run_detector_exercise(
        cfg, sink ? &*sink : nullptr);
    json j;
    j["mode"] = "detector_exercise";
    j["seed"] = cfg.seed;
    json rows = json::array();
    for (const auto& p : points) {
      json r;
      r["trigger_shift_ns"] = p.trigger_shift_s / kNs;
      r["mu"] = p.mu;
      r["pulses"] = p.pulses;
      r["clicks"] = p.clicks;
      r["mean_shift_ns"] = p.mean_shift_s / kNs;
      r["rms_shift_ns"] = p.rms_shift_s / kNs;
      rows.push_back(std::move(r));
    }
    j["points"] = std::move(rows);
    write_text(common, "metrics.json", j.dump(2) + "\n",
               "detector exercise: " + std::to_string(points.size()) +
                   " grid points");
    return 0;
  }

  const auto cfg = qkdsim::engine::session_config_from_json(config, base_dir);
  const auto metrics =
      qkdsim::engine::run_session(cfg, sink ? &*sink : nullptr);
  std::ostringstream summary;
  summary << "slots " << metrics.slots << ", accepted "
          << metrics.counters.accepted_bits << ", kept "
          << metrics.counters.kept_bits << ", QBER " << metrics.qber;
  write_text(common, "metrics.json",
             qkdsim::engine::metrics_to_json(metrics).dump(2) + "\n",
             summary.str());
  return 0;
}

// -----------------------------------------------------------------------
// sweep

int cmd_sweep(const std::string& config_path, const CommonOptions& common,
              std::optional<std::uint64_t> seed_override) {
  const json sweep = load_json(config_path);
  const fs::path base_dir = fs::path(config_path).parent_path();
  if (!sweep.contains("base") || !sweep["base"].is_object()) {
    throw qkdsim::ConfigError("sweep config needs a 'base' session object");
  }
  if (!sweep.contains("grid")) {
    throw qkdsim::ConfigError("sweep config needs a 'grid' array");
  }
  json base = sweep["base"];
  if (seed_override) base["seed"] = *seed_override;
  const auto axes = qkdsim::engine::sweep_axes_from_json(sweep["grid"]);
  const auto result = qkdsim::engine::run_sweep(base, axes, base_dir);
  json j;
  j["cells"] = result.rows;
  write_text(common, "sweep.json", j.dump(2) + "\n",
             "sweep: " + std::to_string(result.rows.size()) + " cells");
  return 0;
}

// -----------------------------------------------------------------------
// histogram

int cmd_histogram(const std::string& trace_path, int bins,
                  const CommonOptions& common) {
  if (bins < 1) throw qkdsim::ConfigError("--bins must be >= 1");
  const auto trace = qkdsim::read_csv(trace_path, /*lenient=*/true);
  if (trace.empty()) {
    if (!common.quiet) std::cerr << "empty trace: " << trace_path << "\n";
    return 3;
  }
  const std::size_t c_click = trace.column("click_time_ns");
  const bool grouped = trace.has_column("trigger_shift_ns") &&
                       trace.has_column("mu") &&
                       trace.has_column("pulse_time_ns");

  struct Group {
    std::vector<double> shifts;
  };
  std::map<std::pair<double, double>, Group> groups;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& row : trace.rows) {
    double shift = row[c_click];
    std::pair<double, double> key{0.0, 0.0};
    if (grouped) {
      shift -= row[trace.column("pulse_time_ns")];
      key = {row[trace.column("trigger_shift_ns")], row[trace.column("mu")]};
    }
    groups[key].shifts.push_back(shift);
    lo = first ? shift : std::min(lo, shift);
    hi = first ? shift : std::max(hi, shift);
    first = false;
  }
  if (hi - lo <= 0.0) {  // degenerate single-value trace
    lo -= 0.005;
    hi += 0.005;
  }
  const double width = (hi - lo) / bins;

  std::ostringstream out;
  out << "trigger_shift_ns,mu,bin_center_ns,density\n";
  for (auto& [key, group] : groups) {
    std::vector<long> counts(static_cast<std::size_t>(bins), 0);
    for (double s : group.shifts) {
      auto b = static_cast<std::size_t>((s - lo) / width);
      if (b >= counts.size()) b = counts.size() - 1;
      counts[b]++;
    }
    const long peak = *std::max_element(counts.begin(), counts.end());
    for (int b = 0; b < bins; ++b) {
      out << key.first << ',' << key.second << ','
          << lo + (b + 0.5) * width << ','
          << static_cast<double>(counts[static_cast<std::size_t>(b)]) /
                 static_cast<double>(peak)
          << '\n';
    }
  }
  write_text(common, "histogram.csv", out.str(),
             "histogram: " + std::to_string(groups.size()) + " groups, " +
                 std::to_string(bins) + " bins");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detector-attack simulation lab for BB84 receivers"};
  app.require_subcommand(1);

  CommonOptions common;
  std::optional<std::uint64_t> seed;

  std::string rates_path, meta_path;
  auto* characterize =
      app.add_subcommand("characterize",
                         "Invert count rates to an efficiency surface and "
                         "grade superlinearity");
  characterize->add_option("--rates", rates_path, "count-rate CSV")
      ->required();
  characterize->add_option("--meta", meta_path, "measurement constants JSON")
      ->required();

  std::string sim_config, trace_path;
  auto* simulate =
      app.add_subcommand("simulate", "Run one simulated session");
  simulate->add_option("--config", sim_config, "session config JSON")
      ->required();
  simulate->add_option("--trace", trace_path, "write per-click trace CSV");

  std::string sweep_config;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  sweep->add_option("--config", sweep_config, "sweep config JSON")->required();

  std::string hist_trace;
  int bins = 100;
  auto* histogram =
      app.add_subcommand("histogram", "Bin a click-time trace");
  histogram->add_option("--trace", hist_trace, "trace CSV")->required();
  histogram->add_option("--bins", bins, "number of bins");

  for (auto* cmd : {characterize, simulate, sweep, histogram}) {
    cmd->add_option("--out", common.out,
                    "output path ('-' for stdout; default honors "
                    "QKDSIM_OUT_DIR)");
    cmd->add_flag("--quiet", common.quiet, "suppress summaries");
  }
  for (auto* cmd : {simulate, sweep}) {
    cmd->add_option("--seed", seed, "override the config seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(characterize)) {
      return cmd_characterize(rates_path, meta_path, common);
    }
    if (app.got_subcommand(simulate)) {
      return cmd_simulate(sim_config, common, seed, trace_path);
    }
    if (app.got_subcommand(sweep)) {
      return cmd_sweep(sweep_config, common, seed);
    }
    if (app.got_subcommand(histogram)) {
      return cmd_histogram(hist_trace, bins, common);
    }
  } catch (const qkdsim::EmptyResultError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
