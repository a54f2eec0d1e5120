#include "qkdsim/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qkdsim/csv.hpp"
#include "qkdsim/errors.hpp"

namespace qkdsim::detector {

namespace {

constexpr double kNs = 1e-9;

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

// Index of the grid interval containing x; grids are strictly increasing.
// Queries beyond the grid by more than a relative epsilon throw; boundary
// arithmetic noise clamps to the edge. A one-point grid accepts only
// (near-)exact matches.
std::size_t bracket(const std::vector<double>& grid, double x,
                    const char* what) {
  if (grid.size() == 1) {
    const double tol = 1e-9 * std::max(1.0, std::abs(grid[0]));
    if (std::abs(x - grid[0]) <= tol) return 0;
    throw RangeError(std::string(what) + " query outside table grid");
  }
  const double tol =
      1e-9 * std::max({std::abs(grid.front()), std::abs(grid.back()),
                       grid.back() - grid.front()});
  if (x < grid.front() - tol || x > grid.back() + tol) {
    throw RangeError(std::string(what) + " query outside declared range");
  }
  auto it = std::upper_bound(grid.begin(), grid.end(), x);
  std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  if (hi == 0) return 0;
  if (hi >= grid.size()) hi = grid.size() - 1;
  return hi - 1;
}

double lerp(double a, double b, double w) {
  return a * (1.0 - w) + b * w;  // exact at the endpoints
}

// Bilinear interpolation in (t, ln mu) over a rectangular table.
double interp2(const std::vector<double>& ts, const std::vector<double>& mus,
               const std::vector<std::vector<double>>& z, double t, double mu,
               const char* what) {
  const std::size_t i = bracket(ts, t, what);
  const std::size_t j = bracket(mus, mu, what);
  const std::size_t i1 = std::min(i + 1, ts.size() - 1);
  const std::size_t j1 = std::min(j + 1, mus.size() - 1);
  const double wt = std::clamp(
      (i1 == i) ? 0.0 : (t - ts[i]) / (ts[i1] - ts[i]), 0.0, 1.0);
  const double wm = std::clamp(
      (j1 == j) ? 0.0
                : (std::log(mu) - std::log(mus[j])) /
                      (std::log(mus[j1]) - std::log(mus[j])),
      0.0, 1.0);
  const double lo = lerp(z[i][j], z[i][j1], wm);
  const double hi = lerp(z[i1][j], z[i1][j1], wm);
  return lerp(lo, hi, wt);
}

struct GridFromCsv {
  std::vector<double> ts;
  std::vector<double> mus;
  std::vector<std::vector<std::vector<double>>> values;  // per column
};

// Reassembles long-format CSV rows into a complete rectangular grid.
GridFromCsv grid_from_csv(const CsvTable& csv, const std::string& path,
                          const std::vector<std::string>& value_columns) {
  const std::size_t ct = csv.column("trigger_shift_ns");
  const std::size_t cm = csv.column("mu");
  std::vector<std::size_t> cv;
  for (const auto& name : value_columns) cv.push_back(csv.column(name));

  std::map<double, std::map<double, std::vector<double>>> cells;
  for (const auto& row : csv.rows) {
    std::vector<double> vals;
    for (std::size_t c : cv) vals.push_back(row[c]);
    cells[row[ct] * kNs][row[cm]] = std::move(vals);
  }

  GridFromCsv out;
  for (const auto& [t, _] : cells) out.ts.push_back(t);
  for (const auto& [mu, _] : cells.begin()->second) out.mus.push_back(mu);
  out.values.assign(value_columns.size(),
                    std::vector<std::vector<double>>(
                        out.ts.size(), std::vector<double>(out.mus.size())));

  for (std::size_t i = 0; i < out.ts.size(); ++i) {
    const auto& row = cells[out.ts[i]];
    if (row.size() != out.mus.size()) {
      throw ConfigError(path + ": incomplete grid at trigger shift " +
                        std::to_string(out.ts[i] / kNs) + " ns");
    }
    std::size_t j = 0;
    for (const auto& [mu, vals] : row) {
      if (mu != out.mus[j]) {
        throw ConfigError(path + ": mu grid differs between trigger shifts");
      }
      for (std::size_t k = 0; k < vals.size(); ++k) {
        out.values[k][i][j] = vals[k];
      }
      ++j;
    }
  }
  return out;
}

void require_strictly_increasing(const std::vector<double>& v,
                                 const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) {
      throw ConfigError(std::string(what) + " grid not strictly increasing");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// GateEfficiencyProfile

GateEfficiencyProfile::GateEfficiencyProfile(
    double period_s, std::vector<std::pair<double, double>> samples)
    : period_s_(period_s), samples_(std::move(samples)) {
  if (!(period_s_ > 0.0)) throw ConfigError("gate period must be positive");
  if (samples_.empty()) throw ConfigError("gate profile needs samples");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& [t, eta] = samples_[i];
    if (t < 0.0 || t >= period_s_) {
      throw ConfigError("gate profile sample time outside [0, period)");
    }
    if (eta < 0.0 || eta > 1.0) {
      throw ConfigError("gate profile efficiency outside [0, 1]");
    }
    if (i > 0 && !(t > samples_[i - 1].first)) {
      throw ConfigError("gate profile sample times must strictly increase");
    }
  }
}

double GateEfficiencyProfile::lookup(double t_s) const {
  double t = std::fmod(t_s, period_s_);
  if (t < 0.0) t += period_s_;
  if (samples_.size() == 1) return samples_[0].second;

  // Find the surrounding pair, wrapping from the last sample to the first.
  auto it = std::upper_bound(
      samples_.begin(), samples_.end(), t,
      [](double x, const auto& s) { return x < s.first; });
  double t0, e0, t1, e1;
  if (it == samples_.begin()) {
    t0 = samples_.back().first - period_s_;
    e0 = samples_.back().second;
    t1 = samples_.front().first;
    e1 = samples_.front().second;
  } else if (it == samples_.end()) {
    t0 = samples_.back().first;
    e0 = samples_.back().second;
    t1 = samples_.front().first + period_s_;
    e1 = samples_.front().second;
  } else {
    t0 = (it - 1)->first;
    e0 = (it - 1)->second;
    t1 = it->first;
    e1 = it->second;
  }
  return lerp(e0, e1, (t - t0) / (t1 - t0));
}

GateEfficiencyProfile GateEfficiencyProfile::flat(double eta,
                                                  double period_s) {
  return GateEfficiencyProfile(period_s, {{0.0, eta}});
}

double detect_prob_fock(const GateEfficiencyProfile& profile, double t_s,
                        long n) {
  if (n < 0) throw ConfigError("photon number must be nonnegative");
  const double eta = profile.lookup(t_s);
  return 1.0 - std::pow(1.0 - eta, static_cast<double>(n));
}

double detect_prob_coherent(const GateEfficiencyProfile& profile, double t_s,
                            double mu) {
  if (mu < 0.0) throw ConfigError("mean photon number must be nonnegative");
  return -std::expm1(-mu * profile.lookup(t_s));
}

// ---------------------------------------------------------------------------
// DetectorConfig

void DetectorConfig::validate() const {
  if (!(gate_frequency_hz > 0.0)) {
    throw ConfigError("gate frequency must be positive");
  }
  if (dark_rate_hz < 0.0) throw ConfigError("dark rate must be nonnegative");
  if (deadtime_s < 0.0) throw ConfigError("deadtime must be nonnegative");
  if (peak_efficiency < 0.0 || peak_efficiency > 1.0) {
    throw ConfigError("peak efficiency outside [0, 1]");
  }
}

DetectorConfig DetectorConfig::spd1() {
  return DetectorConfig{312.5e6, 428.0, 4.34e-6, 0.098, "spd1"};
}

DetectorConfig DetectorConfig::spd2() {
  return DetectorConfig{312.5e6, 532.0, 4.36e-6, 0.127, "spd2"};
}

// ---------------------------------------------------------------------------
// SuperlinearitySurface

SuperlinearitySurface SuperlinearitySurface::power_law(
    std::vector<PowerLawEntry> entries, double mu_min, double mu_max) {
  if (entries.empty()) throw ConfigError("power-law surface needs entries");
  if (!(mu_min > 0.0) || !(mu_max > mu_min)) {
    throw ConfigError("power-law surface needs 0 < mu_min < mu_max");
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) {
              return a.trigger_shift_s < b.trigger_shift_s;
            });
  SuperlinearitySurface s;
  s.kind_ = Kind::power_law;
  s.entries_ = std::move(entries);
  s.mu_min_ = mu_min;
  s.mu_max_ = mu_max;
  for (const auto& e : s.entries_) s.t_grid_.push_back(e.trigger_shift_s);
  return s;
}

SuperlinearitySurface SuperlinearitySurface::table(
    std::vector<double> trigger_shifts_s, std::vector<double> mus,
    std::vector<std::vector<double>> eta) {
  require_strictly_increasing(trigger_shifts_s, "trigger shift");
  require_strictly_increasing(mus, "mu");
  if (!mus.empty() && !(mus.front() > 0.0)) {
    throw ConfigError("surface mu grid must be positive");
  }
  if (eta.size() != trigger_shifts_s.size()) {
    throw ConfigError("surface table shape mismatch");
  }
  for (const auto& row : eta) {
    if (row.size() != mus.size()) {
      throw ConfigError("surface table shape mismatch");
    }
    for (double v : row) {
      if (v < 0.0 || v > 1.0) {
        throw ConfigError("surface efficiency outside [0, 1]");
      }
    }
  }
  SuperlinearitySurface s;
  s.kind_ = Kind::table;
  s.t_grid_ = std::move(trigger_shifts_s);
  s.mu_grid_ = std::move(mus);
  s.eta_ = std::move(eta);
  s.mu_min_ = s.mu_grid_.front();
  s.mu_max_ = s.mu_grid_.back();
  return s;
}

SuperlinearitySurface SuperlinearitySurface::from_csv(
    const std::string& path) {
  const auto grid = grid_from_csv(read_csv(path), path, {"eta"});
  return table(grid.ts, grid.mus, grid.values[0]);
}

double SuperlinearitySurface::value(double trigger_shift_s, double mu) const {
  if (kind_ == Kind::table) {
    return clamp01(interp2(t_grid_, mu_grid_, eta_, trigger_shift_s, mu,
                           "efficiency surface"));
  }
  if (!(mu >= mu_min_ && mu <= mu_max_)) {
    throw RangeError("efficiency surface query outside declared mu range");
  }
  // Power law per trigger shift; c and k interpolate linearly between
  // entries. A single entry applies at every trigger shift.
  double c, k;
  if (entries_.size() == 1) {
    c = entries_[0].coefficient;
    k = entries_[0].exponent;
  } else {
    const std::size_t i = bracket(t_grid_, trigger_shift_s, "trigger shift");
    const std::size_t i1 = std::min(i + 1, t_grid_.size() - 1);
    const double w = (i1 == i) ? 0.0
                               : (trigger_shift_s - t_grid_[i]) /
                                     (t_grid_[i1] - t_grid_[i]);
    c = lerp(entries_[i].coefficient, entries_[i1].coefficient, w);
    k = lerp(entries_[i].exponent, entries_[i1].exponent, w);
  }
  return clamp01(c * std::pow(mu, k));
}

// ---------------------------------------------------------------------------
// EnergyTimeModel

EnergyTimeModel EnergyTimeModel::log_linear(const LogLinearParams& params) {
  if (!(params.mu_ref > 0.0)) throw ConfigError("mu_ref must be positive");
  if (!(params.fwhm_floor_s > 0.0)) {
    throw ConfigError("jitter FWHM floor must be positive");
  }
  if (params.slope_s_per_decade < 0.0 ||
      params.fwhm_slope_s_per_decade < 0.0) {
    throw ConfigError("energy-time slopes must be nonnegative");
  }
  if (!(params.clamp_lo_s <= params.clamp_hi_s)) {
    throw ConfigError("energy-time clamp range inverted");
  }
  EnergyTimeModel m;
  m.kind_ = Kind::log_linear;
  m.params_ = params;
  m.clamp_lo_s_ = params.clamp_lo_s;
  m.clamp_hi_s_ = params.clamp_hi_s;
  return m;
}

EnergyTimeModel EnergyTimeModel::table(
    std::vector<double> trigger_shifts_s, std::vector<double> mus,
    std::vector<std::vector<double>> dt_s,
    std::vector<std::vector<double>> fwhm_s) {
  require_strictly_increasing(trigger_shifts_s, "trigger shift");
  require_strictly_increasing(mus, "mu");
  if (dt_s.size() != trigger_shifts_s.size() ||
      fwhm_s.size() != trigger_shifts_s.size()) {
    throw ConfigError("energy-time table shape mismatch");
  }
  double dt_min = 0.0, dt_max = 0.0, fwhm_max = 0.0;
  for (std::size_t i = 0; i < dt_s.size(); ++i) {
    if (dt_s[i].size() != mus.size() || fwhm_s[i].size() != mus.size()) {
      throw ConfigError("energy-time table shape mismatch");
    }
    for (std::size_t j = 0; j < mus.size(); ++j) {
      if (!(fwhm_s[i][j] > 0.0)) {
        throw ConfigError("energy-time jitter FWHM must be positive");
      }
      if (j > 0 && dt_s[i][j] > dt_s[i][j - 1] + 1e-15) {
        throw ConfigError("energy-time mean shift must be nonincreasing in mu");
      }
      if (j > 0 && fwhm_s[i][j] > fwhm_s[i][j - 1] + 1e-15) {
        throw ConfigError("energy-time jitter must be nonincreasing in mu");
      }
      dt_min = std::min(dt_min, dt_s[i][j]);
      dt_max = std::max(dt_max, dt_s[i][j]);
      fwhm_max = std::max(fwhm_max, fwhm_s[i][j]);
    }
  }
  EnergyTimeModel m;
  m.kind_ = Kind::table;
  m.t_grid_ = std::move(trigger_shifts_s);
  m.mu_grid_ = std::move(mus);
  m.dt_ = std::move(dt_s);
  m.fwhm_ = std::move(fwhm_s);
  // Sampled shifts stay within the tabulated span plus a jitter guard.
  m.clamp_lo_s_ = dt_min - 5.0 * fwhm_max / kFwhmToSigma;
  m.clamp_hi_s_ = dt_max + 5.0 * fwhm_max / kFwhmToSigma;
  return m;
}

EnergyTimeModel EnergyTimeModel::from_csv(const std::string& path) {
  const auto grid = grid_from_csv(read_csv(path), path, {"dt_ns", "fwhm_ns"});
  auto scale = [](std::vector<std::vector<double>> v) {
    for (auto& row : v)
      for (auto& x : row) x *= kNs;
    return v;
  };
  return table(grid.ts, grid.mus, scale(grid.values[0]),
               scale(grid.values[1]));
}

ClickTiming EnergyTimeModel::shift(double trigger_shift_s, double mu) const {
  if (kind_ == Kind::table) {
    return ClickTiming{
        interp2(t_grid_, mu_grid_, dt_, trigger_shift_s, mu, "energy-time"),
        interp2(t_grid_, mu_grid_, fwhm_, trigger_shift_s, mu, "energy-time")};
  }
  if (!(mu >= params_.mu_min && mu <= params_.mu_max)) {
    throw RangeError("energy-time query outside declared mu range");
  }
  const double decades = std::log10(mu / params_.mu_ref);
  const double dt =
      std::clamp(params_.ref_shift_s - params_.slope_s_per_decade * decades,
                 params_.clamp_lo_s, params_.clamp_hi_s);
  const double fwhm =
      std::clamp(params_.fwhm_ref_s - params_.fwhm_slope_s_per_decade * decades,
                 params_.fwhm_floor_s, params_.fwhm_ref_s);
  return ClickTiming{dt, fwhm};
}

// ---------------------------------------------------------------------------
// Sampling

const char* to_string(ClickCause cause) {
  switch (cause) {
    case ClickCause::photon: return "photon";
    case ClickCause::dark: return "dark";
    case ClickCause::delayed: return "delayed";
  }
  return "?";
}

DetectorState make_detector_state(DetectorConfig config,
                                  SuperlinearitySurface surface,
                                  EnergyTimeModel timing, int index,
                                  std::uint64_t seed) {
  config.validate();
  DetectorState st{std::move(config), std::move(surface), std::move(timing),
                   0.0,  0.0,         index,
                   SplitMix64(seed),  0.0,  -1.0e300};
  return st;
}

std::vector<ClickEvent> advance_darks(DetectorState& state, double until_s) {
  std::vector<ClickEvent> out;
  if (state.config.dark_rate_hz > 0.0) {
    double t = state.now_s;
    for (;;) {
      t += state.rng.exponential(state.config.dark_rate_hz);
      if (t >= until_s) break;
      if (t >= state.deadtime_until_s) {
        state.deadtime_until_s = t + state.config.deadtime_s;
        out.push_back(ClickEvent{state.index, t, ClickCause::dark, -1});
      }
    }
  }
  state.now_s = std::max(state.now_s, until_s);
  return out;
}

std::optional<ClickEvent> sample_detection(DetectorState& state,
                                           const IncidentPulse& pulse,
                                           double window_end_s) {
  if (pulse.arrival_s < state.now_s) {
    throw ConfigError("pulse feed must be monotone in time");
  }

  // Darks before the pulse may swallow it via deadtime.
  auto darks_before = advance_darks(state, pulse.arrival_s);

  std::optional<ClickEvent> photon_click;
  if (pulse.mu > 0.0 && pulse.arrival_s >= state.deadtime_until_s) {
    const double eta =
        state.surface.value(pulse.trigger_shift_s, pulse.mu);
    const double p_click = -std::expm1(-pulse.mu * eta);
    const auto timing =
        state.timing.shift(pulse.trigger_shift_s, pulse.mu);
    if (state.rng.bernoulli(p_click)) {
      const double dt = std::clamp(
          state.rng.gaussian(timing.mean_shift_s,
                             timing.fwhm_s / kFwhmToSigma),
          state.timing.clamp_lo_s(), state.timing.clamp_hi_s());
      const double t_click = pulse.arrival_s + state.nominal_latency_s + dt;
      photon_click = ClickEvent{state.index, t_click, ClickCause::photon,
                                pulse.pulse_id};
    } else if (state.p_delay > 0.0 && p_click > 0.0 &&
               state.rng.bernoulli(state.p_delay)) {
      // Near-threshold miss re-fires one gate later.
      const double dt = std::clamp(
          state.rng.gaussian(timing.mean_shift_s,
                             timing.fwhm_s / kFwhmToSigma),
          state.timing.clamp_lo_s(), state.timing.clamp_hi_s());
      const double t_click = pulse.arrival_s + state.nominal_latency_s + dt +
                             state.config.gate_period_s();
      photon_click = ClickEvent{state.index, t_click, ClickCause::delayed,
                                pulse.pulse_id};
    }
    // The avalanche cannot fire while the detector is still quenched: a
    // sampled click time inside the deadtime (possible because bright
    // clicks advance ahead of their arrival) is suppressed.
    if (photon_click && photon_click->time_s < state.deadtime_until_s) {
      photon_click.reset();
    }
    if (photon_click) {
      state.deadtime_until_s =
          photon_click->time_s + state.config.deadtime_s;
    }
  }

  auto darks_after = advance_darks(state, window_end_s);

  // Earliest click in the swept range wins; with windows shorter than the
  // deadtime at most one survives the thinning above.
  std::optional<ClickEvent> first;
  for (const auto& c : darks_before) {
    if (!first || c.time_s < first->time_s) first = c;
  }
  if (photon_click && (!first || photon_click->time_s < first->time_s)) {
    first = photon_click;
  }
  for (const auto& c : darks_after) {
    if (!first || c.time_s < first->time_s) first = c;
  }
  return first;
}

}  // namespace qkdsim::detector
