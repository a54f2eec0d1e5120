#include "qkdsim/characterize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "qkdsim/csv.hpp"
#include "qkdsim/errors.hpp"

namespace qkdsim::characterize {

namespace {
constexpr double kNs = 1e-9;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

double predicted_click_rate(double pulse_rate_hz, double eta, double mu,
                            double dark_prob_per_gate, double window_gates) {
  if (pulse_rate_hz < 0.0 || mu < 0.0 || window_gates < 0.0) {
    throw ConfigError("count-rate inputs must be nonnegative");
  }
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta outside [0, 1]");
  if (dark_prob_per_gate < 0.0 || dark_prob_per_gate >= 1.0) {
    throw ConfigError("dark probability per gate outside [0, 1)");
  }
  const double p_photon = -std::expm1(-eta * mu);
  const double p_dark =
      -std::expm1(window_gates * std::log1p(-dark_prob_per_gate));
  return pulse_rate_hz * p_photon +
         pulse_rate_hz * (1.0 - p_photon) * p_dark;
}

double efficiency_from_rate(const CountRateRecord& rec,
                            double dark_prob_per_gate,
                            double gate_frequency_hz) {
  if (!(rec.mu > 0.0)) throw ConfigError("mu must be positive to invert");
  if (!(rec.pulse_rate_hz > 0.0)) {
    throw ConfigError("pulse rate must be positive");
  }
  if (rec.rate_hz < 0.0) throw ConfigError("rate must be nonnegative");
  if (rec.rate_hz >= rec.pulse_rate_hz) {
    throw RangeError("count rate at or above the pulse rate: saturated");
  }
  const double window_gates = rec.window_s * gate_frequency_hz;
  // eta = (1/mu) * ln[ (1 - P_D)^(theta F) / (1 - R/f) ]
  const double log_dark = window_gates * std::log1p(-dark_prob_per_gate);
  const double log_miss = std::log1p(-rec.rate_hz / rec.pulse_rate_hz);
  return (log_dark - log_miss) / rec.mu;
}

const char* to_string(PointFlag flag) {
  switch (flag) {
    case PointFlag::valid: return "valid";
    case PointFlag::saturated: return "saturated";
    case PointFlag::negative: return "negative";
    case PointFlag::unmeasurable: return "unmeasurable";
  }
  return "?";
}

const char* to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::superlinear: return "superlinear";
    case Verdict::not_superlinear: return "not_superlinear";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "?";
}

std::vector<bool> saturation_mask(const std::vector<double>& rates,
                                  double rel_tolerance) {
  std::vector<bool> mask(rates.size(), false);
  if (rates.size() < 2) return mask;
  const double top = rates.back();
  const double scale = std::max(std::abs(top), 1e-300);
  std::size_t run = 0;
  for (std::size_t i = rates.size(); i-- > 0;) {
    if (std::abs(rates[i] - top) / scale <= rel_tolerance) {
      ++run;
    } else {
      break;
    }
  }
  if (run >= 2) {
    for (std::size_t i = rates.size() - run; i < rates.size(); ++i) {
      mask[i] = true;
    }
  }
  return mask;
}

EfficiencySurfaceEstimate build_estimate(
    const std::vector<CountRateRecord>& records, const MeasurementMeta& meta,
    double saturation_rel_tolerance) {
  if (records.empty()) throw ConfigError("no count-rate records");

  std::map<double, std::map<double, double>> rows;  // t -> mu -> rate
  for (const auto& r : records) {
    rows[r.trigger_shift_s][r.mu] = r.rate_hz;
  }

  EfficiencySurfaceEstimate est;
  for (const auto& [t, _] : rows) est.trigger_shifts_s.push_back(t);
  for (const auto& [mu, _] : rows.begin()->second) est.mus.push_back(mu);

  const std::size_t nt = est.trigger_shifts_s.size();
  const std::size_t nm = est.mus.size();
  est.eta.assign(nt, std::vector<double>(nm, kNaN));
  est.flags.assign(nt, std::vector<PointFlag>(nm, PointFlag::unmeasurable));

  for (std::size_t i = 0; i < nt; ++i) {
    const auto& row = rows[est.trigger_shifts_s[i]];
    if (row.size() != nm) {
      throw ConfigError("count-rate records do not form a complete grid");
    }
    std::vector<double> rates;
    rates.reserve(nm);
    for (const auto& [mu, rate] : row) {
      if (std::find(est.mus.begin(), est.mus.end(), mu) == est.mus.end()) {
        throw ConfigError("mu grid differs between trigger shifts");
      }
      rates.push_back(rate);
    }
    const auto mask = saturation_mask(rates, saturation_rel_tolerance);
    for (std::size_t j = 0; j < nm; ++j) {
      CountRateRecord rec;
      rec.trigger_shift_s = est.trigger_shifts_s[i];
      rec.mu = est.mus[j];
      rec.rate_hz = rates[j];
      rec.pulse_rate_hz = meta.pulse_rate_hz;
      rec.window_s = meta.window_s;
      if (mask[j]) {
        est.flags[i][j] = PointFlag::saturated;
        continue;
      }
      try {
        const double eta = efficiency_from_rate(rec, meta.dark_prob_per_gate(),
                                                meta.gate_frequency_hz);
        est.eta[i][j] = eta;
        est.flags[i][j] =
            eta < 0.0 ? PointFlag::negative : PointFlag::valid;
      } catch (const RangeError&) {
        est.flags[i][j] = PointFlag::saturated;
      }
    }
  }
  return est;
}

std::vector<std::optional<double>> superlinearity_factor(
    const std::vector<double>& mus, const std::vector<double>& etas) {
  if (mus.size() != etas.size()) {
    throw ConfigError("mu and eta sample counts differ");
  }
  if (mus.size() < 3) {
    throw ConfigError("superlinearity factor needs at least 3 samples");
  }
  for (std::size_t i = 1; i < mus.size(); ++i) {
    if (!(mus[i] > mus[i - 1])) {
      throw ConfigError("mu samples must strictly increase");
    }
  }
  std::vector<std::optional<double>> s(mus.size(), std::nullopt);
  for (std::size_t i = 1; i + 1 < mus.size(); ++i) {
    const double lo = etas[i - 1];
    const double hi = etas[i + 1];
    if (!(lo > 0.0) || !(hi > 0.0) || !std::isfinite(lo) ||
        !std::isfinite(hi)) {
      continue;  // skipped and reported as missing
    }
    s[i] = (std::log(hi) - std::log(lo)) /
           (std::log(mus[i + 1]) - std::log(mus[i - 1]));
  }
  return s;
}

SuperlinearityDecision is_superlinear(const EfficiencySurfaceEstimate& est,
                                      double epsilon) {
  if (est.trigger_shifts_s.empty() || est.mus.empty()) {
    throw ConfigError("empty efficiency estimate");
  }
  SuperlinearityDecision out;
  bool any_valid = false;
  double best_rise = -std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < est.trigger_shifts_s.size(); ++i) {
    // Best pair in O(n): track the running minimum over lower mu.
    std::optional<std::size_t> min_j;
    for (std::size_t j = 0; j < est.mus.size(); ++j) {
      if (!est.valid(i, j)) continue;
      any_valid = true;
      if (min_j && est.eta[i][j] - est.eta[i][*min_j] > best_rise) {
        best_rise = est.eta[i][j] - est.eta[i][*min_j];
        out.witness = Witness{est.trigger_shifts_s[i], est.mus[*min_j],
                              est.mus[j], est.eta[i][*min_j], est.eta[i][j]};
      }
      if (!min_j || est.eta[i][j] < est.eta[i][*min_j]) min_j = j;
    }
  }

  if (!any_valid) {
    out.verdict = Verdict::indeterminate;
    out.witness.reset();
    return out;
  }
  if (out.witness && best_rise > epsilon) {
    out.verdict = Verdict::superlinear;
  } else {
    out.verdict = Verdict::not_superlinear;
    out.witness.reset();
  }
  return out;
}

double intercept_resend_qber(double p_f, double p_h) {
  if (p_f < 0.0 || p_f > 1.0 || p_h < 0.0 || p_h > 1.0) {
    throw ConfigError("click probabilities outside [0, 1]");
  }
  if (p_f == 0.0 && p_h == 0.0) {
    throw ConfigError("intercept-resend QBER undefined when nothing clicks");
  }
  const double g = 2.0 * p_h - p_h * p_h;  // any-click prob at half energy
  return g / (2.0 * p_f + 2.0 * g);
}

SuperlinearityReport analyze(const std::vector<CountRateRecord>& records,
                             const MeasurementMeta& meta,
                             const AnalysisOptions& options) {
  SuperlinearityReport report;
  report.estimate =
      build_estimate(records, meta, options.saturation_rel_tolerance);
  const auto& est = report.estimate;

  report.max_s = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < est.trigger_shifts_s.size(); ++i) {
    std::vector<double> etas(est.mus.size(), kNaN);
    for (std::size_t j = 0; j < est.mus.size(); ++j) {
      if (est.valid(i, j)) etas[j] = est.eta[i][j];
    }
    if (est.mus.size() < 3) continue;
    const auto s_row = superlinearity_factor(est.mus, etas);
    for (std::size_t j = 0; j < s_row.size(); ++j) {
      if (!s_row[j]) continue;
      SGridCell cell{est.trigger_shifts_s[i], est.mus[j], *s_row[j]};
      report.s_grid.push_back(cell);
      if (cell.s > report.max_s) {
        report.max_s = cell.s;
        report.max_s_cell = cell;
      }
    }
  }
  if (report.s_grid.empty()) report.max_s = kNaN;

  report.decision = is_superlinear(est, options.witness_epsilon);

  for (std::size_t i = 0; i < est.trigger_shifts_s.size(); ++i) {
    for (std::size_t j = 0; j < est.mus.size(); ++j) {
      if (!est.valid(i, j)) {
        report.masked_points.emplace_back(est.trigger_shifts_s[i],
                                          est.mus[j]);
      }
    }
  }

  // Intercept-resend QBER curve: p_f at the grid energy, p_h at half of
  // it, both from the estimated surface. Half energies below the grid or
  // falling on invalid points are skipped.
  for (std::size_t i = 0; i < est.trigger_shifts_s.size(); ++i) {
    for (std::size_t j = 0; j < est.mus.size(); ++j) {
      if (!est.valid(i, j)) continue;
      const double mu = est.mus[j];
      const double half = mu / 2.0;
      if (half < est.mus.front()) continue;
      // Interpolate eta at half energy along this trigger-shift row.
      auto it = std::upper_bound(est.mus.begin(), est.mus.end(), half);
      const std::size_t hi = static_cast<std::size_t>(it - est.mus.begin());
      const std::size_t lo = hi == 0 ? 0 : hi - 1;
      const std::size_t hj = std::min(hi, est.mus.size() - 1);
      if (!est.valid(i, lo) || !est.valid(i, hj)) continue;
      double eta_half;
      if (hj == lo) {
        eta_half = est.eta[i][lo];
      } else {
        const double w = (std::log(half) - std::log(est.mus[lo])) /
                         (std::log(est.mus[hj]) - std::log(est.mus[lo]));
        eta_half = est.eta[i][lo] + (est.eta[i][hj] - est.eta[i][lo]) * w;
      }
      if (eta_half < 0.0) continue;
      const double p_f = -std::expm1(-std::clamp(est.eta[i][j], 0.0, 1.0) * mu);
      const double p_h = -std::expm1(-std::clamp(eta_half, 0.0, 1.0) * half);
      if (p_f == 0.0 && p_h == 0.0) continue;
      report.qber_curve.push_back(
          InterceptQberPoint{est.trigger_shifts_s[i], mu,
                   intercept_resend_qber(p_f, p_h)});
    }
  }
  return report;
}

std::vector<CountRateRecord> records_from_csv(const std::string& path,
                                              const MeasurementMeta& meta) {
  const auto csv = read_csv(path);
  const std::size_t ct = csv.column("trigger_shift_ns");
  const std::size_t cm = csv.column("mu");
  const std::size_t cr = csv.column("rate_hz");
  std::vector<CountRateRecord> out;
  out.reserve(csv.rows.size());
  for (const auto& row : csv.rows) {
    CountRateRecord rec;
    rec.trigger_shift_s = row[ct] * kNs;
    rec.mu = row[cm];
    rec.rate_hz = row[cr];
    rec.pulse_rate_hz = meta.pulse_rate_hz;
    rec.window_s = meta.window_s;
    if (!(rec.mu > 0.0)) throw ConfigError(path + ": mu must be positive");
    if (rec.rate_hz < 0.0) {
      throw ConfigError(path + ": rate must be nonnegative");
    }
    out.push_back(rec);
  }
  if (out.empty()) throw EmptyResultError(path + ": no data rows");
  return out;
}

std::vector<CountRateRecord> simulate_count_rates(
    const detector::DetectorConfig& config,
    const detector::SuperlinearitySurface& surface,
    const detector::EnergyTimeModel& timing,
    const std::vector<double>& trigger_shifts_s,
    const std::vector<double>& mus, long pulses_per_point,
    const MeasurementMeta& meta, std::uint64_t seed) {
  if (pulses_per_point <= 0) {
    throw ConfigError("pulses per point must be positive");
  }
  std::vector<CountRateRecord> out;
  const double period = 1.0 / meta.pulse_rate_hz;
  std::uint64_t stream = 0;
  for (double t_shift : trigger_shifts_s) {
    for (double mu : mus) {
      auto state = detector::make_detector_state(
          config, surface, timing, 0,
          derive_seed({seed, 0x7e57ull, stream++}));
      long clicks = 0;
      for (long p = 0; p < pulses_per_point; ++p) {
        const double arrival = static_cast<double>(p + 1) * period;
        const double win_lo = arrival - meta.window_s / 2.0;
        const double win_hi = arrival + meta.window_s / 2.0;
        // Sweep darks up to the window so only in-window clicks compete.
        detector::advance_darks(state, win_lo);
        const auto click = detector::sample_detection(
            state, detector::IncidentPulse{arrival, t_shift, mu, p}, win_hi);
        if (click && click->time_s >= win_lo && click->time_s < win_hi) {
          ++clicks;
        }
      }
      CountRateRecord rec;
      rec.trigger_shift_s = t_shift;
      rec.mu = mu;
      rec.rate_hz = meta.pulse_rate_hz * static_cast<double>(clicks) /
                    static_cast<double>(pulses_per_point);
      rec.pulse_rate_hz = meta.pulse_rate_hz;
      rec.window_s = meta.window_s;
      out.push_back(rec);
    }
  }
  return out;
}

}  // namespace qkdsim::characterize
