#pragma once

// Parametric model of a sinusoidally gated single-photon avalanche
// detector: gate efficiency profile, energy-dependent effective efficiency,
// energy-dependent click timing, dark counts and deadtime.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qkdsim/rng.hpp"

namespace qkdsim::detector {

/// Exact FWHM <-> sigma conversion for a Gaussian, 2*sqrt(2*ln 2).
inline constexpr double kFwhmToSigma = 2.3548200450309493;

/// Periodic single-photon detection efficiency across one gate.
/// Piecewise linear between samples, wrapping at the gate period.
class GateEfficiencyProfile {
 public:
  /// `samples` are (time within [0, period), efficiency) pairs with
  /// strictly increasing times and efficiencies in [0, 1].
  GateEfficiencyProfile(double period_s,
                        std::vector<std::pair<double, double>> samples);

  double period() const { return period_s_; }

  /// Efficiency at time t, periodic: lookup(t) == lookup(t + period).
  double lookup(double t_s) const;

  static GateEfficiencyProfile flat(double eta, double period_s);

 private:
  double period_s_;
  std::vector<std::pair<double, double>> samples_;
};

/// Click probability of an n-photon pulse under independent photon
/// detections: 1 - (1 - eta(t))^n.
double detect_prob_fock(const GateEfficiencyProfile& profile, double t_s,
                        long n);

/// Click probability of a coherent pulse of mean photon number mu:
/// 1 - exp(-mu * eta(t)), the Poisson average of the n-photon law.
double detect_prob_coherent(const GateEfficiencyProfile& profile, double t_s,
                            double mu);

struct DetectorConfig {
  double gate_frequency_hz = 312.5e6;
  double dark_rate_hz = 0.0;
  double deadtime_s = 4.34e-6;
  double peak_efficiency = 0.098;
  std::string tag = "spd";

  /// Dark count probability per gate, derived as D / F.
  double dark_prob_per_gate() const { return dark_rate_hz / gate_frequency_hz; }
  double gate_period_s() const { return 1.0 / gate_frequency_hz; }

  void validate() const;

  static DetectorConfig spd1();
  static DetectorConfig spd2();
};

/// Effective efficiency eta(t, mu): detection efficiency as a function of
/// both intra-gate trigger shift and pulse mean photon number. Backed by
/// either a measured table (bilinear in (t, ln mu)) or a per-shift power
/// law eta = c * mu^k. Queries outside the declared validity range throw;
/// no silent extrapolation.
class SuperlinearitySurface {
 public:
  struct PowerLawEntry {
    double trigger_shift_s = 0.0;
    double coefficient = 0.1;  // eta at mu = 1
    double exponent = 0.0;     // log-log slope
  };

  static SuperlinearitySurface power_law(std::vector<PowerLawEntry> entries,
                                         double mu_min, double mu_max);
  static SuperlinearitySurface table(std::vector<double> trigger_shifts_s,
                                     std::vector<double> mus,
                                     std::vector<std::vector<double>> eta);
  /// Columns: trigger_shift_ns, mu, eta. Rows may appear in any order but
  /// must form a complete rectangular grid.
  static SuperlinearitySurface from_csv(const std::string& path);

  /// eta(t, mu), clamped to [0, 1].
  double value(double trigger_shift_s, double mu) const;

  bool is_table() const { return kind_ == Kind::table; }
  const std::vector<double>& trigger_shifts() const { return t_grid_; }
  const std::vector<double>& mu_grid() const { return mu_grid_; }
  const std::vector<std::vector<double>>& eta_grid() const { return eta_; }
  double mu_min() const { return mu_min_; }
  double mu_max() const { return mu_max_; }

 private:
  enum class Kind { table, power_law };
  Kind kind_ = Kind::power_law;
  std::vector<PowerLawEntry> entries_;
  std::vector<double> t_grid_;
  std::vector<double> mu_grid_;
  std::vector<std::vector<double>> eta_;  // [t][mu]
  double mu_min_ = 0.0;
  double mu_max_ = 0.0;
};

struct ClickTiming {
  double mean_shift_s = 0.0;  // mean click time shift vs the mu = 1 response
  double fwhm_s = 0.0;        // jitter FWHM of the shift distribution
};

/// Click-time response vs pulse energy: mean shift (clicks move earlier as
/// energy rises) and jitter FWHM (narrows as energy rises). Table-backed
/// (bilinear in (t, ln mu)) or a synthetic log-linear law clamped at its
/// range edges. The shift axis zero is the mean response at mu = 1 and
/// trigger shift 0, so bright-pulse shifts are negative.
class EnergyTimeModel {
 public:
  struct LogLinearParams {
    double slope_s_per_decade = 0.4e-9;   // shift decrease per decade of mu
    double mu_ref = 100.0;                // onset of the effect
    double ref_shift_s = 0.0;             // shift at mu_ref
    double clamp_lo_s = -4.0e-9;          // sampled shifts never go below
    double clamp_hi_s = 0.0;              // ... nor above
    double fwhm_ref_s = 0.45e-9;          // jitter FWHM at and below mu_ref
    double fwhm_slope_s_per_decade = 0.10e-9;
    double fwhm_floor_s = 0.05e-9;
    double mu_min = 1e-6;
    double mu_max = 1e12;
  };

  static EnergyTimeModel log_linear(const LogLinearParams& params);
  static EnergyTimeModel table(std::vector<double> trigger_shifts_s,
                               std::vector<double> mus,
                               std::vector<std::vector<double>> dt_s,
                               std::vector<std::vector<double>> fwhm_s);
  /// Columns: trigger_shift_ns, mu, dt_ns, fwhm_ns.
  static EnergyTimeModel from_csv(const std::string& path);

  ClickTiming shift(double trigger_shift_s, double mu) const;

  /// Largest advance a sampled click can have relative to the nominal
  /// response; sampled shifts are clamped to [-max_advance, max_delay].
  double max_advance_s() const { return -clamp_lo_s_; }
  double clamp_lo_s() const { return clamp_lo_s_; }
  double clamp_hi_s() const { return clamp_hi_s_; }

  bool is_table() const { return kind_ == Kind::table; }
  const std::vector<double>& trigger_shifts() const { return t_grid_; }
  const std::vector<double>& mu_grid() const { return mu_grid_; }
  const std::vector<std::vector<double>>& dt_grid() const { return dt_; }
  const std::vector<std::vector<double>>& fwhm_grid() const { return fwhm_; }

 private:
  enum class Kind { table, log_linear };
  Kind kind_ = Kind::log_linear;
  LogLinearParams params_;
  std::vector<double> t_grid_;
  std::vector<double> mu_grid_;
  std::vector<std::vector<double>> dt_;
  std::vector<std::vector<double>> fwhm_;
  double clamp_lo_s_ = -4.0e-9;
  double clamp_hi_s_ = 0.0;
};

enum class ClickCause { photon, dark, delayed };

const char* to_string(ClickCause cause);

struct ClickEvent {
  int detector = 0;
  double time_s = 0.0;
  ClickCause cause = ClickCause::photon;
  std::int64_t pulse_id = -1;
};

struct IncidentPulse {
  double arrival_s = 0.0;
  double trigger_shift_s = 0.0;
  double mu = 0.0;
  std::int64_t pulse_id = -1;
};

/// Mutable per-detector simulation state. Single-owner: one simulation run
/// drives one state sequentially; parallel runs use independent states.
struct DetectorState {
  DetectorConfig config;
  SuperlinearitySurface surface;
  EnergyTimeModel timing;
  double p_delay = 0.0;           // delayed-click probability after a miss
  double nominal_latency_s = 0.0;
  int index = 0;
  SplitMix64 rng;

  double now_s = 0.0;                  // time swept for dark generation
  double deadtime_until_s = -1.0e300;  // no click may occur before this
};

DetectorState make_detector_state(DetectorConfig config,
                                  SuperlinearitySurface surface,
                                  EnergyTimeModel timing, int index,
                                  std::uint64_t seed);

/// Generates dark clicks as a Poisson process over [state.now, until) with
/// deadtime thinning; every emitted click extends the deadtime. Advances
/// state.now to `until`.
std::vector<ClickEvent> advance_darks(DetectorState& state, double until_s);

/// Samples the detector response to one pulse. Dark counts over
/// [state.now, window_end) compete with the photon click; the earliest
/// admissible click wins and sets the deadtime. Returns at most one click
/// (callers keep windows shorter than the deadtime whenever darks are
/// enabled). A pulse arriving inside the deadtime yields no photon click.
std::optional<ClickEvent> sample_detection(DetectorState& state,
                                           const IncidentPulse& pulse,
                                           double window_end_s);

}  // namespace qkdsim::detector
