#pragma once

// Detector certification mathematics: invert coincidence count rates to
// efficiency, decide and quantify superlinearity, flag saturation, and
// evaluate the intercept-resend QBER bound.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qkdsim/detector.hpp"

namespace qkdsim::characterize {

struct CountRateRecord {
  double trigger_shift_s = 0.0;
  double mu = 0.0;             // mean photon number of the test pulse
  double rate_hz = 0.0;        // coincidence count rate R
  double pulse_rate_hz = 0.0;  // laser repetition rate f
  double window_s = 0.0;       // coincidence window theta
};

/// Measurement-side constants shared by a set of count-rate records.
struct MeasurementMeta {
  double pulse_rate_hz = 1000.0;       // f
  double window_s = 13e-9;             // theta
  double gate_frequency_hz = 312.5e6;  // F
  double dark_rate_hz = 428.0;         // D
  double dark_prob_per_gate() const { return dark_rate_hz / gate_frequency_hz; }
  double window_gates() const { return window_s * gate_frequency_hz; }
};

/// Coincidence count rate expected from efficiency eta at mean photon
/// number mu: a photon-click term plus a dark-count term over the
/// window_gates-long coincidence window (real-valued gate count).
double predicted_click_rate(double pulse_rate_hz, double eta, double mu,
                            double dark_prob_per_gate, double window_gates);

/// Inverts predicted_click_rate for eta. Throws RangeError at saturation
/// (R >= f). A negative result is returned as-is: it diagnoses dark-count
/// inputs exceeding the observed rate and is flagged downstream, not
/// clamped.
double efficiency_from_rate(const CountRateRecord& rec,
                            double dark_prob_per_gate,
                            double gate_frequency_hz);

enum class PointFlag { valid, saturated, negative, unmeasurable };

const char* to_string(PointFlag flag);

struct EfficiencySurfaceEstimate {
  std::vector<double> trigger_shifts_s;
  std::vector<double> mus;
  std::vector<std::vector<double>> eta;     // [t][mu]; NaN where unmeasurable
  std::vector<std::vector<PointFlag>> flags;

  bool valid(std::size_t i, std::size_t j) const {
    return flags[i][j] == PointFlag::valid;
  }
};

/// Flags trailing high-energy points whose rate sits within relative
/// tolerance of the top-of-row plateau (rate virtually independent of mu).
/// `rates` must be sorted by increasing mu. A single top point is never
/// flagged; saturation needs at least two coinciding rates.
std::vector<bool> saturation_mask(const std::vector<double>& rates,
                                  double rel_tolerance);

/// Assembles an efficiency-surface estimate from count-rate records,
/// applying the saturation mask per trigger shift and flagging negative or
/// saturated inversions.
EfficiencySurfaceEstimate build_estimate(
    const std::vector<CountRateRecord>& records, const MeasurementMeta& meta,
    double saturation_rel_tolerance = 1e-3);

/// Superlinearity factor S = d(ln eta)/d(ln mu) by central differences in
/// log-log space at interior grid points. Points whose neighbours have
/// eta <= 0 (or are invalid) are skipped and reported as nullopt.
std::vector<std::optional<double>> superlinearity_factor(
    const std::vector<double>& mus, const std::vector<double>& etas);

enum class Verdict { superlinear, not_superlinear, indeterminate };

const char* to_string(Verdict verdict);

struct Witness {
  double trigger_shift_s = 0.0;
  double mu_low = 0.0;
  double mu_high = 0.0;
  double eta_low = 0.0;
  double eta_high = 0.0;
  double rise() const { return eta_high - eta_low; }
};

struct SuperlinearityDecision {
  Verdict verdict = Verdict::indeterminate;
  std::optional<Witness> witness;  // maximizing witness when superlinear
};

/// Superlinear iff some unmasked pair mu_low < mu_high at one trigger
/// shift has eta rising by more than `epsilon`. Returns the
/// maximum-rise witness. All points masked => indeterminate.
SuperlinearityDecision is_superlinear(const EfficiencySurfaceEstimate& est,
                                      double epsilon = 1e-4);

/// QBER of an intercept-resend attack against a pair of detectors with
/// click probability p_f at the attack energy and p_h at half of it.
/// Throws ConfigError when both are zero (no clicks, undefined rate).
double intercept_resend_qber(double p_f, double p_h);

struct SGridCell {
  double trigger_shift_s = 0.0;
  double mu = 0.0;
  double s = 0.0;
};

/// One point of the intercept-resend QBER curve evaluated on the
/// estimated surface (serialized as eq8_qber_curve in reports).
struct InterceptQberPoint {
  double trigger_shift_s = 0.0;
  double mu = 0.0;  // attack pulse energy; half energy read off the surface
  double qber = 0.0;
};

struct SuperlinearityReport {
  EfficiencySurfaceEstimate estimate;
  std::vector<SGridCell> s_grid;
  double max_s = 0.0;
  std::optional<SGridCell> max_s_cell;
  SuperlinearityDecision decision;
  std::vector<std::pair<double, double>> masked_points;  // (t, mu)
  std::vector<InterceptQberPoint> qber_curve;
};

struct AnalysisOptions {
  double witness_epsilon = 1e-4;
  double saturation_rel_tolerance = 1e-3;
};

/// Full certification pipeline: estimate surface, compute the S grid and
/// its maximum, decide superlinearity, and evaluate the intercept-resend
/// QBER curve on the estimated surface.
SuperlinearityReport analyze(const std::vector<CountRateRecord>& records,
                             const MeasurementMeta& meta,
                             const AnalysisOptions& options = {});

/// Loads count-rate records from CSV (columns trigger_shift_ns, mu,
/// rate_hz) using the per-measurement constants in `meta`.
std::vector<CountRateRecord> records_from_csv(const std::string& path,
                                              const MeasurementMeta& meta);

/// Simulates the coincidence testbench against a detector model: fires
/// `pulses_per_point` pulses at each (trigger shift, mu) grid point at the
/// metadata's repetition rate and counts clicks inside the coincidence
/// window. Used to validate that characterization recovers a known
/// surface.
std::vector<CountRateRecord> simulate_count_rates(
    const detector::DetectorConfig& config,
    const detector::SuperlinearitySurface& surface,
    const detector::EnergyTimeModel& timing,
    const std::vector<double>& trigger_shifts_s,
    const std::vector<double>& mus, long pulses_per_point,
    const MeasurementMeta& meta, std::uint64_t seed);

}  // namespace qkdsim::characterize
