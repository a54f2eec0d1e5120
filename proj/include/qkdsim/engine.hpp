#pragma once

// Deterministic Monte Carlo session runner: wires Alice, the channel or an
// attacker, the receiver, countermeasure policies, and metrics; supports
// parameter sweeps and a raw detector-exercise mode for timing studies.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qkdsim/attacks.hpp"
#include "qkdsim/detector.hpp"
#include "qkdsim/protocol.hpp"

namespace qkdsim::engine {

using json = nlohmann::ordered_json;

/// Full model of one physical detector channel.
struct DetectorSpec {
  detector::DetectorConfig config;
  detector::SuperlinearitySurface surface =
      detector::SuperlinearitySurface::power_law(
          {{0.0, 0.098, 0.0}}, 1e-9, 1e12);
  detector::EnergyTimeModel timing = detector::EnergyTimeModel::log_linear({});
  double p_delay = 0.0;
  double latency_s = 0.0;
};

enum class AttackKind {
  none,
  intermediate_basis,
  deadtime_faked_state,
  superlinear_ir,
};

const char* to_string(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::none;
  attacks::IntermediateBasisConfig intermediate;
  attacks::DeadtimeAttackConfig deadtime;
  attacks::SuperlinearIrConfig superlinear;
};

struct CountermeasurePolicy {
  bool coincidence_enabled = false;
  double coincidence_window_s = 2.5e-9;
  bool post_deadtime_enabled = false;
  std::int64_t post_deadtime_slots = 1;

  void validate() const;
};

enum class CountermeasureAction { keep, coincidence_randomize, post_deadtime_randomize };

/// Pure countermeasure decision for one accepted click: coincident clicks
/// on the two detectors within the window, or clicks inside the first K
/// live slots after a deadtime, get a fresh random bit.
CountermeasureAction apply_countermeasures(const CountermeasurePolicy& policy,
                                           std::int64_t click_slot,
                                           std::int64_t lift_slot,
                                           double neighbor_dt_s);

struct SessionConfig {
  std::int64_t slots = 0;
  std::uint64_t seed = 1;
  double alice_mu = 0.5;
  double alice_phase_s = 8e-9;
  protocol::BitSlotTimeline timeline = protocol::BitSlotTimeline::default_62_5mhz();
  protocol::BobConfig bob;
  DetectorSpec d0;
  DetectorSpec d1;
  std::optional<std::int64_t> deadtime_slots_override;
  bool start_in_deadtime = false;
  bool extend_deadtime_on_discarded = true;
  CountermeasurePolicy countermeasures;
  AttackConfig attack;

  /// Software simultaneous-deadtime length: the override when given, else
  /// ceil(max hardware deadtime / slot period).
  std::int64_t effective_deadtime_slots() const;

  void validate() const;
};

struct SessionMetrics {
  std::int64_t slots = 0;
  std::uint64_t seed = 0;
  protocol::ScoreCounters counters;
  std::int64_t cm_coincidence_randomized = 0;
  std::int64_t cm_post_deadtime_randomized = 0;

  /// Errors over kept (sifted) bits.
  double qber = 0.0;
  double sift_keep_fraction = 0.0;
  double raw_ones_fraction = 0.0;
  /// Fraction of the kept key whose value the attacker holds correctly.
  double eve_known_fraction = 0.0;
  /// Errors among kept attack-driven bits over all accepted attack-driven
  /// bits (acceptances sifted away count toward the denominator only).
  double attacked_bit_qber = 0.0;
};

json metrics_to_json(const SessionMetrics& metrics);

/// Streaming CSV trace writer; columns
/// slot,device,click_time_ns,cause,decision,trigger_shift_ns,mu,pulse_time_ns.
class TraceSink {
 public:
  explicit TraceSink(std::ostream& out);
  void write(std::int64_t slot, const std::string& device, double click_time_s,
             const char* cause, const char* decision, double trigger_shift_s,
             double mu, double pulse_time_s);

 private:
  std::ostream& out_;
};

/// Optional observers for tests and analysis tooling.
struct SessionHooks {
  std::function<void(const protocol::SiftedRecord&)> on_record;
  std::function<void(const protocol::ArbiterClick&, protocol::ClickDecision)>
      on_click;
};

SessionMetrics run_session(const SessionConfig& config,
                           TraceSink* trace = nullptr,
                           const SessionHooks* hooks = nullptr);

// ---------------------------------------------------------------------------
// Detector exercise: fires a grid of pulses at a single detector and
// records raw click times, the input for click-time histograms.

struct ExerciseConfig {
  std::uint64_t seed = 1;
  DetectorSpec detector;
  std::vector<double> trigger_shifts_s;
  std::vector<double> mus;
  long pulses_per_point = 10000;
  double spacing_s = 1e-3;  // pulse period, long enough to clear deadtime
};

struct ExercisePoint {
  double trigger_shift_s = 0.0;
  double mu = 0.0;
  long pulses = 0;
  long clicks = 0;
  double mean_shift_s = 0.0;  // mean of click time minus arrival
  double rms_shift_s = 0.0;
};

std::vector<ExercisePoint> run_detector_exercise(const ExerciseConfig& config,
                                                 TraceSink* trace);

// ---------------------------------------------------------------------------
// JSON configuration

/// Parses a session configuration; `base_dir` anchors relative CSV paths.
/// Validation failures name the offending field path.
SessionConfig session_config_from_json(const json& j,
                                       const std::filesystem::path& base_dir);

ExerciseConfig exercise_config_from_json(const json& j,
                                         const std::filesystem::path& base_dir);

/// True when the configuration selects the detector-exercise mode.
bool is_exercise_config(const json& j);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepAxis {
  std::string path;            // dotted key path into the session JSON
  std::vector<json> values;
};

struct SweepResult {
  std::vector<json> rows;  // one {cell_index, overrides, metrics} per cell
};

/// Runs the cartesian product of the axes over the base configuration.
/// Every cell derives its seed from the base seed and the cell index, so
/// the table is reproducible independent of execution order.
SweepResult run_sweep(const json& base_config, const std::vector<SweepAxis>& axes,
                      const std::filesystem::path& base_dir);

std::vector<SweepAxis> sweep_axes_from_json(const json& grid);

}  // namespace qkdsim::engine
