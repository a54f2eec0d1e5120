#pragma once

// BB84 primitives: linear polarization states and measurement statistics,
// receiver energy splitting, bit-slot timing, and the click arbitration /
// sifting pipeline shared by honest and attacked sessions.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qkdsim/detector.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim::protocol {

/// Linear polarization state, an angle on the real great circle.
struct PolarizationState {
  double angle_rad = 0.0;

  static PolarizationState h() { return {0.0}; }
  static PolarizationState v() { return {1.5707963267948966}; }
  static PolarizationState d() { return {0.7853981633974483}; }
  static PolarizationState a() { return {-0.7853981633974483}; }
  static PolarizationState i_plus() { return {0.39269908169872414}; }   // pi/8
  static PolarizationState i_minus() { return {1.9634954084936207}; }   // pi/8 + pi/2
};

/// Born-rule overlap of a linear polarization with an analyzer at angle
/// psi: cos^2(state - psi).
double projection_prob(const PolarizationState& state, double analyzer_rad);

/// Poisson photon-number sample for a coherent pulse of mean mu.
long sample_photon_number(double mu, SplitMix64& rng);

enum class Basis { rectilinear, diagonal };

const char* to_string(Basis basis);

/// Analyzer angle of a port. Port 0 carries bit 0 (H or D), port 1 the
/// orthogonal state (V or A).
double analyzer_angle(Basis basis, int port);

/// BB84 state for a (bit, basis) pair under the bit convention
/// 0 <-> {H, D}, 1 <-> {V, A}.
PolarizationState bb84_state(int bit, Basis basis);

struct SplitFractions {
  double port0 = 0.0;
  double port1 = 0.0;
};

/// Energy fractions routed to the two analyzer ports for a given incoming
/// state. A finite extinction ratio (dB) mixes a floor into the dark port:
/// a perfectly aligned state yields (1, eps)/(1 + eps) with
/// eps = 10^(-dB/10). Absent extinction means an ideal analyzer.
SplitFractions split_energies(const PolarizationState& state, Basis basis,
                              std::optional<double> extinction_db);

enum class Device { pm = 0, d0 = 1, d1 = 2 };

/// Per-device bit-window timing: slot index of a click is
/// floor((t - offset_device) / slot_period). Offsets between devices are
/// what a synchronization-tampering attacker manipulates.
struct BitSlotTimeline {
  double slot_period_s = 16e-9;
  int gates_per_slot = 5;
  double offset_pm_s = 0.0;
  double offset_d0_s = 0.0;
  double offset_d1_s = 0.0;

  double offset(Device device) const;
  std::int64_t slot_of(Device device, double t_s) const;

  void validate() const;

  /// 62.5 MHz slot rate: 16 ns slots spanning 5 gates of 3.2 ns.
  static BitSlotTimeline default_62_5mhz();
};

enum class DoubleClickPolicy { discard, random_bit };

struct BobConfig {
  bool four_state = true;  // randomly swap detector-to-bit assignment
  std::optional<double> extinction_db;  // absent = ideal analyzer
  DoubleClickPolicy double_click_policy = DoubleClickPolicy::random_bit;
  double channel_transmission = 1.0;

  void validate() const;
};

/// Bit value measured by a detector in a slot, given the four-state swap
/// choice for that slot: unswapped D0 measures port 0 (bit 0).
int detector_bit(int detector, bool swap);

/// Ground truth for one slot, supplied by the session driver.
struct SlotTruth {
  int alice_bit = 0;
  Basis alice_basis = Basis::rectilinear;
  Basis bob_basis = Basis::rectilinear;
  bool bob_swap = false;
};

/// Attacker-side annotation attached to pulses so that metrics can score
/// what the eavesdropper knows. `attacked_slot` is the slot the attacker
/// intends to steer.
struct EveAnnotation {
  bool known = false;
  int bit = 0;
  std::optional<Basis> basis;
  std::int64_t attacked_slot = -1;
  bool shaping = false;
};

/// A physical click plus everything the arbiter needs to score it.
struct ArbiterClick {
  detector::ClickEvent click;
  std::int64_t slot = 0;  // in the clicking detector's own frame
  std::optional<EveAnnotation> eve;
};

enum class ClickDecision {
  accepted,
  accepted_randomized,
  discarded_deadtime,
  discarded_double_click,
  discarded_out_of_session,
};

const char* to_string(ClickDecision decision);

/// Accepted raw-key bit with provenance.
struct SiftedRecord {
  std::int64_t slot = 0;
  int bit = 0;
  int detector = 0;
  detector::ClickCause cause = detector::ClickCause::photon;
  bool randomized = false;      // bit replaced by a countermeasure / policy
  bool kept = false;            // survived basis sifting
  bool error = false;           // kept and bit != Alice's bit
  std::optional<EveAnnotation> eve;
  SlotTruth truth;
};

struct ScoreCounters {
  // Click-level conservation: every click lands in exactly one bucket.
  std::int64_t clicks_total = 0;
  std::int64_t clicks_photon = 0;
  std::int64_t clicks_dark = 0;
  std::int64_t clicks_delayed = 0;
  std::int64_t clicks_accepted = 0;
  std::int64_t clicks_discarded_deadtime = 0;
  std::int64_t clicks_discarded_double = 0;
  std::int64_t clicks_discarded_out_of_session = 0;

  // Slot-level disposition; buckets sum to the session slot count.
  std::int64_t slots_total = 0;
  std::int64_t slots_no_click = 0;
  std::int64_t slots_accepted = 0;
  std::int64_t slots_deadtime_discarded = 0;
  std::int64_t slots_double_click_discarded = 0;

  // Sifting and key statistics.
  std::int64_t accepted_bits = 0;
  std::int64_t kept_bits = 0;
  std::int64_t basis_mismatch_discards = 0;
  std::int64_t errors = 0;
  std::int64_t ones = 0;
  std::int64_t randomized_bits = 0;
  std::int64_t randomized_kept_bits = 0;
  std::int64_t eve_known_kept = 0;
  std::int64_t eve_match_kept = 0;

  // Attacked-bit accounting (accepted bits carrying an attack annotation).
  std::int64_t attacked_accepted = 0;
  std::int64_t attacked_kept = 0;
  std::int64_t attacked_errors_kept = 0;
};

/// Sentinel lift slot when no click has been seen yet.
inline constexpr std::int64_t kNoLiftSlot =
    std::numeric_limits<std::int64_t>::min();

/// Countermeasure decision hook. Called once per accepted click; returns
/// true when the bit must be replaced by a fresh random bit. `lift_slot`
/// is the first live slot after the preceding deadtime window
/// (kNoLiftSlot before any click) and `neighbor_dt_s` the time to the
/// nearest click on the other detector (infinity when none).
using CountermeasureHook = std::function<bool(
    const ArbiterClick& click, std::int64_t lift_slot, double neighbor_dt_s)>;

struct ArbiterConfig {
  std::int64_t session_slots = 0;
  std::int64_t deadtime_slots = 0;     // simultaneous deadtime length
  bool extend_deadtime_on_discarded = true;
  bool start_in_deadtime = false;      // treat slot -1 as a prior click
  DoubleClickPolicy double_click_policy = DoubleClickPolicy::random_bit;
};

/// Streaming click arbiter: consumes clicks in any near-sorted order,
/// resolves them in slot order (simultaneous deadtime with extension,
/// double-click policy, per-slot first-click-wins), applies the
/// countermeasure hook, sifts against the per-slot truth, and accumulates
/// counters. Single-owner, sequential.
class SiftingArbiter {
 public:
  SiftingArbiter(ArbiterConfig config,
                 std::function<SlotTruth(std::int64_t)> truth,
                 SplitMix64 rng);

  void set_countermeasure_hook(CountermeasureHook hook);
  /// Observer invoked for every click once its decision is final.
  void set_click_observer(
      std::function<void(const ArbiterClick&, ClickDecision)> observer);
  /// Observer invoked for every accepted bit record.
  void set_record_observer(std::function<void(const SiftedRecord&)> observer);

  void push(ArbiterClick click);

  /// Finalizes every slot up to and including `slot`. Clicks for finalized
  /// slots must not be pushed afterwards.
  void finalize_through(std::int64_t slot);

  /// Flushes all pending slots and closes the session accounting.
  void finish();

  const ScoreCounters& counters() const { return counters_; }

 private:
  void resolve_slot(std::int64_t slot, std::vector<ArbiterClick>& clicks);

  ArbiterConfig config_;
  std::function<SlotTruth(std::int64_t)> truth_;
  SplitMix64 rng_;
  CountermeasureHook countermeasure_;
  std::function<void(const ArbiterClick&, ClickDecision)> click_observer_;
  std::function<void(const SiftedRecord&)> record_observer_;

  std::vector<ArbiterClick> pending_;
  std::int64_t next_slot_ = 0;       // lowest unfinalized slot
  std::int64_t last_click_slot_;     // deadtime anchor
  bool has_last_click_ = false;
  std::vector<ArbiterClick> recent_;  // recent clicks for coincidence checks
  ScoreCounters counters_;
  bool finished_ = false;
};

}  // namespace qkdsim::protocol
