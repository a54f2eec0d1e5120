#pragma once

// Eavesdropper strategies producing faked pulses: the intermediate-basis
// attack, the faked-state deadtime/synchronization attack, and the
// superlinearity intercept-resend attack.

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "qkdsim/detector.hpp"
#include "qkdsim/protocol.hpp"
#include "qkdsim/rng.hpp"

namespace qkdsim::attacks {

enum class PulsePurpose { key_steal, deadtime_shaping };

/// Bright classical pulse injected by the attacker.
struct FakedPulse {
  protocol::PolarizationState state;
  double mu = 0.0;             // bright, deterministic-click regime
  double emission_time_s = 0.0;
  double trigger_shift_s = 0.0;
  PulsePurpose purpose = PulsePurpose::key_steal;
  protocol::EveAnnotation annotation;
};

enum class EveOutcomeTag {
  no_detection,
  single_photon_skip,
  agree_plus,
  agree_minus,
  disagree_skip,
};

const char* to_string(EveOutcomeTag tag);

struct EveOutcome {
  EveOutcomeTag tag = EveOutcomeTag::no_detection;
  int inferred_bit = 0;
  double confidence = 0.0;

  bool agree() const {
    return tag == EveOutcomeTag::agree_plus ||
           tag == EveOutcomeTag::agree_minus;
  }
};

/// Photon-number-resolving measurement in the intermediate basis
/// (analyzers at pi/8 and pi/8 + pi/2). Zero photons: no detection. One
/// photon: skipped, nothing resent. Two or more: resend-worthy only when
/// every photon lands on the same output, with Bayesian confidence
/// c^(2n) / (c^(2n) + s^(2n)) for c = cos(pi/8), s = sin(pi/8).
EveOutcome eve_intermediate_measure(const protocol::PolarizationState& state,
                                    long n_photons, SplitMix64& rng);

/// Threshold BB84 measurement of an n-photon pulse in a chosen basis:
/// nothing detected for n = 0, otherwise the fired port's bit (a random
/// bit when both ports fire).
std::optional<int> eve_bb84_measure(const protocol::PolarizationState& state,
                                    long n_photons, protocol::Basis basis,
                                    SplitMix64& rng);

/// Everything the attacker knows about the receiver: bit-window timing,
/// the software deadtime length, detector calibration, analyzer quality.
struct ReceiverKnowledge {
  protocol::BitSlotTimeline timeline;
  std::int64_t deadtime_slots = 0;
  detector::EnergyTimeModel timing;
  std::optional<double> extinction_db;
  double nominal_latency_s = 0.0;
};

/// Minimum acceptable distance from a click target to the nearest bit
/// boundary, in units of the click-time jitter sigma.
inline constexpr double kJitterGuardSigmas = 4.0;

struct AlicePulse {
  std::int64_t slot = 0;
  protocol::PolarizationState state;
  double mu = 0.0;
  double emission_s = 0.0;
};

class EveStrategy {
 public:
  virtual ~EveStrategy() = default;
  /// Consumes Alice's pulse for one slot (the attacker cuts the quantum
  /// channel) and returns the pulses she injects toward the receiver.
  virtual std::vector<FakedPulse> intercept(const AlicePulse& pulse,
                                            SplitMix64& rng) = 0;
};

// ---------------------------------------------------------------------------
// Intermediate-basis attack

struct IntermediateBasisConfig {
  double pulse_energy = 2.8e5;
  double eve_detector_efficiency = 1.0;
  double trigger_shift_s = 1.2e-9;
  /// Distance of the high-energy port's nominal click before the end of
  /// the attacked slot; the low-energy click lands in the next slot.
  double margin_s = 0.7e-9;
  /// Explicit emission time within the attacked slot; overrides the
  /// margin-derived emission when set.
  std::optional<double> emission_phase_s;
};

/// Precomputed emission timing; construction validates the geometry
/// against the receiver's timeline and calibration.
struct IntermediateBasisPlan {
  IntermediateBasisConfig config;
  double emission_offset_s = 0.0;   // relative to the attacked slot start
  double click_separation_s = 0.0;  // low-energy click minus high-energy
  double mu_high = 0.0;
  double mu_low = 0.0;
};

IntermediateBasisPlan plan_intermediate_basis(
    const IntermediateBasisConfig& config, const ReceiverKnowledge& receiver);

/// Builds the resent pulse for an agreeing outcome: the detected
/// intermediate state as a bright pulse timed at the end of the attacked
/// slot. Non-agree outcomes yield nothing.
std::optional<FakedPulse> eve_intermediate_resend(
    const EveOutcome& outcome, const IntermediateBasisPlan& plan,
    const protocol::BitSlotTimeline& timeline, std::int64_t slot);

class IntermediateBasisAttack : public EveStrategy {
 public:
  IntermediateBasisAttack(const IntermediateBasisConfig& config,
                          const ReceiverKnowledge& receiver);

  std::vector<FakedPulse> intercept(const AlicePulse& pulse,
                                    SplitMix64& rng) override;

  const IntermediateBasisPlan& plan() const { return plan_; }

 private:
  IntermediateBasisPlan plan_;
  protocol::BitSlotTimeline timeline_;
  std::int64_t deadtime_slots_;
  std::int64_t next_live_slot_ = 0;
};

// ---------------------------------------------------------------------------
// Faked-state deadtime attack

struct DeadtimeAttackConfig {
  double pulse_energy = 1e7;
  double eve_detector_efficiency = 1.0;
  double trigger_shift_s = 0.0;
  /// Distance of the bright nominal click before detector-0's slot
  /// boundary; the delayed leak click crosses into the accepted slot.
  double boundary_margin_s = 0.5e-9;
  /// Offset within a dead slot where shaping clicks are placed.
  double shape_phase_s = 5.0e-9;
  /// Expected leak click delay; cross-checked against the calibration.
  std::optional<double> dt_leak_s;
};

struct DeadtimeAttackPlan {
  DeadtimeAttackConfig config;
  double leak_delay_s = 0.0;      // leak click minus bright click
  double bright_shift_s = 0.0;    // energy-time shift of the bright click
  double mu_bright = 0.0;
  double mu_leak = 0.0;
};

DeadtimeAttackPlan plan_deadtime_attack(const DeadtimeAttackConfig& config,
                                        const ReceiverKnowledge& receiver);

/// Intercept-resend in a random BB84 basis with the bright pulse carrying
/// the state opposite to the detected one, timed against staggered
/// per-detector bit windows so that only the matched-basis,
/// matched-assignment case produces an accepted click. Failed detections
/// at a deadtime lift are bridged with deadtime-shaping pulses.
class DeadtimeFakedStateAttack : public EveStrategy {
 public:
  DeadtimeFakedStateAttack(const DeadtimeAttackConfig& config,
                           const ReceiverKnowledge& receiver);

  std::vector<FakedPulse> intercept(const AlicePulse& pulse,
                                    SplitMix64& rng) override;

  const DeadtimeAttackPlan& plan() const { return plan_; }

 private:
  DeadtimeAttackPlan plan_;
  protocol::BitSlotTimeline timeline_;
  ReceiverKnowledge receiver_;
  std::int64_t deadtime_slots_;
  std::int64_t lift_slot_;
};

// ---------------------------------------------------------------------------
// Superlinearity intercept-resend attack

struct SuperlinearIrConfig {
  double pulse_energy = 2.0;
  double eve_detector_efficiency = 1.0;
  double trigger_shift_s = 0.0;
  double emission_phase_s = 8.0e-9;  // within the attacked slot
};

/// Plain intercept-resend: measure in a random BB84 basis, resend the
/// result at a fixed energy. Matched-basis slots concentrate the energy on
/// one detector; mismatched slots split it evenly, which is what the
/// superlinearity QBER bound scores.
class SuperlinearInterceptResend : public EveStrategy {
 public:
  SuperlinearInterceptResend(const SuperlinearIrConfig& config,
                             const ReceiverKnowledge& receiver);

  std::vector<FakedPulse> intercept(const AlicePulse& pulse,
                                    SplitMix64& rng) override;

 private:
  SuperlinearIrConfig config_;
  double slot_period_s_ = 16e-9;
};

}  // namespace qkdsim::attacks
