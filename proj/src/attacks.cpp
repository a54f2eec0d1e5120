#include "qkdsim/attacks.hpp"

#include <cmath>
#include <string>

#include "qkdsim/errors.hpp"

namespace qkdsim::attacks {

namespace {

constexpr double kAlpha = 0.39269908169872414;  // pi/8

using protocol::Basis;
using protocol::BitSlotTimeline;
using protocol::Device;
using protocol::PolarizationState;

double sigma_of(const detector::ClickTiming& timing) {
  return timing.fwhm_s / detector::kFwhmToSigma;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("attack timing: " + message);
}

// Extinction-adjusted bright/leak fractions for a state aligned with one
// analyzer port.
std::pair<double, double> aligned_fractions(std::optional<double> ext_db) {
  if (!ext_db) return {1.0, 0.0};
  const double eps = std::pow(10.0, -*ext_db / 10.0);
  return {1.0 / (1.0 + eps), eps / (1.0 + eps)};
}

}  // namespace

const char* to_string(EveOutcomeTag tag) {
  switch (tag) {
    case EveOutcomeTag::no_detection: return "no_detection";
    case EveOutcomeTag::single_photon_skip: return "single_photon_skip";
    case EveOutcomeTag::agree_plus: return "agree_plus";
    case EveOutcomeTag::agree_minus: return "agree_minus";
    case EveOutcomeTag::disagree_skip: return "disagree_skip";
  }
  return "?";
}

EveOutcome eve_intermediate_measure(const PolarizationState& state,
                                    long n_photons, SplitMix64& rng) {
  if (n_photons < 0) throw ConfigError("photon number must be nonnegative");
  if (n_photons == 0) return EveOutcome{EveOutcomeTag::no_detection, 0, 0.0};
  if (n_photons == 1) {
    return EveOutcome{EveOutcomeTag::single_photon_skip, 0, 0.0};
  }

  const double p_plus = projection_prob(state, kAlpha);
  bool first_plus = false;
  bool all_same = true;
  for (long i = 0; i < n_photons; ++i) {
    const bool plus = rng.bernoulli(p_plus);
    if (i == 0) {
      first_plus = plus;
    } else if (plus != first_plus) {
      all_same = false;
      // Keep drawing so the consumed randomness depends only on n.
    }
  }
  if (!all_same) return EveOutcome{EveOutcomeTag::disagree_skip, 0, 0.0};

  // Posterior that the inferred bit is right, uniform prior over the four
  // BB84 states: c^(2n) / (c^(2n) + s^(2n)).
  const double c2 = std::cos(kAlpha) * std::cos(kAlpha);
  const double s2 = 1.0 - c2;
  const double cn = std::pow(c2, static_cast<double>(n_photons));
  const double sn = std::pow(s2, static_cast<double>(n_photons));
  const double confidence = cn / (cn + sn);

  if (first_plus) {
    return EveOutcome{EveOutcomeTag::agree_plus, 0, confidence};
  }
  return EveOutcome{EveOutcomeTag::agree_minus, 1, confidence};
}

std::optional<int> eve_bb84_measure(const PolarizationState& state,
                                    long n_photons, Basis basis,
                                    SplitMix64& rng) {
  if (n_photons <= 0) return std::nullopt;
  const double p0 = projection_prob(state, protocol::analyzer_angle(basis, 0));
  long port0 = 0;
  for (long i = 0; i < n_photons; ++i) {
    if (rng.bernoulli(p0)) ++port0;
  }
  const long port1 = n_photons - port0;
  if (port0 > 0 && port1 > 0) return rng.bit();
  return port0 > 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Intermediate-basis attack

IntermediateBasisPlan plan_intermediate_basis(
    const IntermediateBasisConfig& config, const ReceiverKnowledge& receiver) {
  receiver.timeline.validate();
  require(config.pulse_energy > 0.0, "pulse energy must be positive");
  require(config.margin_s > 0.0 &&
              config.margin_s < receiver.timeline.slot_period_s,
          "margin must lie inside one slot");
  require(receiver.timeline.offset_d0_s == receiver.timeline.offset_d1_s,
          "intermediate-basis attack assumes aligned detector bit windows");

  // The intermediate states project cos^2(pi/8) : sin^2(pi/8) onto the
  // ports of either BB84 basis; extinction mixes a floor into the weak
  // port.
  const double p = std::cos(kAlpha) * std::cos(kAlpha);
  const auto split = protocol::split_energies(PolarizationState::i_plus(),
                                              Basis::rectilinear,
                                              receiver.extinction_db);
  (void)p;
  IntermediateBasisPlan plan;
  plan.config = config;
  plan.mu_high = config.pulse_energy * std::max(split.port0, split.port1);
  plan.mu_low = config.pulse_energy * std::min(split.port0, split.port1);

  const auto timing_high =
      receiver.timing.shift(config.trigger_shift_s, plan.mu_high);
  const auto timing_low =
      receiver.timing.shift(config.trigger_shift_s, plan.mu_low);
  if (config.emission_phase_s) {
    // An explicit emission phase fixes the high-energy click position;
    // the boundary margin follows from it.
    const double click_high = *config.emission_phase_s +
                              receiver.nominal_latency_s +
                              timing_high.mean_shift_s;
    plan.config.margin_s = receiver.timeline.slot_period_s - click_high;
    require(plan.config.margin_s > 0.0 &&
                plan.config.margin_s < receiver.timeline.slot_period_s,
            "emission phase places the high-energy click outside the slot");
  }
  plan.click_separation_s = timing_low.mean_shift_s - timing_high.mean_shift_s;
  require(plan.click_separation_s > 0.0,
          "calibration gives no usable click-time separation");
  require(plan.click_separation_s > plan.config.margin_s,
          "click separation does not carry the weak click past the boundary");

  const double T = receiver.timeline.slot_period_s;
  // High-energy click lands margin_s before the end of the attacked slot.
  const double click_high_off = T - plan.config.margin_s;
  const double click_low_off = click_high_off + plan.click_separation_s;
  plan.emission_offset_s =
      click_high_off - receiver.nominal_latency_s - timing_high.mean_shift_s;

  const double d_off = receiver.timeline.offset_d0_s;
  require(click_high_off >= d_off && click_high_off < d_off + T,
          "high-energy click misses the attacked slot");
  require(click_low_off >= d_off + T && click_low_off < d_off + 2.0 * T,
          "low-energy click misses the following slot");
  const double pm_off = receiver.timeline.offset_pm_s;
  require(plan.emission_offset_s >= pm_off &&
              plan.emission_offset_s < pm_off + T,
          "emission transits the modulator outside the attacked bit window");

  // Jitter guards: both clicks must stay on their side of the boundary.
  require(plan.config.margin_s >=
              kJitterGuardSigmas * sigma_of(timing_high),
          "high-energy click jitter reaches the slot boundary");
  require(plan.click_separation_s - plan.config.margin_s >=
              kJitterGuardSigmas * sigma_of(timing_low),
          "low-energy click jitter reaches the slot boundary");
  return plan;
}

std::optional<FakedPulse> eve_intermediate_resend(
    const EveOutcome& outcome, const IntermediateBasisPlan& plan,
    const BitSlotTimeline& timeline, std::int64_t slot) {
  if (!outcome.agree()) return std::nullopt;
  FakedPulse pulse;
  pulse.state = outcome.tag == EveOutcomeTag::agree_plus
                    ? PolarizationState::i_plus()
                    : PolarizationState::i_minus();
  pulse.mu = plan.config.pulse_energy;
  pulse.emission_time_s = static_cast<double>(slot) * timeline.slot_period_s +
                          plan.emission_offset_s;
  pulse.trigger_shift_s = plan.config.trigger_shift_s;
  pulse.purpose = PulsePurpose::key_steal;
  pulse.annotation.known = true;
  pulse.annotation.bit = outcome.inferred_bit;
  pulse.annotation.attacked_slot = slot;
  return pulse;
}

IntermediateBasisAttack::IntermediateBasisAttack(
    const IntermediateBasisConfig& config, const ReceiverKnowledge& receiver)
    : plan_(plan_intermediate_basis(config, receiver)),
      timeline_(receiver.timeline),
      deadtime_slots_(receiver.deadtime_slots) {}

std::vector<FakedPulse> IntermediateBasisAttack::intercept(
    const AlicePulse& pulse, SplitMix64& rng) {
  const long n = rng.poisson(
      pulse.mu * plan_.config.eve_detector_efficiency);
  const auto outcome = eve_intermediate_measure(pulse.state, n, rng);
  if (!outcome.agree() || pulse.slot < next_live_slot_) return {};

  auto faked = eve_intermediate_resend(outcome, plan_, timeline_, pulse.slot);
  // The weak-port click lands one slot late and restarts the receiver's
  // deadtime from there.
  next_live_slot_ = pulse.slot + 1 + deadtime_slots_ + 1;
  return {*faked};
}

// ---------------------------------------------------------------------------
// Faked-state deadtime attack

DeadtimeAttackPlan plan_deadtime_attack(const DeadtimeAttackConfig& config,
                                        const ReceiverKnowledge& receiver) {
  receiver.timeline.validate();
  require(config.pulse_energy > 0.0, "pulse energy must be positive");
  require(receiver.extinction_db.has_value(),
          "deadtime attack requires a finite extinction ratio: the leak "
          "click is the accepted one");
  require(receiver.deadtime_slots >= 2,
          "deadtime attack needs a software deadtime of at least 2 slots");

  const double T = receiver.timeline.slot_period_s;
  require(config.boundary_margin_s > 0.0 && config.boundary_margin_s < T,
          "boundary margin must lie inside one slot");

  const auto [f_bright, f_leak] = aligned_fractions(receiver.extinction_db);
  DeadtimeAttackPlan plan;
  plan.config = config;
  plan.mu_bright = config.pulse_energy * f_bright;
  plan.mu_leak = config.pulse_energy * f_leak;

  const auto timing_bright =
      receiver.timing.shift(config.trigger_shift_s, plan.mu_bright);
  const auto timing_leak =
      receiver.timing.shift(config.trigger_shift_s, plan.mu_leak);
  const auto timing_half =
      receiver.timing.shift(config.trigger_shift_s, config.pulse_energy / 2.0);
  plan.bright_shift_s = timing_bright.mean_shift_s;
  plan.leak_delay_s = timing_leak.mean_shift_s - timing_bright.mean_shift_s;
  require(plan.leak_delay_s > config.boundary_margin_s,
          "leak click is not delayed past detector-0's slot boundary");
  if (config.dt_leak_s) {
    require(std::abs(plan.leak_delay_s - *config.dt_leak_s) < 0.25e-9,
            "configured dt_leak differs from the calibrated delay");
  }
  const double half_delay =
      timing_half.mean_shift_s - timing_bright.mean_shift_s;

  // Click targets for attacked slot N = 0; the geometry is affine in N.
  const auto& tl = receiver.timeline;
  const double t_nom = tl.offset_d0_s - config.boundary_margin_s;  // slot N-1
  const double t_leak = t_nom + plan.leak_delay_s;                 // slot N
  const double t_half = t_nom + half_delay;
  require(tl.slot_of(Device::d0, t_nom) == -1,
          "bright click does not land in detector-0 slot N-1");
  require(tl.slot_of(Device::d0, t_leak) == 0,
          "leak click does not land in detector-0 slot N");
  require(tl.slot_of(Device::d0, t_half) == -1,
          "even-split click does not land in detector-0 slot N-1");
  require(tl.slot_of(Device::d1, t_nom) == 1 &&
              tl.slot_of(Device::d1, t_leak) == 1 &&
              tl.slot_of(Device::d1, t_half) == 1,
          "detector-1 clicks do not land in slot N+1");

  const double emission =
      t_nom - receiver.nominal_latency_s - timing_bright.mean_shift_s;
  require(tl.slot_of(Device::pm, emission) == 0,
          "emission transits the modulator outside the attacked bit window");

  // Jitter guards against every relevant boundary.
  auto guard = [&](double t, Device dev, const detector::ClickTiming& tm,
                   const char* what) {
    const std::int64_t s = tl.slot_of(dev, t);
    const double lo = tl.offset(dev) + static_cast<double>(s) * T;
    const double margin = std::min(t - lo, lo + T - t);
    require(margin >= kJitterGuardSigmas * sigma_of(tm), what);
  };
  guard(t_nom, Device::d0, timing_bright, "bright click jitter guard");
  guard(t_leak, Device::d0, timing_leak, "leak click jitter guard");
  guard(t_half, Device::d0, timing_half, "even-split click jitter guard");
  guard(t_nom, Device::d1, timing_bright, "detector-1 bright jitter guard");
  guard(t_leak, Device::d1, timing_leak, "detector-1 leak jitter guard");
  guard(t_half, Device::d1, timing_half, "detector-1 even-split jitter guard");

  // Shaping pulse: a click inside the last dead slot extends the deadtime;
  // both detector frames must keep it in dead slots (N-1 for D0, the lift
  // slot itself for D1, which the extension then covers).
  const double shape_target = config.shape_phase_s;  // slot 0 frame
  for (double mu : {plan.mu_bright, plan.mu_leak, config.pulse_energy / 2.0}) {
    const auto tm = receiver.timing.shift(config.trigger_shift_s, mu);
    const double t =
        shape_target + (tm.mean_shift_s - timing_bright.mean_shift_s);
    require(tl.slot_of(Device::d0, t) == -1,
            "shaping click leaves detector-0's dead slot");
    require(tl.slot_of(Device::d1, t) == 0,
            "shaping click leaves detector-1's slot");
    guard(t, Device::d0, tm, "shaping click jitter guard (detector 0)");
    guard(t, Device::d1, tm, "shaping click jitter guard (detector 1)");
  }
  return plan;
}

DeadtimeFakedStateAttack::DeadtimeFakedStateAttack(
    const DeadtimeAttackConfig& config, const ReceiverKnowledge& receiver)
    : plan_(plan_deadtime_attack(config, receiver)),
      timeline_(receiver.timeline),
      receiver_(receiver),
      deadtime_slots_(receiver.deadtime_slots),
      // The session opens with the receiver still inside a deadtime the
      // attacker armed beforehand (a click in slot -1).
      lift_slot_(receiver.deadtime_slots) {}

std::vector<FakedPulse> DeadtimeFakedStateAttack::intercept(
    const AlicePulse& pulse, SplitMix64& rng) {
  if (pulse.slot != lift_slot_) return {};  // receiver dead: idle

  const double T = timeline_.slot_period_s;
  const double slot_start = static_cast<double>(pulse.slot) * T;
  const long n =
      rng.poisson(pulse.mu * plan_.config.eve_detector_efficiency);
  const Basis basis = rng.bit() ? Basis::diagonal : Basis::rectilinear;
  const auto bit = eve_bb84_measure(pulse.state, n, basis, rng);

  if (bit) {
    // Resend the opposite state, bright nominal click landing just before
    // detector-0's slot boundary.
    FakedPulse faked;
    faked.state = protocol::bb84_state(1 - *bit, basis);
    faked.mu = plan_.config.pulse_energy;
    faked.emission_time_s = slot_start + timeline_.offset_d0_s -
                            plan_.config.boundary_margin_s -
                            receiver_.nominal_latency_s - plan_.bright_shift_s;
    faked.trigger_shift_s = plan_.config.trigger_shift_s;
    faked.purpose = PulsePurpose::key_steal;
    faked.annotation.known = true;
    faked.annotation.bit = *bit;
    faked.annotation.basis = basis;
    faked.annotation.attacked_slot = pulse.slot;
    // The trailing detector-1 click in slot N+1 restarts the deadtime.
    lift_slot_ = pulse.slot + 1 + deadtime_slots_ + 1;
    return {faked};
  }

  // Nothing detected: extend the deadtime with a shaping click in the last
  // dead slot so the receiver never goes live unattended.
  FakedPulse shape;
  shape.state = PolarizationState::h();
  shape.mu = plan_.config.pulse_energy;
  shape.emission_time_s = slot_start + plan_.config.shape_phase_s -
                          receiver_.nominal_latency_s - plan_.bright_shift_s;
  shape.trigger_shift_s = plan_.config.trigger_shift_s;
  shape.purpose = PulsePurpose::deadtime_shaping;
  shape.annotation.known = false;
  shape.annotation.shaping = true;
  shape.annotation.attacked_slot = pulse.slot;
  lift_slot_ = pulse.slot + deadtime_slots_ + 1;
  return {shape};
}

// ---------------------------------------------------------------------------
// Superlinearity intercept-resend

SuperlinearInterceptResend::SuperlinearInterceptResend(
    const SuperlinearIrConfig& config, const ReceiverKnowledge& receiver)
    : config_(config), slot_period_s_(receiver.timeline.slot_period_s) {
  receiver.timeline.validate();
  require(config.pulse_energy > 0.0, "pulse energy must be positive");
  const double T = receiver.timeline.slot_period_s;
  require(config.emission_phase_s >= 0.0 && config.emission_phase_s < T,
          "emission phase must lie inside the slot");
  const double pm_off = receiver.timeline.offset_pm_s;
  require(config.emission_phase_s >= pm_off &&
              config.emission_phase_s < pm_off + T,
          "emission transits the modulator outside the attacked bit window");
  // Clicks at full and half energy must stay inside the attacked slot in
  // both detector frames.
  for (double mu : {config.pulse_energy, config.pulse_energy / 2.0}) {
    const auto tm = receiver.timing.shift(config.trigger_shift_s, mu);
    const double t = config.emission_phase_s + receiver.nominal_latency_s +
                     tm.mean_shift_s;
    for (auto dev : {Device::d0, Device::d1}) {
      require(receiver.timeline.slot_of(dev, t) == 0,
              "resent click leaves the attacked slot");
      const double lo = receiver.timeline.offset(dev);
      const double margin = std::min(t - lo, lo + T - t);
      require(margin >= kJitterGuardSigmas * sigma_of(tm),
              "resent click jitter reaches a slot boundary");
    }
  }
}

std::vector<FakedPulse> SuperlinearInterceptResend::intercept(
    const AlicePulse& pulse, SplitMix64& rng) {
  const long n =
      rng.poisson(pulse.mu * config_.eve_detector_efficiency);
  const Basis basis = rng.bit() ? Basis::diagonal : Basis::rectilinear;
  const auto bit = eve_bb84_measure(pulse.state, n, basis, rng);
  if (!bit) return {};

  FakedPulse faked;
  faked.state = protocol::bb84_state(*bit, basis);
  faked.mu = config_.pulse_energy;
  faked.emission_time_s =
      static_cast<double>(pulse.slot) * slot_period_s_ +
      config_.emission_phase_s;
  faked.trigger_shift_s = config_.trigger_shift_s;
  faked.purpose = PulsePurpose::key_steal;
  faked.annotation.known = true;
  faked.annotation.bit = *bit;
  faked.annotation.basis = basis;
  faked.annotation.attacked_slot = pulse.slot;
  return {faked};
}

}  // namespace qkdsim::attacks
