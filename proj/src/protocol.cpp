#include "qkdsim/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qkdsim/errors.hpp"

namespace qkdsim::protocol {

double projection_prob(const PolarizationState& state, double analyzer_rad) {
  const double c = std::cos(state.angle_rad - analyzer_rad);
  return c * c;
}

long sample_photon_number(double mu, SplitMix64& rng) {
  if (mu < 0.0) throw ConfigError("mean photon number must be nonnegative");
  return rng.poisson(mu);
}

const char* to_string(Basis basis) {
  return basis == Basis::rectilinear ? "rectilinear" : "diagonal";
}

double analyzer_angle(Basis basis, int port) {
  const double base = basis == Basis::rectilinear ? 0.0 : 0.7853981633974483;
  return port == 0 ? base : base + 1.5707963267948966;
}

PolarizationState bb84_state(int bit, Basis basis) {
  return PolarizationState{analyzer_angle(basis, bit)};
}

SplitFractions split_energies(const PolarizationState& state, Basis basis,
                              std::optional<double> extinction_db) {
  double p = projection_prob(state, analyzer_angle(basis, 0));
  // Snap arithmetic noise so orthogonal states route exactly nothing.
  if (p < 1e-12) p = 0.0;
  if (p > 1.0 - 1e-12) p = 1.0;
  if (!extinction_db) return SplitFractions{p, 1.0 - p};
  if (!(*extinction_db > 0.0)) {
    throw ConfigError("extinction ratio must be positive (dB)");
  }
  // Finite analyzer quality leaks a floor fraction into the dark port.
  const double eps = std::pow(10.0, -*extinction_db / 10.0);
  const double f0 = p + eps * (1.0 - p);
  const double f1 = (1.0 - p) + eps * p;
  const double sum = f0 + f1;
  return SplitFractions{f0 / sum, f1 / sum};
}

double BitSlotTimeline::offset(Device device) const {
  switch (device) {
    case Device::pm: return offset_pm_s;
    case Device::d0: return offset_d0_s;
    case Device::d1: return offset_d1_s;
  }
  return 0.0;
}

std::int64_t BitSlotTimeline::slot_of(Device device, double t_s) const {
  return static_cast<std::int64_t>(
      std::floor((t_s - offset(device)) / slot_period_s));
}

void BitSlotTimeline::validate() const {
  if (!(slot_period_s > 0.0)) throw ConfigError("slot period must be positive");
  if (gates_per_slot < 1) throw ConfigError("gates per slot must be >= 1");
}

BitSlotTimeline BitSlotTimeline::default_62_5mhz() {
  return BitSlotTimeline{16e-9, 5, 0.0, 0.0, 0.0};
}

void BobConfig::validate() const {
  if (extinction_db && !(*extinction_db > 0.0)) {
    throw ConfigError("extinction ratio must be positive (dB)");
  }
  if (channel_transmission < 0.0 || channel_transmission > 1.0) {
    throw ConfigError("channel transmission outside [0, 1]");
  }
}

int detector_bit(int detector, bool swap) {
  return swap ? 1 - detector : detector;
}

const char* to_string(ClickDecision decision) {
  switch (decision) {
    case ClickDecision::accepted: return "accepted";
    case ClickDecision::accepted_randomized: return "accepted_randomized";
    case ClickDecision::discarded_deadtime: return "discarded_deadtime";
    case ClickDecision::discarded_double_click: return "discarded_double_click";
    case ClickDecision::discarded_out_of_session: return "out_of_session";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// SiftingArbiter

namespace {
constexpr std::size_t kRecentKeep = 32;
}  // namespace

SiftingArbiter::SiftingArbiter(ArbiterConfig config,
                               std::function<SlotTruth(std::int64_t)> truth,
                               SplitMix64 rng)
    : config_(config), truth_(std::move(truth)), rng_(rng) {
  next_slot_ = std::numeric_limits<std::int64_t>::min();
  if (config_.session_slots <= 0) {
    throw ConfigError("session slot count must be positive");
  }
  if (config_.deadtime_slots < 0) {
    throw ConfigError("deadtime slot count must be nonnegative");
  }
  counters_.slots_total = config_.session_slots;
  last_click_slot_ = -1;
  has_last_click_ = config_.start_in_deadtime;
}

void SiftingArbiter::set_countermeasure_hook(CountermeasureHook hook) {
  countermeasure_ = std::move(hook);
}

void SiftingArbiter::set_click_observer(
    std::function<void(const ArbiterClick&, ClickDecision)> observer) {
  click_observer_ = std::move(observer);
}

void SiftingArbiter::set_record_observer(
    std::function<void(const SiftedRecord&)> observer) {
  record_observer_ = std::move(observer);
}

void SiftingArbiter::push(ArbiterClick click) {
  if (finished_) throw ConfigError("arbiter already finished");
  if (click.slot < next_slot_) {
    throw ConfigError("click pushed for an already finalized slot");
  }
  counters_.clicks_total++;
  switch (click.click.cause) {
    case detector::ClickCause::photon: counters_.clicks_photon++; break;
    case detector::ClickCause::dark: counters_.clicks_dark++; break;
    case detector::ClickCause::delayed: counters_.clicks_delayed++; break;
  }
  pending_.push_back(std::move(click));
}

void SiftingArbiter::finalize_through(std::int64_t slot) {
  // Resolve, in slot order, every pending slot with clicks up to `slot`.
  // One slot is extracted at a time so that clicks of later slots stay
  // visible to the coincidence neighbor scan. Slots without clicks need
  // no work.
  while (!pending_.empty()) {
    std::int64_t lowest = std::numeric_limits<std::int64_t>::max();
    for (const auto& c : pending_) lowest = std::min(lowest, c.slot);
    if (lowest > slot) break;
    std::vector<ArbiterClick> clicks;
    auto it = pending_.begin();
    while (it != pending_.end()) {
      if (it->slot == lowest) {
        clicks.push_back(std::move(*it));
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
    resolve_slot(lowest, clicks);
  }
  next_slot_ = std::max(next_slot_, slot + 1);
}

void SiftingArbiter::finish() {
  if (finished_) return;
  finalize_through(std::numeric_limits<std::int64_t>::max() - 1);
  counters_.slots_no_click =
      counters_.slots_total - counters_.slots_accepted -
      counters_.slots_deadtime_discarded -
      counters_.slots_double_click_discarded;
  finished_ = true;
}

void SiftingArbiter::resolve_slot(std::int64_t slot,
                                  std::vector<ArbiterClick>& clicks) {
  std::sort(clicks.begin(), clicks.end(),
            [](const ArbiterClick& a, const ArbiterClick& b) {
              if (a.click.time_s != b.click.time_s) {
                return a.click.time_s < b.click.time_s;
              }
              return a.click.detector < b.click.detector;
            });

  auto remember = [this](const ArbiterClick& c) {
    recent_.push_back(c);
    if (recent_.size() > kRecentKeep) {
      recent_.erase(recent_.begin(), recent_.begin() + 1);
    }
  };
  auto observe = [this](const ArbiterClick& c, ClickDecision d) {
    if (click_observer_) click_observer_(c, d);
  };

  const bool in_session = slot >= 0 && slot < config_.session_slots;

  if (!in_session) {
    // Physical clicks outside the scored window still move the deadtime.
    for (const auto& c : clicks) {
      counters_.clicks_discarded_out_of_session++;
      observe(c, ClickDecision::discarded_out_of_session);
      remember(c);
    }
    if (config_.extend_deadtime_on_discarded) {
      last_click_slot_ = slot;
      has_last_click_ = true;
    }
    return;
  }

  const std::int64_t lift_slot =
      has_last_click_ ? last_click_slot_ + config_.deadtime_slots + 1
                      : kNoLiftSlot;
  const bool in_deadtime =
      has_last_click_ && slot <= last_click_slot_ + config_.deadtime_slots;

  if (in_deadtime) {
    for (const auto& c : clicks) {
      counters_.clicks_discarded_deadtime++;
      observe(c, ClickDecision::discarded_deadtime);
      remember(c);
    }
    counters_.slots_deadtime_discarded++;
    if (config_.extend_deadtime_on_discarded) last_click_slot_ = slot;
    return;
  }

  bool both_detectors = false;
  for (const auto& c : clicks) {
    if (c.click.detector != clicks.front().click.detector) {
      both_detectors = true;
    }
  }

  const SlotTruth truth = truth_(slot);
  SiftedRecord record;
  record.slot = slot;
  record.truth = truth;

  if (both_detectors && config_.double_click_policy ==
                            DoubleClickPolicy::discard) {
    for (const auto& c : clicks) {
      counters_.clicks_discarded_double++;
      observe(c, ClickDecision::discarded_double_click);
      remember(c);
    }
    counters_.slots_double_click_discarded++;
    last_click_slot_ = slot;
    has_last_click_ = true;
    return;
  }

  // Earliest click wins the slot; with the random-bit policy a double
  // click is accepted but carries a fresh random bit.
  const ArbiterClick& winner = clicks.front();
  record.detector = winner.click.detector;
  record.cause = winner.click.cause;
  record.eve = winner.eve;

  if (both_detectors) {
    record.bit = rng_.bit();
    record.randomized = true;
  } else {
    record.bit = detector_bit(winner.click.detector, truth.bob_swap);
  }

  if (!record.randomized && countermeasure_) {
    double neighbor_dt = std::numeric_limits<double>::infinity();
    auto scan = [&](const ArbiterClick& other) {
      if (other.click.detector != winner.click.detector) {
        neighbor_dt = std::min(
            neighbor_dt, std::abs(other.click.time_s - winner.click.time_s));
      }
    };
    for (const auto& c : recent_) scan(c);
    for (const auto& c : pending_) scan(c);
    for (const auto& c : clicks) scan(c);
    if (countermeasure_(winner, lift_slot, neighbor_dt)) {
      record.bit = rng_.bit();
      record.randomized = true;
    }
  }

  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto& c = clicks[i];
    if (&c == &winner) {
      counters_.clicks_accepted++;
      observe(c, record.randomized ? ClickDecision::accepted_randomized
                                   : ClickDecision::accepted);
    } else if (both_detectors) {
      counters_.clicks_discarded_double++;
      observe(c, ClickDecision::discarded_double_click);
    } else {
      counters_.clicks_discarded_deadtime++;
      observe(c, ClickDecision::discarded_deadtime);
    }
    remember(c);
  }
  counters_.slots_accepted++;
  last_click_slot_ = slot;
  has_last_click_ = true;

  // Sifting and scoring.
  record.kept = truth.alice_basis == truth.bob_basis;
  record.error = record.kept && record.bit != truth.alice_bit;

  counters_.accepted_bits++;
  counters_.ones += record.bit;
  if (record.randomized) {
    counters_.randomized_bits++;
    if (record.kept) counters_.randomized_kept_bits++;
  }
  if (record.kept) {
    counters_.kept_bits++;
    if (record.error) counters_.errors++;
    if (record.eve && record.eve->known) {
      counters_.eve_known_kept++;
      if (record.eve->bit == record.bit) counters_.eve_match_kept++;
    }
  } else {
    counters_.basis_mismatch_discards++;
  }
  if (record.eve && !record.eve->shaping) {
    counters_.attacked_accepted++;
    if (record.kept) {
      counters_.attacked_kept++;
      if (record.error) counters_.attacked_errors_kept++;
    }
  }
  if (record_observer_) record_observer_(record);
}

}  // namespace qkdsim::protocol
