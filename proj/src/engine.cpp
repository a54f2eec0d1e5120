#include "qkdsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "qkdsim/errors.hpp"

namespace qkdsim::engine {

namespace {

constexpr double kNs = 1e-9;

// Stream tags for deriving independent randomness from the master seed.
enum Stream : std::uint64_t {
  kStreamTruth = 0x01,
  kStreamDetector = 0x02,
  kStreamEve = 0x03,
  kStreamArbiter = 0x04,
  kStreamSweep = 0x05,
  kStreamExercise = 0x06,
};

using protocol::ArbiterClick;
using protocol::Basis;
using protocol::Device;
using protocol::SlotTruth;

SlotTruth slot_truth(std::uint64_t seed, bool four_state, std::int64_t slot) {
  const std::uint64_t w =
      derive_seed({seed, kStreamTruth, static_cast<std::uint64_t>(slot)});
  SlotTruth t;
  t.alice_bit = static_cast<int>(w & 1);
  t.alice_basis = (w >> 1) & 1 ? Basis::diagonal : Basis::rectilinear;
  t.bob_basis = (w >> 2) & 1 ? Basis::diagonal : Basis::rectilinear;
  t.bob_swap = four_state && ((w >> 3) & 1);
  return t;
}

/// Pulse heading for the receiver, honest or faked.
struct PendingPulse {
  protocol::PolarizationState state;
  double mu = 0.0;
  double emission_s = 0.0;
  double trigger_shift_s = 0.0;
  std::optional<protocol::EveAnnotation> eve;
};

struct PulseMeta {
  double trigger_shift_s = 0.0;
  double mu = 0.0;
  double arrival_s = 0.0;
  std::optional<protocol::EveAnnotation> eve;
};

}  // namespace

const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::intermediate_basis: return "intermediate_basis";
    case AttackKind::deadtime_faked_state: return "deadtime_faked_state";
    case AttackKind::superlinear_ir: return "superlinear_ir";
  }
  return "?";
}

void CountermeasurePolicy::validate() const {
  if (coincidence_enabled && !(coincidence_window_s > 0.0)) {
    throw ConfigError("countermeasures.coincidence.window_ns must be positive");
  }
  if (post_deadtime_enabled && post_deadtime_slots < 1) {
    throw ConfigError("countermeasures.post_deadtime.slots must be >= 1");
  }
}

CountermeasureAction apply_countermeasures(const CountermeasurePolicy& policy,
                                           std::int64_t click_slot,
                                           std::int64_t lift_slot,
                                           double neighbor_dt_s) {
  if (policy.coincidence_enabled &&
      neighbor_dt_s <= policy.coincidence_window_s) {
    return CountermeasureAction::coincidence_randomize;
  }
  if (policy.post_deadtime_enabled && lift_slot != protocol::kNoLiftSlot &&
      click_slot >= lift_slot &&
      click_slot - lift_slot < policy.post_deadtime_slots) {
    return CountermeasureAction::post_deadtime_randomize;
  }
  return CountermeasureAction::keep;
}

std::int64_t SessionConfig::effective_deadtime_slots() const {
  if (deadtime_slots_override) return *deadtime_slots_override;
  const double tau =
      std::max(d0.config.deadtime_s, d1.config.deadtime_s);
  return static_cast<std::int64_t>(
      std::ceil(tau / timeline.slot_period_s - 1e-12));
}

void SessionConfig::validate() const {
  if (slots <= 0) throw ConfigError("slots must be positive");
  if (alice_mu < 0.0) throw ConfigError("alice.mu must be nonnegative");
  if (alice_phase_s < 0.0 || alice_phase_s >= timeline.slot_period_s) {
    throw ConfigError("alice.phase_ns must lie inside one slot");
  }
  timeline.validate();
  bob.validate();
  d0.config.validate();
  d1.config.validate();
  countermeasures.validate();
  if (deadtime_slots_override && *deadtime_slots_override < 0) {
    throw ConfigError("deadtime_slots must be nonnegative");
  }
  for (const auto* spec : {&d0, &d1}) {
    if (spec->p_delay < 0.0 || spec->p_delay > 1.0) {
      throw ConfigError("detectors.p_delay outside [0, 1]");
    }
    const double expected =
        static_cast<double>(timeline.gates_per_slot) *
        spec->config.gate_period_s();
    if (std::abs(expected - timeline.slot_period_s) >
        1e-6 * timeline.slot_period_s) {
      throw ConfigError(
          "timeline.slot_period_ns must equal gates_per_slot gate periods");
    }
  }
}

json metrics_to_json(const SessionMetrics& m) {
  const auto& c = m.counters;
  json j;
  j["slots"] = m.slots;
  j["seed"] = m.seed;
  j["qber"] = m.qber;
  j["sift_keep_fraction"] = m.sift_keep_fraction;
  j["raw_ones_fraction"] = m.raw_ones_fraction;
  j["eve_known_fraction"] = m.eve_known_fraction;
  j["attacked_bit_qber"] = m.attacked_bit_qber;
  json counters;
  counters["clicks_total"] = c.clicks_total;
  counters["clicks_photon"] = c.clicks_photon;
  counters["clicks_dark"] = c.clicks_dark;
  counters["clicks_delayed"] = c.clicks_delayed;
  counters["clicks_accepted"] = c.clicks_accepted;
  counters["clicks_discarded_deadtime"] = c.clicks_discarded_deadtime;
  counters["clicks_discarded_double"] = c.clicks_discarded_double;
  counters["clicks_discarded_out_of_session"] =
      c.clicks_discarded_out_of_session;
  counters["slots_total"] = c.slots_total;
  counters["slots_no_click"] = c.slots_no_click;
  counters["slots_accepted"] = c.slots_accepted;
  counters["slots_deadtime_discarded"] = c.slots_deadtime_discarded;
  counters["slots_double_click_discarded"] = c.slots_double_click_discarded;
  counters["accepted_bits"] = c.accepted_bits;
  counters["kept_bits"] = c.kept_bits;
  counters["basis_mismatch_discards"] = c.basis_mismatch_discards;
  counters["errors"] = c.errors;
  counters["ones"] = c.ones;
  counters["randomized_bits"] = c.randomized_bits;
  counters["randomized_kept_bits"] = c.randomized_kept_bits;
  counters["eve_known_kept"] = c.eve_known_kept;
  counters["eve_match_kept"] = c.eve_match_kept;
  counters["attacked_accepted"] = c.attacked_accepted;
  counters["attacked_kept"] = c.attacked_kept;
  counters["attacked_errors_kept"] = c.attacked_errors_kept;
  j["counters"] = std::move(counters);
  json cm;
  cm["coincidence_randomized"] = m.cm_coincidence_randomized;
  cm["post_deadtime_randomized"] = m.cm_post_deadtime_randomized;
  j["countermeasures"] = std::move(cm);
  return j;
}

TraceSink::TraceSink(std::ostream& out) : out_(out) {
  // Full precision: click and pulse times differ at the sub-ns level on
  // absolute axes many orders of magnitude larger.
  out_.precision(17);
  out_ << "slot,device,click_time_ns,cause,decision,trigger_shift_ns,mu,"
          "pulse_time_ns\n";
}

void TraceSink::write(std::int64_t slot, const std::string& device,
                      double click_time_s, const char* cause,
                      const char* decision, double trigger_shift_s, double mu,
                      double pulse_time_s) {
  out_ << slot << ',' << device << ',' << click_time_s / kNs << ',' << cause
       << ',' << decision << ',' << trigger_shift_s / kNs << ',' << mu << ','
       << pulse_time_s / kNs << '\n';
}

// ---------------------------------------------------------------------------
// Session runner

SessionMetrics run_session(const SessionConfig& config, TraceSink* trace,
                           const SessionHooks* hooks) {
  config.validate();

  const double T = config.timeline.slot_period_s;
  const std::int64_t deadtime_slots = config.effective_deadtime_slots();

  auto det0 = detector::make_detector_state(
      config.d0.config, config.d0.surface, config.d0.timing, 0,
      derive_seed({config.seed, kStreamDetector, 0}));
  det0.p_delay = config.d0.p_delay;
  det0.nominal_latency_s = config.d0.latency_s;
  auto det1 = detector::make_detector_state(
      config.d1.config, config.d1.surface, config.d1.timing, 1,
      derive_seed({config.seed, kStreamDetector, 1}));
  det1.p_delay = config.d1.p_delay;
  det1.nominal_latency_s = config.d1.latency_s;
  detector::DetectorState* dets[2] = {&det0, &det1};

  const auto truth = [&config](std::int64_t slot) {
    return slot_truth(config.seed, config.bob.four_state, slot);
  };

  protocol::ArbiterConfig arbiter_config;
  arbiter_config.session_slots = config.slots;
  arbiter_config.deadtime_slots = deadtime_slots;
  arbiter_config.extend_deadtime_on_discarded =
      config.extend_deadtime_on_discarded;
  arbiter_config.start_in_deadtime = config.start_in_deadtime;
  arbiter_config.double_click_policy = config.bob.double_click_policy;
  protocol::SiftingArbiter arbiter(
      arbiter_config, truth,
      SplitMix64(derive_seed({config.seed, kStreamArbiter})));

  SessionMetrics metrics;
  metrics.slots = config.slots;
  metrics.seed = config.seed;

  const auto& cm = config.countermeasures;
  arbiter.set_countermeasure_hook(
      [&cm, &metrics](const ArbiterClick& click, std::int64_t lift_slot,
                      double neighbor_dt) {
        switch (apply_countermeasures(cm, click.slot, lift_slot,
                                      neighbor_dt)) {
          case CountermeasureAction::coincidence_randomize:
            metrics.cm_coincidence_randomized++;
            return true;
          case CountermeasureAction::post_deadtime_randomize:
            metrics.cm_post_deadtime_randomized++;
            return true;
          case CountermeasureAction::keep:
            break;
        }
        return false;
      });

  // Pulse metadata, addressed by pulse id; only kept while tracing.
  std::vector<PulseMeta> metas;
  if (trace || (hooks && hooks->on_click)) {
    arbiter.set_click_observer([&, hooks, trace](
                                   const ArbiterClick& click,
                                   protocol::ClickDecision decision) {
      if (trace) {
        PulseMeta meta;
        if (click.click.pulse_id >= 0 &&
            click.click.pulse_id < static_cast<std::int64_t>(metas.size())) {
          meta = metas[static_cast<std::size_t>(click.click.pulse_id)];
        } else {
          meta.arrival_s = click.click.time_s;
        }
        const auto& ds = click.click.detector == 0 ? config.d0 : config.d1;
        trace->write(click.slot, ds.config.tag, click.click.time_s,
                     detector::to_string(click.click.cause),
                     protocol::to_string(decision), meta.trigger_shift_s,
                     meta.mu, meta.arrival_s);
      }
      if (hooks && hooks->on_click) hooks->on_click(click, decision);
    });
  }
  if (hooks && hooks->on_record) {
    arbiter.set_record_observer(hooks->on_record);
  }

  // Attacker setup: strategies cut the quantum channel and inject their
  // own pulses.
  std::unique_ptr<attacks::EveStrategy> eve;
  if (config.attack.kind != AttackKind::none) {
    attacks::ReceiverKnowledge knowledge{config.timeline, deadtime_slots,
                                         config.d0.timing,
                                         config.bob.extinction_db,
                                         config.d0.latency_s};
    switch (config.attack.kind) {
      case AttackKind::intermediate_basis:
        eve = std::make_unique<attacks::IntermediateBasisAttack>(
            config.attack.intermediate, knowledge);
        break;
      case AttackKind::deadtime_faked_state:
        if (!config.start_in_deadtime) {
          throw ConfigError(
              "attack.deadtime_faked_state requires start_in_deadtime: the "
              "attacker arms the receiver before the scored window");
        }
        eve = std::make_unique<attacks::DeadtimeFakedStateAttack>(
            config.attack.deadtime, knowledge);
        break;
      case AttackKind::superlinear_ir:
        eve = std::make_unique<attacks::SuperlinearInterceptResend>(
            config.attack.superlinear, knowledge);
        break;
      default:
        break;
    }
  }
  SplitMix64 eve_rng(derive_seed({config.seed, kStreamEve}));

  std::vector<PendingPulse> queue;  // sorted by emission time
  auto enqueue = [&queue](PendingPulse pulse) {
    auto it = std::upper_bound(queue.begin(), queue.end(), pulse,
                               [](const PendingPulse& a, const PendingPulse& b) {
                                 return a.emission_s < b.emission_s;
                               });
    queue.insert(it, std::move(pulse));
  };

  auto process_pulse = [&](const PendingPulse& pulse, double window_end) {
    const std::int64_t pm_slot =
        config.timeline.slot_of(Device::pm, pulse.emission_s);
    const SlotTruth tr = truth(pm_slot);
    const auto split = protocol::split_energies(pulse.state, tr.bob_basis,
                                                config.bob.extinction_db);
    // The four-state swap reroutes which physical detector sits behind
    // which analyzer port.
    double mu_d0 = pulse.mu * (tr.bob_swap ? split.port1 : split.port0);
    double mu_d1 = pulse.mu * (tr.bob_swap ? split.port0 : split.port1);
    const double mus[2] = {mu_d0, mu_d1};
    for (int d = 0; d < 2; ++d) {
      if (!(mus[d] > 0.0)) continue;
      std::int64_t id = -1;
      if (trace) {  // metadata is only needed to annotate trace rows
        id = static_cast<std::int64_t>(metas.size());
        metas.push_back(PulseMeta{pulse.trigger_shift_s, mus[d],
                                  pulse.emission_s, pulse.eve});
      }
      const auto click = detector::sample_detection(
          *dets[d],
          detector::IncidentPulse{pulse.emission_s, pulse.trigger_shift_s,
                                  mus[d], id},
          window_end);
      if (click) {
        ArbiterClick ac;
        ac.click = *click;
        ac.slot = config.timeline.slot_of(d == 0 ? Device::d0 : Device::d1,
                                          click->time_s);
        ac.eve = pulse.eve;
        arbiter.push(std::move(ac));
      }
    }
  };

  for (std::int64_t n = 0; n < config.slots; ++n) {
    const double t0 = static_cast<double>(n) * T;
    const double t1 = t0 + T;
    const SlotTruth tr = truth(n);

    attacks::AlicePulse alice;
    alice.slot = n;
    alice.state = protocol::bb84_state(tr.alice_bit, tr.alice_basis);
    alice.mu = config.alice_mu;
    alice.emission_s = t0 + config.alice_phase_s;

    if (eve) {
      for (auto& faked : eve->intercept(alice, eve_rng)) {
        PendingPulse p;
        p.state = faked.state;
        p.mu = faked.mu;
        p.emission_s = faked.emission_time_s;
        p.trigger_shift_s = faked.trigger_shift_s;
        p.eve = faked.annotation;
        enqueue(std::move(p));
      }
    } else if (alice.mu > 0.0) {
      PendingPulse p;
      p.state = alice.state;
      p.mu = alice.mu * config.bob.channel_transmission;
      p.emission_s = alice.emission_s;
      enqueue(std::move(p));
    }

    while (!queue.empty() && queue.front().emission_s < t1) {
      if (queue.front().emission_s < std::max(t0, dets[0]->now_s)) {
        throw ConfigError("attack emitted a pulse into an elapsed slot");
      }
      PendingPulse p = std::move(queue.front());
      queue.erase(queue.begin());
      process_pulse(p, t1);
    }

    if (config.d0.config.dark_rate_hz > 0.0 ||
        config.d1.config.dark_rate_hz > 0.0) {
      for (int d = 0; d < 2; ++d) {
        for (const auto& dark : detector::advance_darks(*dets[d], t1)) {
          ArbiterClick ac;
          ac.click = dark;
          ac.slot = config.timeline.slot_of(
              d == 0 ? Device::d0 : Device::d1, dark.time_s);
          arbiter.push(std::move(ac));
        }
      }
    }

    arbiter.finalize_through(n - 3);
  }

  // Trailing pulses whose emission falls past the final slot boundary.
  for (const auto& p : queue) {
    process_pulse(p, p.emission_s);
  }
  queue.clear();
  arbiter.finish();

  const auto& c = arbiter.counters();
  metrics.counters = c;
  metrics.qber =
      c.kept_bits > 0 ? static_cast<double>(c.errors) / c.kept_bits : 0.0;
  metrics.sift_keep_fraction =
      c.accepted_bits > 0
          ? static_cast<double>(c.kept_bits) / c.accepted_bits
          : 0.0;
  metrics.raw_ones_fraction =
      c.accepted_bits > 0 ? static_cast<double>(c.ones) / c.accepted_bits
                          : 0.0;
  metrics.eve_known_fraction =
      c.kept_bits > 0 ? static_cast<double>(c.eve_match_kept) / c.kept_bits
                      : 0.0;
  metrics.attacked_bit_qber =
      c.attacked_accepted > 0
          ? static_cast<double>(c.attacked_errors_kept) / c.attacked_accepted
          : 0.0;
  return metrics;
}

// ---------------------------------------------------------------------------
// Detector exercise

std::vector<ExercisePoint> run_detector_exercise(const ExerciseConfig& config,
                                                 TraceSink* trace) {
  if (config.pulses_per_point <= 0) {
    throw ConfigError("pulses_per_point must be positive");
  }
  if (!(config.spacing_s > 0.0)) {
    throw ConfigError("spacing_us must be positive");
  }
  if (config.trigger_shifts_s.empty() || config.mus.empty()) {
    throw ConfigError("detector exercise needs trigger shifts and mus");
  }
  std::vector<ExercisePoint> points;
  std::uint64_t stream = 0;
  std::int64_t row = 0;
  for (double t_shift : config.trigger_shifts_s) {
    for (double mu : config.mus) {
      auto state = detector::make_detector_state(
          config.detector.config, config.detector.surface,
          config.detector.timing, 0,
          derive_seed({config.seed, kStreamExercise, stream++}));
      state.p_delay = config.detector.p_delay;
      state.nominal_latency_s = config.detector.latency_s;

      ExercisePoint point;
      point.trigger_shift_s = t_shift;
      point.mu = mu;
      point.pulses = config.pulses_per_point;
      double sum = 0.0;
      double sum2 = 0.0;
      for (long p = 0; p < config.pulses_per_point; ++p) {
        const double arrival =
            static_cast<double>(p + 1) * config.spacing_s;
        const auto click = detector::sample_detection(
            state, detector::IncidentPulse{arrival, t_shift, mu, p},
            arrival + config.spacing_s / 2.0);
        if (!click) continue;
        point.clicks++;
        const double shift =
            click->time_s - arrival - config.detector.latency_s;
        sum += shift;
        sum2 += shift * shift;
        if (trace) {
          trace->write(row, config.detector.config.tag, click->time_s,
                       detector::to_string(click->cause), "recorded", t_shift,
                       mu, arrival);
        }
      }
      if (point.clicks > 0) {
        point.mean_shift_s = sum / point.clicks;
        const double var =
            std::max(0.0, sum2 / point.clicks -
                              point.mean_shift_s * point.mean_shift_s);
        point.rms_shift_s = std::sqrt(var);
      }
      points.push_back(point);
      ++row;
    }
  }
  return points;
}

// ---------------------------------------------------------------------------
// JSON configuration

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError("config: " + path + ": " + message);
}

const json* find(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? nullptr : &*it;
}

double require_number(const json& j, const std::string& path,
                      const std::string& key) {
  const json* v = find(j, key);
  if (!v) fail(path + "." + key, "required number missing");
  if (!v->is_number()) fail(path + "." + key, "must be a number");
  return v->get<double>();
}

double number_or(const json& j, const std::string& path,
                 const std::string& key, double fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number()) fail(path + "." + key, "must be a number");
  return v->get<double>();
}

std::int64_t integer_or(const json& j, const std::string& path,
                        const std::string& key, std::int64_t fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) fail(path + "." + key, "must be an integer");
  return v->get<std::int64_t>();
}

bool boolean_or(const json& j, const std::string& path, const std::string& key,
                bool fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) fail(path + "." + key, "must be a boolean");
  return v->get<bool>();
}

std::string string_or(const json& j, const std::string& path,
                      const std::string& key, const std::string& fallback) {
  const json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_string()) fail(path + "." + key, "must be a string");
  return v->get<std::string>();
}

std::string resolve_path(const std::filesystem::path& base_dir,
                         const std::string& p) {
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return fp.string();
  return (base_dir / fp).string();
}

detector::SuperlinearitySurface surface_from_json(
    const json& j, const std::string& path,
    const std::filesystem::path& base_dir, double default_eta) {
  const std::string kind = string_or(j, path, "kind", "power_law");
  if (kind == "table") {
    if (const json* csv = find(j, "csv")) {
      if (!csv->is_string()) fail(path + ".csv", "must be a string path");
      return detector::SuperlinearitySurface::from_csv(
          resolve_path(base_dir, csv->get<std::string>()));
    }
    // Inline table: trigger_shifts_ns, mus, eta[t][mu].
    const json* ts = find(j, "trigger_shifts_ns");
    const json* mus = find(j, "mus");
    const json* eta = find(j, "eta");
    if (!ts || !mus || !eta) {
      fail(path, "table needs 'csv' or trigger_shifts_ns/mus/eta");
    }
    std::vector<double> shifts;
    for (const auto& v : *ts) shifts.push_back(v.get<double>() * kNs);
    return detector::SuperlinearitySurface::table(
        shifts, mus->get<std::vector<double>>(),
        eta->get<std::vector<std::vector<double>>>());
  }
  if (kind != "power_law") fail(path + ".kind", "unknown surface kind");
  std::vector<detector::SuperlinearitySurface::PowerLawEntry> entries;
  if (const json* arr = find(j, "entries")) {
    if (!arr->is_array() || arr->empty()) {
      fail(path + ".entries", "must be a nonempty array");
    }
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto ep = path + ".entries[" + std::to_string(i) + "]";
      const json& e = (*arr)[i];
      entries.push_back({number_or(e, ep, "trigger_shift_ns", 0.0) * kNs,
                         require_number(e, ep, "c"),
                         require_number(e, ep, "k")});
    }
  } else {
    entries.push_back({0.0, default_eta, 0.0});
  }
  double mu_min = 1e-9, mu_max = 1e12;
  if (const json* r = find(j, "mu_range")) {
    if (!r->is_array() || r->size() != 2) {
      fail(path + ".mu_range", "must be [min, max]");
    }
    mu_min = (*r)[0].get<double>();
    mu_max = (*r)[1].get<double>();
  }
  return detector::SuperlinearitySurface::power_law(std::move(entries), mu_min,
                                                    mu_max);
}

detector::EnergyTimeModel timing_from_json(
    const json& j, const std::string& path,
    const std::filesystem::path& base_dir) {
  const std::string kind = string_or(j, path, "kind", "log_linear");
  if (kind == "table") {
    const json* csv = find(j, "csv");
    if (!csv || !csv->is_string()) fail(path + ".csv", "required path missing");
    return detector::EnergyTimeModel::from_csv(
        resolve_path(base_dir, csv->get<std::string>()));
  }
  if (kind != "log_linear") fail(path + ".kind", "unknown timing kind");
  detector::EnergyTimeModel::LogLinearParams p;
  p.slope_s_per_decade = number_or(j, path, "slope_ns_per_decade", 0.4) * kNs;
  p.mu_ref = number_or(j, path, "mu_ref", 100.0);
  p.ref_shift_s = number_or(j, path, "ref_shift_ns", 0.0) * kNs;
  if (const json* c = find(j, "clamp_ns")) {
    if (!c->is_array() || c->size() != 2) {
      fail(path + ".clamp_ns", "must be [lo, hi]");
    }
    p.clamp_lo_s = (*c)[0].get<double>() * kNs;
    p.clamp_hi_s = (*c)[1].get<double>() * kNs;
  }
  p.fwhm_ref_s = number_or(j, path, "fwhm_ref_ns", 0.45) * kNs;
  p.fwhm_slope_s_per_decade =
      number_or(j, path, "fwhm_slope_ns_per_decade", 0.10) * kNs;
  p.fwhm_floor_s = number_or(j, path, "fwhm_floor_ns", 0.05) * kNs;
  if (const json* r = find(j, "mu_range")) {
    if (!r->is_array() || r->size() != 2) {
      fail(path + ".mu_range", "must be [min, max]");
    }
    p.mu_min = (*r)[0].get<double>();
    p.mu_max = (*r)[1].get<double>();
  }
  return detector::EnergyTimeModel::log_linear(p);
}

DetectorSpec detector_from_json(const json& j, const std::string& path,
                                const std::filesystem::path& base_dir,
                                const detector::DetectorConfig& defaults) {
  DetectorSpec spec;
  spec.config = defaults;
  spec.config.tag = string_or(j, path, "tag", defaults.tag);
  spec.config.gate_frequency_hz =
      number_or(j, path, "gate_frequency_hz", defaults.gate_frequency_hz);
  spec.config.dark_rate_hz =
      number_or(j, path, "dark_rate_hz", defaults.dark_rate_hz);
  spec.config.deadtime_s =
      number_or(j, path, "deadtime_us", defaults.deadtime_s / 1e-6) * 1e-6;
  spec.config.peak_efficiency =
      number_or(j, path, "peak_efficiency", defaults.peak_efficiency);
  spec.p_delay = number_or(j, path, "p_delay", 0.0);
  spec.latency_s = number_or(j, path, "latency_ns", 0.0) * kNs;
  if (const json* s = find(j, "surface")) {
    spec.surface = surface_from_json(*s, path + ".surface", base_dir,
                                     spec.config.peak_efficiency);
  } else {
    spec.surface = detector::SuperlinearitySurface::power_law(
        {{0.0, spec.config.peak_efficiency, 0.0}}, 1e-9, 1e12);
  }
  if (const json* t = find(j, "timing")) {
    spec.timing = timing_from_json(*t, path + ".timing", base_dir);
  }
  return spec;
}

}  // namespace

bool is_exercise_config(const json& j) {
  return j.is_object() && j.contains("mode") &&
         j["mode"] == "detector_exercise";
}

SessionConfig session_config_from_json(const json& j,
                                       const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: root must be an object");
  SessionConfig cfg;
  cfg.slots = integer_or(j, "", "slots", 0);
  if (cfg.slots <= 0) fail("slots", "required positive integer");
  cfg.seed = static_cast<std::uint64_t>(integer_or(j, "", "seed", 1));

  if (const json* a = find(j, "alice")) {
    cfg.alice_mu = number_or(*a, "alice", "mu", 0.5);
    cfg.alice_phase_s = number_or(*a, "alice", "phase_ns", 8.0) * kNs;
  }

  if (const json* t = find(j, "timeline")) {
    cfg.timeline.slot_period_s =
        number_or(*t, "timeline", "slot_period_ns", 16.0) * kNs;
    cfg.timeline.gates_per_slot = static_cast<int>(
        integer_or(*t, "timeline", "gates_per_slot", 5));
    if (const json* o = find(*t, "offsets_ns")) {
      cfg.timeline.offset_pm_s =
          number_or(*o, "timeline.offsets_ns", "pm", 0.0) * kNs;
      cfg.timeline.offset_d0_s =
          number_or(*o, "timeline.offsets_ns", "d0", 0.0) * kNs;
      cfg.timeline.offset_d1_s =
          number_or(*o, "timeline.offsets_ns", "d1", 0.0) * kNs;
    }
  }

  if (const json* b = find(j, "bob")) {
    cfg.bob.four_state = boolean_or(*b, "bob", "four_state", true);
    if (const json* e = find(*b, "extinction_db")) {
      if (!e->is_number()) fail("bob.extinction_db", "must be a number");
      cfg.bob.extinction_db = e->get<double>();
    }
    const std::string policy =
        string_or(*b, "bob", "double_click_policy", "random");
    if (policy == "random") {
      cfg.bob.double_click_policy = protocol::DoubleClickPolicy::random_bit;
    } else if (policy == "discard") {
      cfg.bob.double_click_policy = protocol::DoubleClickPolicy::discard;
    } else {
      fail("bob.double_click_policy", "must be 'random' or 'discard'");
    }
    cfg.bob.channel_transmission =
        number_or(*b, "bob", "channel_transmission", 1.0);
  }

  const detector::DetectorConfig base1 = detector::DetectorConfig::spd1();
  const detector::DetectorConfig base2 = detector::DetectorConfig::spd2();
  if (const json* d = find(j, "detectors")) {
    if (const json* d0 = find(*d, "d0")) {
      cfg.d0 = detector_from_json(*d0, "detectors.d0", base_dir, base1);
    } else {
      cfg.d0 = DetectorSpec{base1};
    }
    if (const json* d1 = find(*d, "d1")) {
      cfg.d1 = detector_from_json(*d1, "detectors.d1", base_dir, base2);
    } else {
      cfg.d1 = DetectorSpec{base2};
    }
  } else {
    cfg.d0 = DetectorSpec{base1};
    cfg.d1 = DetectorSpec{base2};
  }

  if (const json* v = find(j, "deadtime_slots")) {
    if (!v->is_number_integer()) fail("deadtime_slots", "must be an integer");
    cfg.deadtime_slots_override = v->get<std::int64_t>();
  }
  cfg.start_in_deadtime = boolean_or(j, "", "start_in_deadtime", false);
  cfg.extend_deadtime_on_discarded =
      boolean_or(j, "", "extend_deadtime_on_discarded", true);

  if (const json* c = find(j, "countermeasures")) {
    if (const json* co = find(*c, "coincidence")) {
      cfg.countermeasures.coincidence_enabled =
          boolean_or(*co, "countermeasures.coincidence", "enabled", false);
      cfg.countermeasures.coincidence_window_s =
          number_or(*co, "countermeasures.coincidence", "window_ns", 2.5) *
          kNs;
    }
    if (const json* pd = find(*c, "post_deadtime")) {
      cfg.countermeasures.post_deadtime_enabled =
          boolean_or(*pd, "countermeasures.post_deadtime", "enabled", false);
      cfg.countermeasures.post_deadtime_slots =
          integer_or(*pd, "countermeasures.post_deadtime", "slots", 1);
    }
  }

  if (const json* a = find(j, "attack")) {
    const std::string kind = string_or(*a, "attack", "attack", "");
    if (kind.empty()) fail("attack.attack", "required attack name missing");
    const double eve_eff =
        number_or(*a, "attack", "eve_detector_efficiency", 1.0);
    if (kind == "intermediate_basis") {
      cfg.attack.kind = AttackKind::intermediate_basis;
      auto& ic = cfg.attack.intermediate;
      ic.pulse_energy = require_number(*a, "attack", "pulse_energy");
      ic.eve_detector_efficiency = eve_eff;
      ic.trigger_shift_s = number_or(*a, "attack", "trigger_shift_ns", 1.2) * kNs;
      ic.margin_s = number_or(*a, "attack", "margin_ns", 0.7) * kNs;
      if (const json* ph = find(*a, "emission_phase_ns")) {
        if (!ph->is_number()) fail("attack.emission_phase_ns", "must be a number");
        ic.emission_phase_s = ph->get<double>() * kNs;
      }
    } else if (kind == "deadtime_faked_state") {
      cfg.attack.kind = AttackKind::deadtime_faked_state;
      auto& dc = cfg.attack.deadtime;
      dc.pulse_energy = require_number(*a, "attack", "pulse_energy");
      dc.eve_detector_efficiency = eve_eff;
      dc.trigger_shift_s = number_or(*a, "attack", "trigger_shift_ns", 0.0) * kNs;
      dc.boundary_margin_s =
          number_or(*a, "attack", "boundary_margin_ns", 0.5) * kNs;
      dc.shape_phase_s = number_or(*a, "attack", "shape_phase_ns", 5.0) * kNs;
      if (const json* dl = find(*a, "dt_leak_ns")) {
        if (!dl->is_number()) fail("attack.dt_leak_ns", "must be a number");
        dc.dt_leak_s = dl->get<double>() * kNs;
      }
    } else if (kind == "superlinear_ir") {
      cfg.attack.kind = AttackKind::superlinear_ir;
      auto& sc = cfg.attack.superlinear;
      sc.pulse_energy = require_number(*a, "attack", "pulse_energy");
      sc.eve_detector_efficiency = eve_eff;
      sc.trigger_shift_s = number_or(*a, "attack", "trigger_shift_ns", 0.0) * kNs;
      sc.emission_phase_s =
          number_or(*a, "attack", "emission_phase_ns", 8.0) * kNs;
    } else {
      fail("attack.attack", "unknown attack '" + kind + "'");
    }
  }

  cfg.validate();
  return cfg;
}

ExerciseConfig exercise_config_from_json(
    const json& j, const std::filesystem::path& base_dir) {
  ExerciseConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(integer_or(j, "", "seed", 1));
  const json* d = find(j, "detector");
  if (!d) fail("detector", "required object missing");
  cfg.detector =
      detector_from_json(*d, "detector", base_dir,
                         detector::DetectorConfig::spd1());
  const json* ts = find(j, "trigger_shifts_ns");
  if (!ts || !ts->is_array() || ts->empty()) {
    fail("trigger_shifts_ns", "required nonempty array");
  }
  for (const auto& v : *ts) cfg.trigger_shifts_s.push_back(v.get<double>() * kNs);
  const json* mus = find(j, "mus");
  if (!mus || !mus->is_array() || mus->empty()) {
    fail("mus", "required nonempty array");
  }
  for (const auto& v : *mus) cfg.mus.push_back(v.get<double>());
  cfg.pulses_per_point = integer_or(j, "", "pulses_per_point", 10000);
  cfg.spacing_s = number_or(j, "", "spacing_us", 1000.0) * 1e-6;
  return cfg;
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

void apply_override(json& config, const std::string& dotted, const json& value) {
  json* node = &config;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot - pos);
    if (key.empty()) throw ConfigError("sweep: empty key in path " + dotted);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

}  // namespace

std::vector<SweepAxis> sweep_axes_from_json(const json& grid) {
  if (!grid.is_array() || grid.empty()) {
    throw ConfigError("sweep: grid must be a nonempty array");
  }
  std::vector<SweepAxis> axes;
  for (const auto& g : grid) {
    SweepAxis axis;
    if (!g.contains("path") || !g["path"].is_string()) {
      throw ConfigError("sweep: each axis needs a string 'path'");
    }
    axis.path = g["path"].get<std::string>();
    if (g.contains("values")) {
      if (!g["values"].is_array() || g["values"].empty()) {
        throw ConfigError("sweep: 'values' must be a nonempty array");
      }
      for (const auto& v : g["values"]) axis.values.push_back(v);
    } else if (g.contains("db_range")) {
      const json& r = g["db_range"];
      const double start = require_number(r, "sweep.db_range", "start");
      const double step_db = require_number(r, "sweep.db_range", "step_db");
      const std::int64_t count = integer_or(r, "sweep.db_range", "count", 0);
      if (count <= 0) throw ConfigError("sweep: db_range.count must be > 0");
      for (std::int64_t i = 0; i < count; ++i) {
        axis.values.push_back(
            start * std::pow(10.0, step_db * static_cast<double>(i) / 10.0));
      }
    } else {
      throw ConfigError("sweep: axis needs 'values' or 'db_range'");
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

SweepResult run_sweep(const json& base_config,
                      const std::vector<SweepAxis>& axes,
                      const std::filesystem::path& base_dir) {
  if (axes.empty()) throw ConfigError("sweep: no axes");
  std::size_t cells = 1;
  for (const auto& a : axes) cells *= a.values.size();

  const std::uint64_t master_seed = static_cast<std::uint64_t>(
      integer_or(base_config, "", "seed", 1));

  SweepResult result;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    json config = base_config;
    json overrides;
    std::size_t rest = cell;
    for (const auto& axis : axes) {
      const std::size_t idx = rest % axis.values.size();
      rest /= axis.values.size();
      apply_override(config, axis.path, axis.values[idx]);
      overrides[axis.path] = axis.values[idx];
    }
    config["seed"] = derive_seed(
        {master_seed, kStreamSweep, static_cast<std::uint64_t>(cell)});
    const auto session = session_config_from_json(config, base_dir);
    const auto metrics = run_session(session);
    json row;
    row["cell_index"] = cell;
    row["overrides"] = std::move(overrides);
    row["metrics"] = metrics_to_json(metrics);
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace qkdsim::engine
