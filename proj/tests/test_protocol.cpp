#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "qkdsim/errors.hpp"
#include "qkdsim/protocol.hpp"

using namespace qkdsim;
using namespace qkdsim::protocol;
using qkdsim::test::binom3;

TEST_CASE("projection probabilities on linear polarizations") {
  CHECK(projection_prob(PolarizationState::h(), 0.0) == 1.0);
  CHECK(projection_prob(PolarizationState::h(),
                        PolarizationState::d().angle_rad) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(projection_prob(PolarizationState::h(),
                        PolarizationState::i_plus().angle_rad) ==
        doctest::Approx(0.8535533905932737).epsilon(1e-12));

  // Analyzer completeness: the two ports of any basis exhaust the state.
  SplitMix64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const PolarizationState s{rng.uniform(-3.2, 3.2)};
    const double psi = rng.uniform(-3.2, 3.2);
    CHECK(projection_prob(s, psi) + projection_prob(s, psi + 1.5707963267948966) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bit and basis conventions") {
  CHECK(bb84_state(0, Basis::rectilinear).angle_rad == 0.0);
  CHECK(bb84_state(1, Basis::rectilinear).angle_rad ==
        doctest::Approx(1.5707963267948966));
  CHECK(bb84_state(0, Basis::diagonal).angle_rad ==
        doctest::Approx(0.7853981633974483));
  CHECK(detector_bit(0, false) == 0);
  CHECK(detector_bit(1, false) == 1);
  CHECK(detector_bit(0, true) == 1);
  CHECK(detector_bit(1, true) == 0);
}

TEST_CASE("photon number sampling follows the Poisson law") {
  SplitMix64 rng(40);
  CHECK(sample_photon_number(0.0, rng) == 0);
  const int n = 1000000;
  long sum = 0, twos = 0;
  for (int i = 0; i < n; ++i) {
    sum += sample_photon_number(0.5, rng);
  }
  CHECK(std::abs(static_cast<double>(sum) / n - 0.5) <
        3.0 * std::sqrt(0.5 / n));
  for (int i = 0; i < n; ++i) {
    if (sample_photon_number(1.0, rng) == 2) ++twos;
  }
  const double p2 = std::exp(-1.0) / 2.0;
  CHECK(std::abs(static_cast<double>(twos) / n - p2) < binom3(p2, n));
}

TEST_CASE("energy splitting between analyzer ports") {
  // Intermediate state into either basis: the 1 : 5.83 ratio, 7.66 dB.
  const auto split = split_energies(PolarizationState::i_plus(),
                                    Basis::rectilinear, std::nullopt);
  CHECK(split.port0 == doctest::Approx(0.8535533905932737).epsilon(1e-9));
  CHECK(split.port1 == doctest::Approx(0.1464466094067262).epsilon(1e-9));
  CHECK(10.0 * std::log10(split.port0 / split.port1) ==
        doctest::Approx(7.6555).epsilon(1e-3));
  const auto split_diag = split_energies(PolarizationState::i_plus(),
                                         Basis::diagonal, std::nullopt);
  CHECK(split_diag.port0 == doctest::Approx(split.port0).epsilon(1e-12));

  const auto even =
      split_energies(PolarizationState::h(), Basis::diagonal, std::nullopt);
  CHECK(even.port0 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even.port1 == doctest::Approx(0.5).epsilon(1e-12));

  // Finite extinction leaks a floor into the dark port.
  const auto leak =
      split_energies(PolarizationState::h(), Basis::rectilinear, 20.0);
  CHECK(leak.port0 == doctest::Approx(0.990099009901).epsilon(1e-9));
  CHECK(leak.port1 == doctest::Approx(0.009900990099).epsilon(1e-9));

  // Orthogonal states route exactly nothing through an ideal analyzer.
  const auto ideal =
      split_energies(PolarizationState::v(), Basis::rectilinear, std::nullopt);
  CHECK(ideal.port0 == 0.0);
  CHECK(ideal.port1 == 1.0);

  SplitMix64 rng(77);
  for (int i = 0; i < 500; ++i) {
    const PolarizationState s{rng.uniform(-3.2, 3.2)};
    const Basis basis = rng.bit() ? Basis::diagonal : Basis::rectilinear;
    const double ext = rng.uniform(10.0, 40.0);
    const auto f = split_energies(s, basis, ext);
    REQUIRE(f.port0 + f.port1 == doctest::Approx(1.0).epsilon(1e-12));
    const double eps = std::pow(10.0, -ext / 10.0);
    REQUIRE(f.port0 >= eps / (1.0 + eps) - 1e-15);
    REQUIRE(f.port1 >= eps / (1.0 + eps) - 1e-15);
  }
  CHECK_THROWS_AS(
      split_energies(PolarizationState::h(), Basis::rectilinear, -3.0),
      ConfigError);
}

TEST_CASE("bit-slot assignment is a floor over per-device offsets") {
  BitSlotTimeline tl = BitSlotTimeline::default_62_5mhz();
  CHECK(tl.slot_period_s == 16e-9);
  CHECK(tl.gates_per_slot == 5);
  tl.offset_d0_s = 3e-9;
  CHECK(tl.slot_of(Device::d0, 3e-9) == 0);
  CHECK(tl.slot_of(Device::d0, 3e-9 + 1.5 * 16e-9) == 1);
  CHECK(tl.slot_of(Device::d0, 3e-9 - 0.5 * 16e-9) == -1);
  CHECK(tl.slot_of(Device::pm, 15.9e-9) == 0);
  CHECK(tl.slot_of(Device::pm, 16.1e-9) == 1);
}

// ---------------------------------------------------------------------------
// Arbiter

namespace {

SlotTruth fixed_truth(std::int64_t) {
  return SlotTruth{0, Basis::rectilinear, Basis::rectilinear, false};
}

ArbiterClick click_at(int det, std::int64_t slot, double within_slot_s = 8e-9,
                      std::optional<EveAnnotation> eve = std::nullopt) {
  ArbiterClick c;
  c.click.detector = det;
  c.click.time_s = static_cast<double>(slot) * 16e-9 + within_slot_s;
  c.click.cause = detector::ClickCause::photon;
  c.slot = slot;
  c.eve = eve;
  return c;
}

ArbiterConfig basic_config(std::int64_t slots, std::int64_t k_dead) {
  ArbiterConfig cfg;
  cfg.session_slots = slots;
  cfg.deadtime_slots = k_dead;
  return cfg;
}

}  // namespace

TEST_CASE("arbiter: single clicks are accepted, sifted, and scored") {
  SiftingArbiter arb(basic_config(100, 0), fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 5));
  arb.push(click_at(1, 20));
  arb.finish();
  const auto& c = arb.counters();
  CHECK(c.accepted_bits == 2);
  CHECK(c.kept_bits == 2);       // truth bases always match
  CHECK(c.errors == 1);          // detector 1 reads bit 1, Alice sent 0
  CHECK(c.ones == 1);
  CHECK(c.slots_no_click == 98);
  CHECK(c.clicks_total == c.clicks_accepted);
}

TEST_CASE("arbiter: deadtime discards and extends") {
  SiftingArbiter arb(basic_config(100, 5), fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 10));  // accepted, dead through 15
  arb.push(click_at(0, 12));  // discarded, extends through 17
  arb.push(click_at(0, 16));  // still dead, extends through 21
  arb.push(click_at(0, 23));  // live again
  arb.finish();
  const auto& c = arb.counters();
  CHECK(c.accepted_bits == 2);
  CHECK(c.clicks_discarded_deadtime == 2);
  CHECK(c.slots_deadtime_discarded == 2);
}

TEST_CASE("arbiter: without extension the window is anchored to the accept") {
  auto cfg = basic_config(100, 5);
  cfg.extend_deadtime_on_discarded = false;
  SiftingArbiter arb(cfg, fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 10));  // accepted, dead through 15
  arb.push(click_at(0, 12));  // discarded, no extension
  arb.push(click_at(0, 16));  // first live slot
  arb.finish();
  CHECK(arb.counters().accepted_bits == 2);
  CHECK(arb.counters().clicks_discarded_deadtime == 1);
}

TEST_CASE("arbiter: start_in_deadtime arms the receiver at slot -1") {
  auto cfg = basic_config(100, 10);
  cfg.start_in_deadtime = true;
  SiftingArbiter arb(cfg, fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 5));   // inside the armed window: discarded
  arb.push(click_at(0, 30));  // live
  arb.finish();
  CHECK(arb.counters().accepted_bits == 1);
  CHECK(arb.counters().clicks_discarded_deadtime == 1);
}

TEST_CASE("arbiter: double clicks resolve by policy") {
  // Discard policy: the pair dies, the slot still sets a deadtime.
  auto cfg = basic_config(100, 3);
  cfg.double_click_policy = DoubleClickPolicy::discard;
  SiftingArbiter arb(cfg, fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 10, 8e-9));
  arb.push(click_at(1, 10, 9e-9));
  arb.push(click_at(0, 12));  // inside deadtime from the double click
  arb.finish();
  CHECK(arb.counters().accepted_bits == 0);
  CHECK(arb.counters().slots_double_click_discarded == 1);
  CHECK(arb.counters().clicks_discarded_double == 2);
  CHECK(arb.counters().clicks_discarded_deadtime == 1);

  // Random-bit policy: accepted with a uniform bit.
  long ones = 0;
  const int trials = 100000;
  SiftingArbiter arb2(basic_config(4 * trials, 0), fixed_truth,
                      SplitMix64(9));
  long slot = 0;
  for (int i = 0; i < trials; ++i) {
    arb2.push(click_at(0, slot, 7e-9));
    arb2.push(click_at(1, slot, 8e-9));
    slot += 4;
    arb2.finalize_through(slot - 2);
  }
  arb2.finish();
  ones = arb2.counters().ones;
  CHECK(arb2.counters().accepted_bits == trials);
  CHECK(arb2.counters().randomized_bits == trials);
  CHECK(std::abs(static_cast<double>(ones) / trials - 0.5) <
        binom3(0.5, trials));
}

TEST_CASE("arbiter: sequential clicks in distinct slots keep the first") {
  SiftingArbiter arb(basic_config(100, 3), fixed_truth, SplitMix64(1));
  arb.push(click_at(0, 10, 15.5e-9));  // one pulse, two landing slots
  arb.push(click_at(1, 11, 1.5e-9));
  arb.finish();
  CHECK(arb.counters().accepted_bits == 1);
  CHECK(arb.counters().clicks_discarded_deadtime == 1);
  CHECK(arb.counters().slots_double_click_discarded == 0);
}

TEST_CASE("arbiter: four-state swap balances any fixed attacker pattern") {
  // Attacker forces every click into detector 0; the random assignment
  // swap still balances the raw key.
  const std::uint64_t seed = 1234;
  auto truth = [seed](std::int64_t slot) {
    SlotTruth t;
    const std::uint64_t w =
        derive_seed({seed, 99, static_cast<std::uint64_t>(slot)});
    t.alice_bit = static_cast<int>(w & 1);
    t.alice_basis = (w >> 1) & 1 ? Basis::diagonal : Basis::rectilinear;
    t.bob_basis = (w >> 2) & 1 ? Basis::diagonal : Basis::rectilinear;
    t.bob_swap = (w >> 3) & 1;
    return t;
  };
  const int trials = 30000;
  SiftingArbiter arb(basic_config(2 * trials, 1), truth, SplitMix64(5));
  for (int i = 0; i < trials; ++i) {
    arb.push(click_at(0, 2 * i));
    arb.finalize_through(2 * i - 2);
  }
  arb.finish();
  const auto& c = arb.counters();
  CHECK(c.accepted_bits == trials);
  CHECK(std::abs(static_cast<double>(c.ones) / trials - 0.5) <
        binom3(0.5, trials));
  // Sifting keeps the matched-basis half.
  CHECK(std::abs(static_cast<double>(c.kept_bits) / trials - 0.5) <
        binom3(0.5, trials));
}

TEST_CASE("arbiter: countermeasure hook randomizes flagged bits") {
  SiftingArbiter arb(basic_config(1000, 2), fixed_truth, SplitMix64(3));
  arb.set_countermeasure_hook(
      [](const ArbiterClick& click, std::int64_t, double) {
        return click.slot == 500;  // randomize exactly one slot
      });
  arb.push(click_at(0, 100));
  arb.push(click_at(0, 500));
  arb.finish();
  CHECK(arb.counters().accepted_bits == 2);
  CHECK(arb.counters().randomized_bits == 1);
}

TEST_CASE("arbiter: eve annotations feed the attack accounting") {
  EveAnnotation eve;
  eve.known = true;
  eve.bit = 0;
  eve.attacked_slot = 10;
  SiftingArbiter arb(basic_config(100, 1), fixed_truth, SplitMix64(3));
  arb.push(click_at(0, 10, 8e-9, eve));
  EveAnnotation shaping = eve;
  shaping.known = false;
  shaping.shaping = true;
  arb.push(click_at(0, 50, 8e-9, shaping));
  arb.finish();
  const auto& c = arb.counters();
  CHECK(c.accepted_bits == 2);
  CHECK(c.attacked_accepted == 1);  // shaping clicks are not key-steal
  CHECK(c.attacked_kept == 1);
  CHECK(c.attacked_errors_kept == 0);
  CHECK(c.eve_known_kept == 1);
  CHECK(c.eve_match_kept == 1);
}

TEST_CASE("arbiter: coincidence scan sees neighbors across a tail flush") {
  // Two clicks 1.9 ns apart in adjacent slots, resolved only by finish():
  // the accepted first click must still see its late neighbor.
  SiftingArbiter arb(basic_config(100, 3), fixed_truth, SplitMix64(2));
  double seen_dt = -1.0;
  arb.set_countermeasure_hook(
      [&](const ArbiterClick&, std::int64_t, double neighbor_dt) {
        seen_dt = neighbor_dt;
        return false;
      });
  arb.push(click_at(0, 10, 15.5e-9));
  arb.push(click_at(1, 11, 1.4e-9));
  arb.finish();
  CHECK(arb.counters().accepted_bits == 1);
  CHECK(seen_dt == doctest::Approx(1.9e-9).epsilon(1e-9));
}

TEST_CASE("arbiter: clicks outside the session window only move deadtime") {
  SiftingArbiter arb(basic_config(100, 5), fixed_truth, SplitMix64(3));
  arb.push(click_at(0, -2));
  arb.push(click_at(0, 1));  // inside the extension from slot -2
  arb.push(click_at(0, 101));
  arb.finish();
  const auto& c = arb.counters();
  CHECK(c.clicks_discarded_out_of_session == 2);
  CHECK(c.clicks_discarded_deadtime == 1);
  CHECK(c.accepted_bits == 0);
  CHECK(c.clicks_total == 3);
}
