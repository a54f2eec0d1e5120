#include <doctest.h>

#include <cmath>
#include <fstream>
#include <optional>
#include <vector>

#include "helpers.hpp"
#include "qkdsim/detector.hpp"
#include "qkdsim/errors.hpp"

using namespace qkdsim;
using namespace qkdsim::detector;
using qkdsim::test::data_path;

namespace {

GateEfficiencyProfile flat01() {
  return GateEfficiencyProfile::flat(0.1, 3.2e-9);
}

EnergyTimeModel::LogLinearParams default_synthetic() {
  return EnergyTimeModel::LogLinearParams{};
}

}  // namespace

TEST_CASE("n-photon click probability") {
  const auto p = flat01();
  CHECK(detect_prob_fock(p, 0.0, 0) == 0.0);
  CHECK(detect_prob_fock(GateEfficiencyProfile::flat(1.0, 3.2e-9), 0.0, 1) ==
        1.0);
  CHECK(detect_prob_fock(p, 0.0, 2) == doctest::Approx(0.19).epsilon(1e-12));
}

TEST_CASE("coherent click probability and the photon-number series") {
  const auto p = flat01();
  CHECK(detect_prob_coherent(p, 0.0, 0.0) == 0.0);
  CHECK(detect_prob_coherent(p, 0.0, 1.0) ==
        doctest::Approx(0.09516258196404048).epsilon(1e-10));

  // Brute-force oracle: Poisson-weighted sum of the n-photon law,
  // truncated once the remaining tail is below 1e-12.
  auto series = [](double eta, double mu) {
    const GateEfficiencyProfile prof = GateEfficiencyProfile::flat(eta, 1.0);
    double sum = 0.0;
    double pmf = std::exp(-mu);  // n = 0 term
    double cdf = pmf;
    long n = 0;
    while (1.0 - cdf > 1e-12 && n < 4000) {
      sum += pmf * detect_prob_fock(prof, 0.0, n);
      ++n;
      pmf *= mu / static_cast<double>(n);
      cdf += pmf;
    }
    sum += pmf * detect_prob_fock(prof, 0.0, n);
    return sum;
  };

  double max_err = 0.0;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 20; ++j) {
      const double eta = i / 19.0;
      const double mu = 10.0 * j / 19.0;
      const GateEfficiencyProfile prof =
          GateEfficiencyProfile::flat(eta, 1.0);
      max_err = std::max(
          max_err,
          std::abs(detect_prob_coherent(prof, 0.0, mu) - series(eta, mu)));
    }
  }
  CHECK(max_err < 1e-10);
}

TEST_CASE("click probabilities are monotone and inside [0,1]") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double eta = rng.uniform();
    const auto prof = GateEfficiencyProfile::flat(eta, 1.0);
    double prev = -1.0;
    for (long n = 0; n < 12; ++n) {
      const double p = detect_prob_fock(prof, 0.0, n);
      REQUIRE(p >= prev - 1e-15);
      REQUIRE(p >= 0.0);
      REQUIRE(p <= 1.0);
      prev = p;
    }
    prev = -1.0;
    for (double mu = 0.0; mu < 8.0; mu += 0.5) {
      const double p = detect_prob_coherent(prof, 0.0, mu);
      REQUIRE(p >= prev - 1e-15);
      REQUIRE(p <= 1.0);
      prev = p;
    }
  }
}

TEST_CASE("gate profile interpolates and wraps periodically") {
  const double T = 4.0;  // dyadic period: t + T is exact in doubles
  GateEfficiencyProfile prof(T, {{0.5, 0.02}, {1.5, 0.10}, {3.0, 0.04}});
  CHECK(prof.lookup(0.5) == 0.02);
  CHECK(prof.lookup(1.0) == doctest::Approx(0.06).epsilon(1e-12));
  // Wrap segment from (3.0, 0.04) to (4.5, 0.02).
  CHECK(prof.lookup(3.75) == doctest::Approx(0.03).epsilon(1e-12));
  CHECK(prof.lookup(0.25) ==
        doctest::Approx(0.04 + (0.02 - 0.04) * (1.25 / 1.5)).epsilon(1e-12));
  // Exact periodicity whenever t + T is exactly representable (dyadic t
  // with the dyadic period); otherwise equal to within one rounding of
  // the argument.
  for (double t : {0.0, 0.25, 1.25, 2.75, 3.5}) {
    CHECK(prof.lookup(t) == prof.lookup(t + T));
    CHECK(prof.lookup(t) == prof.lookup(t - T));
  }
  for (double t : {0.3, 1.1, 2.9}) {
    CHECK(prof.lookup(t) ==
          doctest::Approx(prof.lookup(t + T)).epsilon(1e-12));
  }
}

TEST_CASE("gate profile rejects bad samples") {
  CHECK_THROWS_AS(GateEfficiencyProfile(1.0, {{0.0, 1.5}}), ConfigError);
  CHECK_THROWS_AS(GateEfficiencyProfile(1.0, {{0.5, 0.1}, {0.5, 0.2}}),
                  ConfigError);
  CHECK_THROWS_AS(GateEfficiencyProfile(1.0, {{1.5, 0.1}}), ConfigError);
}

TEST_CASE("detector config derives the per-gate dark probability") {
  const auto cfg = DetectorConfig::spd1();
  CHECK(cfg.dark_prob_per_gate() == 428.0 / 312.5e6);
  CHECK(DetectorConfig::spd2().dark_rate_hz == 532.0);
  DetectorConfig bad = cfg;
  bad.peak_efficiency = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("power-law efficiency surface") {
  const auto flat = SuperlinearitySurface::power_law({{0.0, 0.1, 0.0}}, 1e-3,
                                                     1e6);
  CHECK(flat.value(0.0, 0.001) == 0.1);
  CHECK(flat.value(0.0, 1e5) == 0.1);

  const auto sl =
      SuperlinearitySurface::power_law({{0.0, 1e-4, 0.86}}, 1e-3, 1e6);
  CHECK(sl.value(0.0, 200.0) / sl.value(0.0, 100.0) ==
        doctest::Approx(std::pow(2.0, 0.86)).epsilon(1e-12));
  CHECK_THROWS_AS(sl.value(0.0, 1e7), RangeError);
  // Clamped to a probability even where the law exceeds one.
  const auto hot = SuperlinearitySurface::power_law({{0.0, 0.5, 1.0}}, 0.1,
                                                    100.0);
  CHECK(hot.value(0.0, 100.0) == 1.0);
}

TEST_CASE("table surface returns stored values at grid nodes") {
  const std::vector<double> ts{0.0, 1e-9};
  const std::vector<double> mus{1.0, 10.0, 100.0};
  const std::vector<std::vector<double>> eta{{0.10, 0.12, 0.15},
                                             {0.02, 0.05, 0.30}};
  const auto s = SuperlinearitySurface::table(ts, mus, eta);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = 0; j < mus.size(); ++j) {
      CHECK(s.value(ts[i], mus[j]) == eta[i][j]);
    }
  }
  CHECK_THROWS_AS(s.value(0.0, 1000.0), RangeError);
  CHECK_THROWS_AS(s.value(5e-9, 10.0), RangeError);
  // Interpolation is linear in ln(mu).
  CHECK(s.value(0.0, std::sqrt(10.0)) ==
        doctest::Approx(0.11).epsilon(1e-12));
}

TEST_CASE("surface CSV loader round-trips and validates") {
  const auto s = SuperlinearitySurface::from_csv(data_path("spd1_surface.csv"));
  REQUIRE(s.is_table());
  CHECK(s.trigger_shifts().size() == 8);
  CHECK(s.mu_grid().size() == 11);
  for (const auto& row : s.eta_grid()) {
    for (double v : row) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }

  const std::string bad = "/tmp/qkdsim_bad_surface.csv";
  {
    std::ofstream out(bad);
    out << "trigger_shift_ns, mu, eta\n0.0, 1.0, 0.1\n0.0, oops, 0.2\n";
  }
  try {
    SuperlinearitySurface::from_csv(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("log-linear energy-time model") {
  const auto etm = EnergyTimeModel::log_linear(default_synthetic());
  // Anchor: at the reference energy the shift equals the reference shift.
  CHECK(etm.shift(0.0, 100.0).mean_shift_s == 0.0);
  // Flat below the onset.
  CHECK(etm.shift(0.0, 1.0).mean_shift_s == 0.0);
  // Default slope spans at least 2 ns over five decades.
  const double span = etm.shift(0.0, 100.0).mean_shift_s -
                      etm.shift(0.0, 100.0 * 1e5).mean_shift_s;
  CHECK(span >= 2e-9 - 1e-21);
  // Monotone nonincreasing mean shift and jitter.
  double prev_dt = 1.0, prev_fwhm = 1.0;
  for (double mu = 1.0; mu < 1e11; mu *= 3.0) {
    const auto t = etm.shift(0.0, mu);
    REQUIRE(t.mean_shift_s <= prev_dt + 1e-18);
    REQUIRE(t.fwhm_s <= prev_fwhm + 1e-18);
    REQUIRE(t.fwhm_s >= 0.05e-9);
    prev_dt = t.mean_shift_s;
    prev_fwhm = t.fwhm_s;
  }
  CHECK_THROWS_AS(etm.shift(0.0, 1e13), RangeError);
}

TEST_CASE("calibration tables separate clicks for a 7.66 dB energy split") {
  const double f_high = 0.8535533905932737;
  const double f_low = 1.0 - f_high;

  const auto spd1 = EnergyTimeModel::from_csv(data_path("spd1_energy_time.csv"));
  const double mu1 = 346737.0;
  const double sep1 = spd1.shift(1.2e-9, mu1 * f_low).mean_shift_s -
                      spd1.shift(1.2e-9, mu1 * f_high).mean_shift_s;
  CHECK(sep1 == doctest::Approx(1.9e-9).epsilon(0.03));

  const auto spd2 = EnergyTimeModel::from_csv(data_path("spd2_energy_time.csv"));
  const double mu2 = 128825.0;
  const double sep2 = spd2.shift(1.2e-9, mu2 * f_low).mean_shift_s -
                      spd2.shift(1.2e-9, mu2 * f_high).mean_shift_s;
  CHECK(sep2 == doctest::Approx(1.3e-9).epsilon(0.03));

  // Jitter narrow enough to make the slot assignment deterministic.
  CHECK(spd1.shift(1.2e-9, mu1 * f_low).fwhm_s < 1.9e-9 / 2.0);
}

TEST_CASE("energy-time table rejects non-monotone columns") {
  CHECK_THROWS_AS(
      EnergyTimeModel::table({0.0}, {1.0, 10.0}, {{-1e-9, 0.0}},
                             {{0.1e-9, 0.1e-9}}),
      ConfigError);
  CHECK_THROWS_AS(
      EnergyTimeModel::table({0.0}, {1.0, 10.0}, {{0.0, -1e-9}},
                             {{0.1e-9, 0.2e-9}}),
      ConfigError);
}

TEST_CASE("sampling: vacuum and dark-free never clicks") {
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 0.0, 4.34e-6, 0.098, "t"},
      SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
      EnergyTimeModel::log_linear(default_synthetic()), 0, 42);
  for (int i = 0; i < 1000; ++i) {
    const double arrival = (i + 1) * 1e-5;
    CHECK_FALSE(sample_detection(st, IncidentPulse{arrival, 0.0, 0.0, i},
                                 arrival + 1e-6));
  }
}

TEST_CASE("sampling: deadtime swallows the second pulse") {
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 0.0, 4.34e-6, 0.098, "t"},
      SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
      EnergyTimeModel::log_linear(default_synthetic()), 0, 42);
  const auto first =
      sample_detection(st, IncidentPulse{1e-5, 0.0, 1e6, 0}, 1e-5 + 1e-7);
  REQUIRE(first);
  const auto second = sample_detection(
      st, IncidentPulse{1e-5 + 1e-6, 0.0, 1e6, 1}, 1e-5 + 2e-6);
  CHECK_FALSE(second);
  // Past the deadtime the detector answers again.
  const auto third = sample_detection(
      st, IncidentPulse{1e-5 + 5e-6, 0.0, 1e6, 2}, 1e-5 + 6e-6);
  CHECK(third);
}

TEST_CASE("sampling: bright pulses click earlier than faint ones") {
  auto make = [] {
    return make_detector_state(
        DetectorConfig{312.5e6, 0.0, 1e-6, 0.098, "t"},
        SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
        EnergyTimeModel::log_linear(default_synthetic()), 0, 99);
  };
  auto mean_shift = [&](double mu) {
    auto st = make();
    double sum = 0.0;
    long clicks = 0;
    for (int i = 0; i < 4000; ++i) {
      const double arrival = (i + 1) * 1e-5;
      const auto c =
          sample_detection(st, IncidentPulse{arrival, 0.0, mu, i},
                           arrival + 1e-6);
      if (c) {
        sum += c->time_s - arrival;
        ++clicks;
      }
    }
    REQUIRE(clicks > 3900);  // bright regime: click probability ~ 1
    return sum / clicks;
  };
  const double faint = mean_shift(100.0);
  const double bright = mean_shift(1e7);
  CHECK(bright < faint - 1.9e-9);  // full five-decade span minus jitter
}

TEST_CASE("sampling: delayed clicks land one gate later") {
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 0.0, 1e-6, 0.098, "t"},
      // Tiny efficiency so the pulse almost never clicks directly.
      SuperlinearitySurface::power_law({{0.0, 1e-9, 0.0}}, 1e-9, 1e12),
      EnergyTimeModel::log_linear(default_synthetic()), 0, 7);
  st.p_delay = 1.0;
  long delayed = 0;
  for (int i = 0; i < 200; ++i) {
    const double arrival = (i + 1) * 1e-5;
    const auto c = sample_detection(st, IncidentPulse{arrival, 0.0, 1.0, i},
                                    arrival + 1e-6);
    if (c && c->cause == ClickCause::delayed) {
      ++delayed;
      const double gate = st.config.gate_period_s();
      CHECK(c->time_s - arrival > 0.5 * gate);
      CHECK(c->time_s - arrival < 1.5 * gate);
    }
  }
  CHECK(delayed > 150);
}

TEST_CASE("sampling: dark counts follow the configured rate") {
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 1e6, 0.0, 0.098, "t"},
      SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
      EnergyTimeModel::log_linear(default_synthetic()), 0, 1);
  const auto clicks = advance_darks(st, 1.0);
  const double n = static_cast<double>(clicks.size());
  CHECK(std::abs(n - 1e6) < 3.0 * std::sqrt(1e6));
  for (const auto& c : clicks) CHECK(c.cause == ClickCause::dark);
}

TEST_CASE("sampling: no two clicks closer than the deadtime") {
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 2e5, 2e-6, 0.098, "t"},
      SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
      EnergyTimeModel::log_linear(default_synthetic()), 0, 13);
  std::vector<double> times;
  SplitMix64 drive(3);
  double t = 0.0;
  for (int i = 0; i < 20000; ++i) {
    t += 1e-6;
    for (const auto& c : advance_darks(st, t)) times.push_back(c.time_s);
    if (drive.bernoulli(0.3)) {
      const auto c = sample_detection(
          st, IncidentPulse{t, 0.0, drive.uniform(0.0, 5.0), i}, t + 5e-7);
      if (c) times.push_back(c->time_s);
    }
  }
  REQUIRE(times.size() > 100);
  for (std::size_t i = 1; i < times.size(); ++i) {
    REQUIRE(times[i] - times[i - 1] >= st.config.deadtime_s - 1e-15);
  }
}

TEST_CASE("sampling: identical seed gives a bit-exact click trace") {
  auto run = [] {
    auto st = make_detector_state(
        DetectorConfig{312.5e6, 5e4, 2e-6, 0.098, "t"},
        SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12),
        EnergyTimeModel::log_linear(default_synthetic()), 0, 777);
    std::vector<ClickEvent> events;
    for (int i = 0; i < 5000; ++i) {
      const double arrival = (i + 1) * 1e-6;
      const auto c = sample_detection(
          st, IncidentPulse{arrival, 0.0, (i % 7) * 0.3, i}, arrival + 9e-7);
      if (c) events.push_back(*c);
    }
    return events;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].time_s == b[i].time_s);
    CHECK(a[i].cause == b[i].cause);
    CHECK(a[i].pulse_id == b[i].pulse_id);
  }
}

TEST_CASE("sampling: click advance is bounded by the model clamp") {
  const auto etm = EnergyTimeModel::log_linear(default_synthetic());
  auto st = make_detector_state(
      DetectorConfig{312.5e6, 0.0, 1e-7, 0.098, "t"},
      SuperlinearitySurface::power_law({{0.0, 0.098, 0.0}}, 1e-9, 1e12), etm,
      0, 55);
  for (int i = 0; i < 5000; ++i) {
    const double arrival = (i + 1) * 1e-6;
    const auto c = sample_detection(
        st, IncidentPulse{arrival, 0.0, 1e8, i}, arrival + 5e-7);
    if (c) {
      REQUIRE(c->time_s >= arrival - etm.max_advance_s() - 1e-18);
    }
  }
}
