#include <cmath>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"
#include "tweak/synth_rf.hpp"

using namespace tweak;
using cd = std::complex<double>;

namespace {

ComplexSignal constant(std::size_t n, cd v = {1.0, 0.0}) { return ComplexSignal(n, v); }

double max_abs_diff(const ComplexSignal& a, const ComplexSignal& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

DomainSpec small_domain(const std::string& id) {
  DomainSpec d;
  d.domain_id = id;
  d.lora = lora_preset(1);
  d.channel.snr_db = 20;
  return d;
}

}  // namespace

TEST_SUITE("synth_rf") {
  TEST_CASE("samples per symbol") {
    CHECK(lora_preset(1).samples_per_symbol() == 1024);
    LoRaConfig c;
    c.spreading_factor = 12;
    CHECK(c.samples_per_symbol() == 32768);
    CHECK(lora_preset(4).spreading_factor == 12);
    CHECK_THROWS_AS(lora_preset(5), Error);
  }

  TEST_CASE("chirps have constant unit envelope") {
    const auto cfg = lora_preset(1);
    const auto s = gen_lora_baseband(cfg, 6, {0, 5, 127, 64, 1, 99});
    CHECK(s.size() == 6 * 1024);
    for (const auto& z : s) CHECK(std::abs(std::abs(z) - 1.0) <= 1e-9);
  }

  TEST_CASE("zero impairment is the identity") {
    std::mt19937_64 rng(1);
    ComplexSignal x(500);
    for (auto& z : x) z = {testing::random_vector(rng, 1)[0], testing::random_vector(rng, 1)[0]};
    CHECK(apply_impairments(x, DeviceImpairment{}, 1e6) == x);
  }

  TEST_CASE("pure CFO rotates by exp(j 2 pi f n / fs)") {
    DeviceImpairment imp;
    imp.cfo_hz = 1234.5;
    const auto y = apply_impairments(constant(4000), imp, 1e6);
    for (std::size_t n = 0; n < y.size(); n += 37) {
      const cd expect = std::exp(cd(0.0, 2.0 * std::numbers::pi * 1234.5 * static_cast<double>(n) / 1e6));
      CHECK(std::abs(y[n] - expect) <= 1e-9);
    }
  }

  TEST_CASE("6.02 dB gain imbalance on (1,1) gives (2,1)") {
    DeviceImpairment imp;
    imp.iq_gain_imbalance_db = 6.02;
    const auto y = apply_impairments(constant(1, {1.0, 1.0}), imp, 1e6);
    const double g = std::pow(10.0, 6.02 / 20.0);  // oracle: 1.99986...
    CHECK(y[0].real() == doctest::Approx(g).epsilon(1e-12));
    CHECK(std::abs(y[0].real() - 2.0) <= 1e-3);
    CHECK(y[0].imag() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("phase noise walk is seeded") {
    DeviceImpairment imp;
    imp.phase_noise_std_rad = 0.01;
    imp.seed = 5;
    const auto a = apply_impairments(constant(200), imp, 1e6);
    CHECK(a == apply_impairments(constant(200), imp, 1e6));
    imp.seed = 6;
    CHECK(a != apply_impairments(constant(200), imp, 1e6));
    for (const auto& z : a) CHECK(std::abs(std::abs(z) - 1.0) <= 1e-12);
  }

  TEST_CASE("noiseless single-tap channel is the identity") {
    const auto x = gen_lora_baseband(lora_preset(1), 2, {3, 9});
    CHECK(apply_channel(x, ChannelProfile{}) == x);
  }

  TEST_CASE("0 dB SNR on unit-power input adds unit-variance noise") {
    ChannelProfile ch;
    ch.snr_db = 0.0;
    ch.seed = 3;
    const auto x = constant(200'000);
    const auto y = apply_channel(x, ch);
    double var = 0;
    for (std::size_t i = 0; i < y.size(); ++i) var += std::norm(y[i] - x[i]);
    var /= static_cast<double>(y.size());
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("multipath output grows by the largest delay") {
    ChannelProfile ch;
    ch.taps = {{0, {1.0, 0.0}}, {5, {0.3, -0.1}}};
    const auto y = apply_channel(constant(100), ch);
    CHECK(y.size() == 105);
    CHECK(y[0] == cd(1.0, 0.0));
    CHECK(std::abs(y[50] - cd(1.3, -0.1)) <= 1e-15);
    CHECK(std::abs(y[104] - cd(0.3, -0.1)) <= 1e-15);
  }

  TEST_CASE("receiver stage") {
    const auto x = gen_lora_baseband(lora_preset(1), 1, {17});
    CHECK(apply_receiver(x, ReceiverProfile{}, 1e6) == x);
    ReceiverProfile rx;
    rx.gain_db = 20.0;
    const auto y = apply_receiver(x, rx, 1e6);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - 10.0 * x[i]) <= 1e-12);

    DeviceImpairment imp;
    imp.cfo_hz = 1700.0;
    ReceiverProfile lo;
    lo.lo_offset_hz = -1700.0;
    const auto back = apply_receiver(apply_impairments(x, imp, 1e6), lo, 1e6);
    CHECK(max_abs_diff(back, x) <= 1e-9);
  }

  TEST_CASE("roster draws stay inside the ranges and are seeded") {
    ImpairmentRanges r;
    const auto a = default_device_roster(25, 9, r);
    CHECK(a.size() == 25);
    for (const auto& d : a) {
      CHECK(std::abs(d.cfo_hz) <= r.cfo_hz);
      CHECK(std::abs(d.iq_gain_imbalance_db) <= r.iq_gain_imbalance_db);
      CHECK(std::abs(d.iq_phase_imbalance_rad) <= r.iq_phase_imbalance_rad);
      CHECK(std::abs(d.dc_offset.real()) <= r.dc_offset_max);
      CHECK(d.phase_noise_std_rad <= r.phase_noise_std_max);
    }
    const auto b = default_device_roster(25, 9, r);
    CHECK(a.front().cfo_hz == b.front().cfo_hz);
    CHECK(a.front().cfo_hz != default_device_roster(25, 10, r).front().cfo_hz);
  }

  TEST_CASE("25 devices give 25 distinct ids; same seed is bit-identical") {
    const auto roster = default_device_roster(25, 1);
    const auto dom = small_domain("A");
    const auto a = synth_dataset(roster, dom, 4, 42);
    CHECK(a.device_ids().size() == 25);
    CHECK(a.size() == 100);
    const auto b = synth_dataset(roster, dom, 4, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.frames()[i].data == b.frames()[i].data);
    const auto c = synth_dataset(roster, dom, 4, 43);
    CHECK(a.frames()[0].data != c.frames()[0].data);
  }

  TEST_CASE("domains differing only in receiver share the pre-receiver stream") {
    const auto roster = default_device_roster(3, 2);
    auto a = small_domain("A");
    auto b = small_domain("B");
    b.receiver.lo_offset_hz = 1500;
    b.receiver.gain_db = 3;
    SynthStages no_rx;
    no_rx.receiver = false;
    for (DeviceId id = 0; id < 3; ++id) {
      const auto ra = synth_recording(roster[id], id, a, 6, 5, {}, no_rx);
      const auto rb = synth_recording(roster[id], id, b, 6, 5, {}, no_rx);
      CHECK(ra.samples == rb.samples);
      const auto full_a = synth_recording(roster[id], id, a, 6, 5);
      const auto full_b = synth_recording(roster[id], id, b, 6, 5);
      CHECK(full_a.samples != full_b.samples);
      CHECK(full_a.samples.size() >= 6 * kFrameLength);
    }
  }

  TEST_CASE("transmission repeats preamble plus message") {
    const auto cfg = lora_preset(1);
    PayloadOptions p;
    const auto sym = transmission_symbols(cfg, 20, p, 0);
    REQUIRE(sym.size() == 20);
    for (std::size_t i = 0; i < 8; ++i) CHECK(sym[i] == 0);
    CHECK(sym[8] == 0x50);
    CHECK(sym[16] == 0);  // second packet starts with its preamble
  }

  TEST_CASE("invalid impairments are rejected") {
    DeviceImpairment imp;
    imp.cfo_hz = 1e6;
    CHECK_THROWS_AS(imp.validate(125e3), Error);
    ChannelProfile ch;
    ch.taps.clear();
    CHECK_THROWS_AS(ch.validate(), Error);
  }

  TEST_CASE("experiment file round trip") {
    testing::TempDir dir("exp");
    ExperimentRoster r;
    r.devices = default_device_roster(4, 3);
    r.domains = {small_domain("A")};
    write_experiment_json(dir / "exp.json", r);
    const auto back = read_experiment_json(dir / "exp.json");
    REQUIRE(back.devices.size() == 4);
    CHECK(back.devices[2].cfo_hz == r.devices[2].cfo_hz);
    CHECK(back.devices[2].seed == r.devices[2].seed);
    REQUIRE(back.domains.size() == 1);
    CHECK(back.domains[0].channel.snr_db == 20.0);
  }
}
