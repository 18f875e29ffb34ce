#include "tweak/synth_rf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <omp.h>

#include "json.hpp"

namespace tweak {

namespace fs = std::filesystem;
using nlohmann::json;
using cd = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

void LoRaConfig::validate() const {
  if (spreading_factor < 7 || spreading_factor > 12)
    throw Error("spreading factor must be in 7..12, got " + std::to_string(spreading_factor));
  if (!(bandwidth_hz > 0.0)) throw Error("bandwidth_hz must be positive");
  if (!(sample_rate_hz >= bandwidth_hz)) throw Error("sample_rate_hz must be >= bandwidth_hz");
}

std::size_t LoRaConfig::samples_per_symbol() const {
  return static_cast<std::size_t>(std::llround(symbol_duration_s() * sample_rate_hz));
}

LoRaConfig lora_preset(int config_id) {
  static constexpr int kSf[] = {7, 8, 11, 12};
  if (config_id < 1 || config_id > 4)
    throw Error("unknown LoRa configuration " + std::to_string(config_id));
  LoRaConfig c;
  c.spreading_factor = kSf[config_id - 1];
  c.bandwidth_hz = 125e3;
  c.sample_rate_hz = 1e6;
  c.config_id = config_id;
  return c;
}

void DeviceImpairment::validate(double bandwidth_hz) const {
  if (!(phase_noise_std_rad >= 0.0)) throw Error("phase_noise_std_rad must be >= 0");
  if (std::abs(iq_gain_imbalance_db) > 3.0) throw Error("|iq_gain_imbalance_db| must be <= 3");
  if (std::abs(cfo_hz) > bandwidth_hz / 4.0) throw Error("|cfo_hz| must be <= bandwidth/4");
}

void ChannelProfile::validate() const {
  if (taps.empty()) throw Error("channel needs at least one tap");
  if (std::none_of(taps.begin(), taps.end(), [](const MultipathTap& t) { return t.delay == 0; }))
    throw Error("channel needs a tap at delay 0");
  if (std::isnan(snr_db)) throw Error("snr_db is NaN");
}

std::size_t ChannelProfile::max_delay() const {
  std::size_t d = 0;
  for (const auto& t : taps) d = std::max(d, t.delay);
  return d;
}

void ReceiverProfile::validate() const {
  if (!std::isfinite(lo_offset_hz) || !std::isfinite(gain_db) ||
      !std::isfinite(dc_offset.real()) || !std::isfinite(dc_offset.imag()))
    throw Error("receiver profile fields must be finite");
}

std::vector<DeviceImpairment> default_device_roster(std::size_t count, std::uint64_t seed,
                                                    const ImpairmentRanges& r) {
  std::mt19937_64 rng(derive_seed(seed, "roster"));
  std::vector<DeviceImpairment> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& d = out[i];
    d.cfo_hz = uniform(rng, -r.cfo_hz, r.cfo_hz);
    d.iq_gain_imbalance_db = uniform(rng, -r.iq_gain_imbalance_db, r.iq_gain_imbalance_db);
    d.iq_phase_imbalance_rad = uniform(rng, -r.iq_phase_imbalance_rad, r.iq_phase_imbalance_rad);
    d.dc_offset = std::polar(uniform(rng, 0.0, r.dc_offset_max), uniform(rng, 0.0, kTwoPi));
    d.phase_noise_std_rad = uniform(rng, 0.0, r.phase_noise_std_max);
    d.seed = derive_seed(seed, "device", i);
  }
  return out;
}

ComplexSignal gen_lora_baseband(const LoRaConfig& config, std::size_t num_symbols,
                                const std::vector<std::uint32_t>& symbol_values,
                                std::uint64_t /*seed*/) {
  config.validate();
  if (symbol_values.size() != num_symbols)
    throw Error("symbol_values length " + std::to_string(symbol_values.size()) +
                " != num_symbols " + std::to_string(num_symbols));
  const std::size_t chips = config.chips();
  const std::size_t spb = config.samples_per_symbol();
  const double bw = config.bandwidth_hz;
  const double fs = config.sample_rate_hz;
  const double sweep = bw / config.symbol_duration_s();

  ComplexSignal out;
  out.reserve(num_symbols * spb);
  double phase = 0.0;
  for (std::size_t s = 0; s < num_symbols; ++s) {
    const auto value = symbol_values[s];
    if (value >= chips)
      throw Error("symbol value " + std::to_string(value) + " out of range for SF" +
                  std::to_string(config.spreading_factor));
    const double f0 = -bw / 2.0 + static_cast<double>(value) / static_cast<double>(chips) * bw;
    for (std::size_t k = 0; k < spb; ++k) {
      const double t = static_cast<double>(k) / fs;
      double f = f0 + sweep * t;
      f = std::fmod(f + bw / 2.0, bw);
      if (f < 0.0) f += bw;
      f -= bw / 2.0;
      out.emplace_back(std::cos(phase), std::sin(phase));
      phase = std::remainder(phase + kTwoPi * f / fs, kTwoPi);
    }
  }
  return out;
}

ComplexSignal apply_impairments(const ComplexSignal& samples, const DeviceImpairment& imp,
                                double sample_rate_hz) {
  const double g = std::pow(10.0, imp.iq_gain_imbalance_db / 20.0);
  const double ce = std::cos(imp.iq_phase_imbalance_rad);
  const double se = std::sin(imp.iq_phase_imbalance_rad);
  const bool imbalance = imp.iq_gain_imbalance_db != 0.0 || imp.iq_phase_imbalance_rad != 0.0;
  const double cycles_per_sample = imp.cfo_hz / sample_rate_hz;

  std::mt19937_64 rng(derive_seed(imp.seed, "phase-noise"));
  NormalSampler normal;
  double walk = 0.0;

  ComplexSignal out(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    cd z = samples[n];
    if (imbalance) z = {g * z.real(), z.imag() * ce + z.real() * se};
    if (imp.cfo_hz != 0.0) {
      const double turns = std::fmod(cycles_per_sample * static_cast<double>(n), 1.0);
      z *= cd(std::cos(kTwoPi * turns), std::sin(kTwoPi * turns));
    }
    if (imp.phase_noise_std_rad > 0.0) {
      walk += imp.phase_noise_std_rad * normal(rng);
      z *= cd(std::cos(walk), std::sin(walk));
    }
    out[n] = z + imp.dc_offset;
  }
  return out;
}

ComplexSignal apply_channel(const ComplexSignal& samples, const ChannelProfile& ch) {
  ch.validate();
  const std::size_t n = samples.size();
  ComplexSignal out(n + ch.max_delay(), cd{});
  for (const auto& tap : ch.taps)
    for (std::size_t k = 0; k < n; ++k) out[k + tap.delay] += tap.gain * samples[k];

  if (std::isinf(ch.snr_db) && ch.snr_db > 0) return out;

  double power = 0.0;
  for (const auto& z : out) power += std::norm(z);
  power /= static_cast<double>(out.size());
  if (power == 0.0) throw Error("cannot scale noise to SNR: input has zero power");
  const double noise_var = power / std::pow(10.0, ch.snr_db / 10.0);
  const double sigma = std::sqrt(noise_var / 2.0);

  std::mt19937_64 rng(derive_seed(ch.seed, "awgn"));
  NormalSampler normal;
  for (auto& z : out) {
    const double re = normal(rng);
    const double im = normal(rng);
    z += cd(sigma * re, sigma * im);
  }
  return out;
}

ComplexSignal apply_receiver(const ComplexSignal& samples, const ReceiverProfile& rx,
                             double sample_rate_hz) {
  rx.validate();
  const double gain = std::pow(10.0, rx.gain_db / 20.0);
  const double cycles_per_sample = rx.lo_offset_hz / sample_rate_hz;
  ComplexSignal out(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    cd z = samples[n];
    if (rx.gain_db != 0.0) z *= gain;
    if (rx.lo_offset_hz != 0.0) {
      const double turns = std::fmod(cycles_per_sample * static_cast<double>(n), 1.0);
      z *= cd(std::cos(kTwoPi * turns), std::sin(kTwoPi * turns));
    }
    out[n] = z + rx.dc_offset;
  }
  return out;
}

std::vector<std::uint32_t> PayloadOptions::default_message() {
  // ASCII "PING0001"
  return {0x50, 0x49, 0x4e, 0x47, 0x30, 0x30, 0x30, 0x31};
}

std::vector<std::uint32_t> transmission_symbols(const LoRaConfig& config, std::size_t num_symbols,
                                                const PayloadOptions& payload,
                                                std::uint64_t seed) {
  const auto chips = static_cast<std::uint32_t>(config.chips());
  std::vector<std::uint32_t> packet(payload.preamble_length, 0u);
  if (payload.randomize) {
    std::mt19937_64 rng(derive_seed(seed, "payload"));
    for (std::size_t i = 0; i < payload.message.size(); ++i)
      packet.push_back(static_cast<std::uint32_t>(uniform_index(rng, chips)));
  } else {
    for (auto v : payload.message) packet.push_back(v % chips);
  }
  if (packet.empty()) packet.push_back(0u);
  std::vector<std::uint32_t> out(num_symbols);
  for (std::size_t i = 0; i < num_symbols; ++i) out[i] = packet[i % packet.size()];
  return out;
}

IQRecording synth_recording(const DeviceImpairment& device, DeviceId device_id,
                            const DomainSpec& domain, std::size_t frames, std::uint64_t seed,
                            const PayloadOptions& payload, const SynthStages& stages) {
  if (frames == 0) throw Error("frames must be positive");
  domain.lora.validate();
  const double fs = domain.lora.sample_rate_hz;
  const std::size_t needed = frames * kFrameLength;
  const std::size_t spb = domain.lora.samples_per_symbol();
  const std::size_t num_symbols = (needed + spb - 1) / spb;

  const auto dev_seed = static_cast<std::uint64_t>(device_id);
  auto symbols = transmission_symbols(domain.lora, num_symbols, payload,
                                      derive_seed(seed, "device-payload", dev_seed));
  ComplexSignal x = gen_lora_baseband(domain.lora, num_symbols, symbols);
  if (stages.impairments) x = apply_impairments(x, device, fs);
  if (stages.channel) {
    ChannelProfile ch = domain.channel;
    ch.seed = derive_seed(seed ^ domain.channel.seed, "channel", dev_seed);
    x = apply_channel(x, ch);
  }
  if (stages.receiver) x = apply_receiver(x, domain.receiver, fs);
  x.resize(needed);

  IQRecording rec;
  rec.device_id = device_id;
  rec.domain_id = domain.domain_id;
  rec.sample_rate_hz = fs;
  rec.samples = std::move(x);
  rec.metadata["lora_config"] = std::to_string(domain.lora.config_id);
  return rec;
}

LabeledDataset synth_dataset(const std::vector<DeviceImpairment>& devices, const DomainSpec& domain,
                             std::size_t frames_per_device, std::uint64_t seed,
                             const PayloadOptions& payload, const SynthStages& stages) {
  if (devices.empty()) throw Error("device roster is empty");
  if (frames_per_device == 0) throw Error("frames_per_device must be positive");
  std::vector<std::vector<FrameExample>> per_device(devices.size());
  std::vector<std::string> errors(devices.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(devices.size()); ++i) {
    try {
      auto rec = synth_recording(devices[i], i, domain, frames_per_device, seed, payload, stages);
      auto frames = frame_recording(rec);
      frames.resize(frames_per_device);
      per_device[i] = std::move(frames);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);

  std::vector<FrameExample> all;
  all.reserve(devices.size() * frames_per_device);
  for (auto& v : per_device)
    for (auto& f : v) all.push_back(std::move(f));
  return LabeledDataset(std::move(all), domain.domain_id);
}

// ---- experiment JSON ------------------------------------------------------------

namespace {

json complex_to_json(cd z) { return json::array({z.real(), z.imag()}); }
cd complex_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json snr_to_json(double snr) { return std::isinf(snr) ? json(nullptr) : json(snr); }
double snr_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (j.is_string() && (j == "inf" || j == "+inf")) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

}  // namespace

ExperimentRoster read_experiment_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open experiment file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad experiment file " + path.string() + ": " + e.what());
  }
  ExperimentRoster r;
  for (const auto& d : j.at("devices")) {
    DeviceImpairment imp;
    imp.cfo_hz = d.value("cfo_hz", 0.0);
    imp.iq_gain_imbalance_db = d.value("iq_gain_imbalance_db", 0.0);
    imp.iq_phase_imbalance_rad = d.value("iq_phase_imbalance_rad", 0.0);
    if (d.contains("dc_offset")) imp.dc_offset = complex_from_json(d["dc_offset"]);
    imp.phase_noise_std_rad = d.value("phase_noise_std_rad", 0.0);
    imp.seed = d.value("seed", std::uint64_t{0});
    r.devices.push_back(imp);
  }
  for (const auto& d : j.at("domains")) {
    DomainSpec ds;
    ds.domain_id = d.at("domain_id").get<std::string>();
    if (d.contains("lora")) {
      const auto& l = d["lora"];
      ds.lora = lora_preset(l.value("config_id", 1));
      ds.lora.spreading_factor = l.value("spreading_factor", ds.lora.spreading_factor);
      ds.lora.bandwidth_hz = l.value("bandwidth_hz", ds.lora.bandwidth_hz);
      ds.lora.sample_rate_hz = l.value("sample_rate_hz", ds.lora.sample_rate_hz);
    }
    if (d.contains("channel")) {
      const auto& c = d["channel"];
      if (c.contains("snr_db")) ds.channel.snr_db = snr_from_json(c["snr_db"]);
      if (c.contains("taps")) {
        ds.channel.taps.clear();
        for (const auto& t : c["taps"])
          ds.channel.taps.push_back({t.value("delay", std::size_t{0}), complex_from_json(t.at("gain"))});
      }
      ds.channel.seed = c.value("seed", std::uint64_t{0});
    }
    if (d.contains("receiver")) {
      const auto& x = d["receiver"];
      ds.receiver.lo_offset_hz = x.value("lo_offset_hz", 0.0);
      ds.receiver.gain_db = x.value("gain_db", 0.0);
      if (x.contains("dc_offset")) ds.receiver.dc_offset = complex_from_json(x["dc_offset"]);
      ds.receiver.seed = x.value("seed", std::uint64_t{0});
    }
    r.domains.push_back(std::move(ds));
  }
  return r;
}

void write_experiment_json(const fs::path& path, const ExperimentRoster& r) {
  json j;
  j["devices"] = json::array();
  for (const auto& d : r.devices)
    j["devices"].push_back({{"cfo_hz", d.cfo_hz},
                            {"iq_gain_imbalance_db", d.iq_gain_imbalance_db},
                            {"iq_phase_imbalance_rad", d.iq_phase_imbalance_rad},
                            {"dc_offset", complex_to_json(d.dc_offset)},
                            {"phase_noise_std_rad", d.phase_noise_std_rad},
                            {"seed", d.seed}});
  j["domains"] = json::array();
  for (const auto& d : r.domains) {
    json taps = json::array();
    for (const auto& t : d.channel.taps)
      taps.push_back({{"delay", t.delay}, {"gain", complex_to_json(t.gain)}});
    j["domains"].push_back(
        {{"domain_id", d.domain_id},
         {"lora",
          {{"spreading_factor", d.lora.spreading_factor},
           {"bandwidth_hz", d.lora.bandwidth_hz},
           {"sample_rate_hz", d.lora.sample_rate_hz},
           {"config_id", d.lora.config_id}}},
         {"channel", {{"snr_db", snr_to_json(d.channel.snr_db)}, {"taps", taps}, {"seed", d.channel.seed}}},
         {"receiver",
          {{"lo_offset_hz", d.receiver.lo_offset_hz},
           {"gain_db", d.receiver.gain_db},
           {"dc_offset", complex_to_json(d.receiver.dc_offset)},
           {"seed", d.receiver.seed}}}});
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace tweak
