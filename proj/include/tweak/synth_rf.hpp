#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tweak/signal_io.hpp"

namespace tweak {

using ComplexSignal = std::vector<std::complex<double>>;

struct LoRaConfig {
  int spreading_factor = 7;
  double bandwidth_hz = 125e3;
  double sample_rate_hz = 1e6;
  int config_id = 1;

  void validate() const;
  std::size_t chips() const { return std::size_t{1} << spreading_factor; }
  double symbol_duration_s() const { return static_cast<double>(chips()) / bandwidth_hz; }
  std::size_t samples_per_symbol() const;
};

// Transmitter configurations 1..4 (SF 7, 8, 11, 12 at 125 kHz, sampled at 1 MS/s).
LoRaConfig lora_preset(int config_id);

struct DeviceImpairment {
  double cfo_hz = 0.0;
  double iq_gain_imbalance_db = 0.0;
  double iq_phase_imbalance_rad = 0.0;
  std::complex<double> dc_offset{0.0, 0.0};
  double phase_noise_std_rad = 0.0;
  std::uint64_t seed = 0;

  void validate(double bandwidth_hz) const;
};

struct MultipathTap {
  std::size_t delay = 0;
  std::complex<double> gain{1.0, 0.0};
};

struct ChannelProfile {
  // +inf disables noise.
  double snr_db = std::numeric_limits<double>::infinity();
  std::vector<MultipathTap> taps{MultipathTap{}};
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t max_delay() const;
};

struct ReceiverProfile {
  double lo_offset_hz = 0.0;
  double gain_db = 0.0;
  std::complex<double> dc_offset{0.0, 0.0};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DomainSpec {
  std::string domain_id;
  LoRaConfig lora;
  ChannelProfile channel;
  ReceiverProfile receiver;
};

// Ranges used when drawing a default roster of "almost identical" devices.
struct ImpairmentRanges {
  double cfo_hz = 2000.0;
  double iq_gain_imbalance_db = 3.0;
  double iq_phase_imbalance_rad = 0.15;
  double dc_offset_max = 0.01;
  double phase_noise_std_max = 5e-4;
};

std::vector<DeviceImpairment> default_device_roster(std::size_t count, std::uint64_t seed,
                                                    const ImpairmentRanges& ranges = {});

// Continuous-phase CSS up-chirps; one symbol is round(2^SF / BW * fs) samples.
ComplexSignal gen_lora_baseband(const LoRaConfig& config, std::size_t num_symbols,
                                const std::vector<std::uint32_t>& symbol_values,
                                std::uint64_t seed = 0);

// IQ imbalance -> CFO -> phase-noise random walk -> DC offset.
ComplexSignal apply_impairments(const ComplexSignal& samples, const DeviceImpairment& imp,
                                double sample_rate_hz);

// Multipath convolution (output grows by the largest delay), then AWGN at snr_db
// relative to the mean power of the convolved signal.
ComplexSignal apply_channel(const ComplexSignal& samples, const ChannelProfile& ch);

// Gain -> LO offset rotation -> DC offset.
ComplexSignal apply_receiver(const ComplexSignal& samples, const ReceiverProfile& rx,
                             double sample_rate_hz);

struct PayloadOptions {
  // A transmission repeats one packet: `preamble_length` zero-valued up-chirps
  // followed by `message` (reduced mod 2^SF).
  std::size_t preamble_length = 8;
  std::vector<std::uint32_t> message = default_message();
  bool randomize = false;

  static std::vector<std::uint32_t> default_message();
};

std::vector<std::uint32_t> transmission_symbols(const LoRaConfig& config, std::size_t num_symbols,
                                                const PayloadOptions& payload, std::uint64_t seed);

struct SynthStages {
  bool impairments = true;
  bool channel = true;
  bool receiver = true;
};

// One device's received transmission, long enough for `frames` disjoint frames.
IQRecording synth_recording(const DeviceImpairment& device, DeviceId device_id,
                            const DomainSpec& domain, std::size_t frames, std::uint64_t seed,
                            const PayloadOptions& payload = {}, const SynthStages& stages = {});

LabeledDataset synth_dataset(const std::vector<DeviceImpairment>& devices, const DomainSpec& domain,
                             std::size_t frames_per_device, std::uint64_t seed,
                             const PayloadOptions& payload = {}, const SynthStages& stages = {});

// ---- experiment file (JSON) --------------------------------------------------

struct ExperimentRoster {
  std::vector<DeviceImpairment> devices;
  std::vector<DomainSpec> domains;
};

ExperimentRoster read_experiment_json(const std::filesystem::path& path);
void write_experiment_json(const std::filesystem::path& path, const ExperimentRoster& roster);

}  // namespace tweak
