#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tweak/common.hpp"

namespace tweak {

inline constexpr std::size_t kFrameChannels = 2;
inline constexpr std::size_t kFrameLength = 128;

struct IQRecording {
  DeviceId device_id = 0;
  std::string domain_id;
  double sample_rate_hz = 0.0;
  std::vector<std::complex<double>> samples;
  std::map<std::string, std::string> metadata;

  // Throws tweak::Error if any invariant is broken.
  void validate() const;
};

// One 2 x L real frame; row 0 holds I, row 1 holds Q, stored row-major.
struct FrameExample {
  std::vector<double> data;
  std::size_t length = kFrameLength;
  DeviceId device_id = 0;
  std::string domain_id;

  FrameExample() = default;
  FrameExample(std::size_t len, DeviceId dev, std::string domain)
      : data(kFrameChannels * len, 0.0), length(len), device_id(dev),
        domain_id(std::move(domain)) {}

  double& in_phase(std::size_t t) { return data[t]; }
  double& quadrature(std::size_t t) { return data[length + t]; }
  double in_phase(std::size_t t) const { return data[t]; }
  double quadrature(std::size_t t) const { return data[length + t]; }

  void validate() const;
};

class LabeledDataset {
 public:
  LabeledDataset() = default;
  // device_ids are derived from the frames; every frame must carry domain_id.
  LabeledDataset(std::vector<FrameExample> frames, std::string domain_id);

  const std::vector<FrameExample>& frames() const { return frames_; }
  const std::vector<DeviceId>& device_ids() const { return device_ids_; }
  const std::string& domain_id() const { return domain_id_; }
  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }

  // Frames of one device in dataset order.
  std::vector<FrameExample> frames_of(DeviceId id) const;
  std::map<DeviceId, std::vector<FrameExample>> by_device() const;
  std::size_t count_of(DeviceId id) const;

  // Keeps only frames whose device is in `ids`; order preserved.
  LabeledDataset restrict_to(std::span<const DeviceId> ids) const;

 private:
  std::vector<FrameExample> frames_;
  std::vector<DeviceId> device_ids_;
  std::string domain_id_;
};

// ---- raw IQ files -------------------------------------------------------

// Interleaved little-endian binary32 I,Q pairs.
IQRecording load_raw_iq(const std::filesystem::path& path, double sample_rate_hz,
                        DeviceId device_id, const std::string& domain_id);
void save_raw_iq(const std::filesystem::path& path, const IQRecording& rec);

struct SidecarMetadata {
  DeviceId device_id = 0;
  std::string domain_id;
  double sample_rate_hz = 0.0;
  double center_frequency_hz = 0.0;
  std::string lora_config;
  std::string notes;
};

// `<stem>.meta.json` next to `<stem>.iq`.
std::filesystem::path sidecar_path(const std::filesystem::path& iq_path);
void write_sidecar(const std::filesystem::path& iq_path, const SidecarMetadata& meta);
SidecarMetadata read_sidecar(const std::filesystem::path& iq_path);

// Loads samples and takes device/domain/rate from the sidecar.
IQRecording load_recording_with_sidecar(const std::filesystem::path& iq_path);

struct ManifestEntry {
  std::filesystem::path path;
  DeviceId device_id = 0;
  std::string domain_id;
};

// Relative paths in a manifest resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<ManifestEntry>& entries);

// ---- framing / splitting ------------------------------------------------

std::vector<FrameExample> frame_recording(const IQRecording& rec,
                                          std::size_t frame_len = kFrameLength,
                                          std::size_t stride = kFrameLength);

enum class SplitMode { contiguous, random };

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// Per-device stratified split. Contiguous mode sends the first fraction of
// each device's frames (in dataset order) to train; random mode draws a
// seeded subset of each device's frames, keeping dataset order within each side.
DatasetSplit split_dataset(const LabeledDataset& ds, double train_fraction = 0.75,
                           std::uint64_t seed = 0, SplitMode mode = SplitMode::contiguous);

// Number of frames that land in train for a device with `count` frames.
std::size_t train_count_for(std::size_t count, double train_fraction);

enum class NormalizeMode { none, unit_power };

NormalizeMode parse_normalize_mode(const std::string& s);
std::string to_string(NormalizeMode m);

FrameExample normalize_frame(const FrameExample& frame, NormalizeMode mode);
double frame_rms(const FrameExample& frame);

// Loads every manifest entry, frames it and concatenates into one dataset.
// All entries must share one domain_id.
LabeledDataset load_manifest_dataset(const std::filesystem::path& manifest_path,
                                     std::size_t frame_len = kFrameLength,
                                     std::size_t stride = kFrameLength,
                                     NormalizeMode mode = NormalizeMode::none);

// Writes `content` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace tweak
