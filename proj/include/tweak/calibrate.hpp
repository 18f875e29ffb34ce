#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tweak/network.hpp"
#include "tweak/signal_io.hpp"

namespace tweak {

struct DeviceCalibration {
  DeviceId device_id = 0;
  EmbeddingPoint centroid;
  double radius = 0.0;
  std::size_t n_used = 0;
  std::string domain_id;
};

struct CalibrationTable {
  std::vector<DeviceCalibration> entries;  // ascending device_id
  std::string domain_id;
  std::string model_version;

  void validate() const;
  std::vector<DeviceId> device_ids() const;
};

// One table per domain over the same devices and model.
struct MultiCalibration {
  std::vector<CalibrationTable> tables;

  void validate() const;
  std::size_t pair_count() const;
};

enum class CalibrationSelect { first, random };
enum class RadiusRule { mean, quantile };

struct CalibrateOptions {
  CalibrationSelect select = CalibrationSelect::first;
  std::uint64_t seed = 0;
  RadiusRule radius = RadiusRule::mean;
  double quantile = 0.95;
};

// Centroid and radius from a set of embeddings (all of them are used).
DeviceCalibration calibrate_device(DeviceId id, std::span<const EmbeddingPoint> embeddings,
                                   const std::string& domain_id,
                                   const CalibrateOptions& opts = {});

// Indices of the n examples used for one device.
std::vector<std::size_t> calibration_indices(std::size_t available, std::size_t n, DeviceId id,
                                             const CalibrateOptions& opts);

CalibrationTable calibrate_embeddings(const std::map<DeviceId, std::vector<EmbeddingPoint>>& per_device,
                                      std::size_t n, const std::string& domain_id,
                                      const std::string& model_version,
                                      const CalibrateOptions& opts = {});

// Embeds only the selected examples; network weights are never touched.
CalibrationTable calibrate(const Embedder& embed,
                           const std::map<DeviceId, std::vector<FrameExample>>& examples,
                           std::size_t n, const std::string& domain_id,
                           const CalibrateOptions& opts = {});

CalibrationTable calibrate(const Embedder& embed, const LabeledDataset& examples, std::size_t n,
                           const CalibrateOptions& opts = {});

MultiCalibration merge_calibrations(std::span<const CalibrationTable> tables);

// Forward passes needed to calibrate k devices with n examples each.
std::size_t calibration_cost(std::size_t n, std::size_t k_devices);

// {model_version, domain_id, entries: [{device_id, centroid, radius, n_used}]}
void write_calibration(const std::filesystem::path& path, const CalibrationTable& table);
CalibrationTable read_calibration(const std::filesystem::path& path);
// {tables: [...]}; read_multi_calibration also accepts a single-table file.
void write_multi_calibration(const std::filesystem::path& path, const MultiCalibration& multi);
MultiCalibration read_multi_calibration(const std::filesystem::path& path);

}  // namespace tweak
