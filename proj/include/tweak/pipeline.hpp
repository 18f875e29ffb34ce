#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tweak/config.hpp"

namespace tweak {

using Logger = std::function<void(const std::string&)>;

// Device roster for synthesis: the experiment file if configured, otherwise
// drawn from the configured ranges.
std::vector<DeviceImpairment> config_roster(const ExperimentConfig& cfg);

// Known and unknown pools, resolved against the available device ids.
TrialSpec config_trial_spec(const ExperimentConfig& cfg, const std::vector<DeviceId>& device_ids);

// Writes one raw-IQ recording (+ sidecar) per device and domain, plus a manifest
// per domain. Returns the manifest paths.
std::vector<std::filesystem::path> cmd_synth(const ExperimentConfig& cfg, const Logger& log = {});

LabeledDataset load_domain(const ExperimentConfig& cfg, const std::string& domain);

std::filesystem::path cmd_train(const ExperimentConfig& cfg, bool vanilla, const Logger& log = {});

// Calibrates on the training portion of `domain` for the known devices.
std::filesystem::path cmd_calibrate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                    const std::string& domain,
                                    const std::optional<CalibrationSize>& n = std::nullopt,
                                    const Logger& log = {});

std::filesystem::path cmd_merge(const std::vector<std::filesystem::path>& tables,
                                const std::filesystem::path& out);

// Splits each device's frames into consecutive disjoint M-frame batches and writes
// JSON-lines decisions.
std::filesystem::path cmd_decide(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& calibration,
                                 const std::filesystem::path& manifest, std::size_t m,
                                 const std::filesystem::path& out, Precision precision = Precision::f64,
                                 const Logger& log = {});

// Runs the configured matrix; reuses checkpoints under `out/model` when present.
ExperimentMatrix cmd_evaluate(const ExperimentConfig& cfg, const Logger& log = {});

// Merges matrix.json files found in the given result directories into one table.
std::string cmd_report(const std::vector<std::filesystem::path>& result_dirs,
                       const std::filesystem::path& out);

}  // namespace tweak
