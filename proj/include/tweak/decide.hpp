#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tweak/calibrate.hpp"
#include "tweak/network.hpp"

namespace tweak {

inline constexpr std::size_t kDefaultBatchM = 10;

enum class Verdict { admit, reject };
std::string to_string(Verdict v);

struct Decision {
  Verdict verdict = Verdict::reject;
  std::optional<DeviceId> matched_device;  // first entry within its radius
  std::optional<std::string> matched_domain;
  double min_distance = 0.0;
  double score = 0.0;  // -min_distance
};

// Mean of precomputed embeddings.
EmbeddingPoint mean_point(std::span<const EmbeddingPoint> embeddings);

// Mean of the infer-mode embeddings of the M frames.
EmbeddingPoint input_point(const Embedder& embed, std::span<const FrameExample> batch);

// Entries are visited in ascending device_id, then table order.
Decision open_set_decide(std::span<const double> point, const CalibrationTable& table);
Decision open_set_decide(std::span<const double> point, const MultiCalibration& multi);

double decision_score(std::span<const double> point, const CalibrationTable& table);
double decision_score(std::span<const double> point, const MultiCalibration& multi);

struct DecisionRecord {
  DeviceId true_device = 0;
  bool true_known = false;
  Decision decision;
};

// One JSON object per line: {true_device, true_known, verdict, matched_device, score}.
std::string decision_jsonl(const DecisionRecord& record);
void write_decisions_jsonl(const std::filesystem::path& path,
                           std::span<const DecisionRecord> records);

}  // namespace tweak
