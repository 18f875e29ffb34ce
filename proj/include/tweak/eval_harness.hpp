#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tweak/calibrate.hpp"
#include "tweak/decide.hpp"
#include "tweak/network.hpp"
#include "tweak/train.hpp"

namespace tweak {

struct ConfusionCounts {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  bool operator==(const ConfusionCounts&) const = default;
};

// nullopt when the denominator is zero.
std::optional<double> tpr(const ConfusionCounts& c);
std::optional<double> fpr(const ConfusionCounts& c);

// Threshold sweep with trapezoidal integration; higher score means "known".
double auroc(std::span<const double> scores_known, std::span<const double> scores_unknown);

struct TrialSpec {
  std::vector<DeviceId> known_pool;
  std::vector<DeviceId> unknown_pool;
  std::size_t n_known_sampled = 5;
  std::size_t n_unknown_sampled = 5;
  std::size_t batches_per_device = 20;
  std::size_t m = kDefaultBatchM;
  std::uint64_t seed = 0;

  void validate() const;
};

// One M-frame decision batch: indices into a device's test frames.
struct TrialBatch {
  DeviceId device = 0;
  bool known = false;
  std::vector<std::size_t> frames;
};

// Seeded device sampling plus disjoint M-chunks of a seeded permutation of each
// sampled device's test frames. `available` gives each device's test frame count.
std::vector<TrialBatch> sample_trial(const std::map<DeviceId, std::size_t>& available,
                                     const TrialSpec& spec, std::size_t trial_index);

struct TrialResult {
  ConfusionCounts counts;
  std::vector<double> scores_known;
  std::vector<double> scores_unknown;
  std::vector<DeviceId> known_devices;
  std::vector<DeviceId> unknown_devices;
  double auroc = 0.0;
  std::optional<double> tpr;
  std::optional<double> fpr;
};

// Embeddings (or logits) of every test frame, per device, in dataset order.
using EmbeddedSet = std::map<DeviceId, std::vector<EmbeddingPoint>>;
EmbeddedSet embed_by_device(const Embedder& embed, const LabeledDataset& ds,
                            std::span<const DeviceId> devices = {});

TrialResult run_trial(const MultiCalibration& table, const EmbeddedSet& test,
                      const TrialSpec& spec, std::size_t trial_index = 0);
TrialResult run_trial(const CalibrationTable& table, const EmbeddedSet& test,
                      const TrialSpec& spec, std::size_t trial_index = 0);
TrialResult run_trial(const Embedder& embed, const CalibrationTable& table,
                      const LabeledDataset& test, const TrialSpec& spec,
                      std::size_t trial_index = 0);

// Vanilla baseline: each batch scores max(mean of its M logit vectors). No counts.
TrialResult run_vanilla_trial(const EmbeddedSet& logits, const TrialSpec& spec,
                              std::size_t trial_index = 0);

struct TrialSummary {
  double avg_auroc = 0.0;
  std::optional<double> avg_tpr;
  std::optional<double> avg_fpr;
  std::vector<double> aurocs;
  std::vector<std::optional<double>> tprs;
  std::vector<std::optional<double>> fprs;
};

TrialSummary avg_over_trials(std::span<const TrialResult> trials);

// ---- portability matrix -----------------------------------------------------------

// Absolute count, or a fraction of each device's training frames.
struct CalibrationSize {
  std::size_t absolute = 0;
  double fraction = 0.10;

  std::size_t resolve(std::size_t train_frames_per_device) const;
  static CalibrationSize parse(const std::string& s);
  std::string to_string() const;
};

struct MatrixOptions {
  TrainConfig train;
  TrialSpec spec;  // pools and trial shape; seed is the matrix root seed
  std::size_t trials = 5;
  double train_fraction = 0.75;
  CalibrationSize n;
  CalibrateOptions calibrate;
  bool vanilla = true;
  bool tune_learning_rate = false;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> log;
};

struct MatrixCell {
  std::vector<std::string> calibrate_domains;  // several => MultiCalibration
  std::string test_domain;
  TrialSummary summary;
  bool failed = false;
  std::string error;
};

struct VanillaCell {
  std::string test_domain;
  TrialSummary summary;  // AUROC only
  bool failed = false;
  std::string error;
};

struct ExperimentMatrix {
  std::string train_domain;
  std::vector<std::vector<std::string>> calibrate_domains;
  std::vector<std::string> test_domains;
  std::vector<MatrixCell> cells;  // calibrate-major order
  std::vector<VanillaCell> vanilla;
  std::size_t n_used = 0;
  std::string model_version;
  double learning_rate = 0.0;

  const MatrixCell& cell(const std::vector<std::string>& calibrate, const std::string& test) const;
};

// Already-trained models let callers reuse one training run across matrices.
struct TrainedModels {
  std::optional<Parameters> twin;
  std::optional<Parameters> vanilla;
};

// Trains on the train domain's known devices unless `models` supplies weights;
// `models` is filled with what was used.
ExperimentMatrix run_matrix(const std::string& train_domain,
                            const std::vector<std::vector<std::string>>& calibrate_domains,
                            const std::vector<std::string>& test_domains,
                            const std::map<std::string, LabeledDataset>& datasets,
                            const MatrixOptions& opts, TrainedModels* models = nullptr);

// One row per cell per metric per trial:
// run_id,method,train_domain,calibrate_domains,test_domain,metric,trial,value
std::string matrix_csv(const ExperimentMatrix& m, const std::string& run_id = "run");
std::string matrix_json(const ExperimentMatrix& m);
void write_matrix(const std::filesystem::path& dir, const ExperimentMatrix& m,
                  const std::string& run_id = "run");

}  // namespace tweak
