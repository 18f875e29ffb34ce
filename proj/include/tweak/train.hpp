#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tweak/network.hpp"
#include "tweak/signal_io.hpp"
#include "tweak/triplet.hpp"

namespace tweak {

struct TrainConfig {
  double margin = 0.1;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t devices_per_batch = 8;
  std::size_t epochs = 100;
  std::vector<double> lr_grid{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  std::size_t tune_epochs = 0;  // 0: tune with `epochs`
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  MiningStrategy mining = MiningStrategy::batch_all;
  std::size_t batches_per_epoch = 0;  // 0: fit-set size / batch_size

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;         // 1-based
  double train_loss = 0.0;       // mean hinge over all valid triplets of the epoch's batches
  double objective = 0.0;        // mean optimized loss (mined triplets or cross entropy)
  double validation_loss = 0.0;  // NaN when there is no validation slice
  double active_fraction = 0.0;  // batch_all/batch_hard survivors per valid triplet/anchor
};

struct TrainResult {
  Parameters params;  // snapshot from best_epoch (initial params when epochs == 0)
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  double learning_rate = 0.0;
};

class TrainDivergence : public Error {
 public:
  TrainDivergence(std::size_t epoch, std::size_t batch, const std::string& what);
  std::size_t epoch;
  std::size_t batch;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Fit/validation partition: the last validation_fraction of each device's
// frames (dataset order) is held out.
struct FitSplit {
  LabeledDataset fit;
  LabeledDataset validation;
};
FitSplit split_validation(const LabeledDataset& train_set, double validation_fraction);

// P x Q batch sampler. Each device's frames are reshuffled whenever exhausted.
class BatchSampler {
 public:
  BatchSampler(const LabeledDataset& ds, std::size_t batch_size, std::size_t devices_per_batch,
               std::uint64_t seed);
  std::vector<const FrameExample*> next();
  std::size_t devices_per_batch() const { return per_batch_devices_; }
  std::size_t frames_per_device() const { return per_device_frames_; }

 private:
  std::vector<std::vector<const FrameExample*>> pools_;
  std::vector<std::size_t> cursor_;
  std::vector<std::size_t> device_order_;
  std::size_t per_batch_devices_ = 0;
  std::size_t per_device_frames_ = 0;
  std::mt19937_64 rng_;
};

TrainResult train(const Parameters& init, const LabeledDataset& train_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct TuneResult {
  double chosen = 0.0;
  std::vector<double> rates;
  std::vector<std::optional<double>> validation_loss;  // nullopt: diverged
};

TuneResult tune_learning_rate(const Parameters& init, const LabeledDataset& train_set,
                              const TrainConfig& cfg);

struct GradientResult {
  double loss = 0.0;
  std::size_t active = 0;
  std::vector<double> grad;  // layout order
};

// Analytic gradient of the mean mined-triplet loss over one batch, in train mode.
// Running statistics are left untouched.
GradientResult gradient(const Parameters& params, std::span<const FrameExample* const> batch,
                        const TrainConfig& cfg);

// The scalar that `gradient` differentiates; used by finite-difference checks.
double batch_objective(const Parameters& params, std::span<const FrameExample* const> batch,
                       const TrainConfig& cfg);

// Validation loss: mean hinge over all valid triplets, pooled over fixed
// device-interleaved batches, in infer mode.
double validation_loss(const Parameters& params, const LabeledDataset& validation,
                       const TrainConfig& cfg);

// ---- vanilla cross-entropy baseline -------------------------------------------------

double cross_entropy_loss(std::span<const double> logits, std::size_t label);
double max_logit_score(std::span<const double> logits);

// Class index of every device: its position among the sorted training device ids.
std::vector<DeviceId> vanilla_classes(const LabeledDataset& train_set);

TrainResult train_vanilla(const Parameters& init, const LabeledDataset& train_set,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::vector<double> vanilla_forward(const Parameters& params, const FrameExample& frame);

}  // namespace tweak
