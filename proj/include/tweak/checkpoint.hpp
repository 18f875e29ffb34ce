#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tweak/network.hpp"
#include "tweak/train.hpp"

namespace tweak {

inline constexpr int kCheckpointFormat = 1;

struct Checkpoint {
  std::string kind = "twin";  // "twin" or "vanilla"
  Parameters params;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::string train_domain;
  std::vector<DeviceId> classes;  // vanilla: device id of each logit
};

// Self-describing JSON: config, every tensor (row-major), seeds, history.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tweak
