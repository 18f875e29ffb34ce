#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tweak/calibrate.hpp"
#include "tweak/eval_harness.hpp"
#include "tweak/synth_rf.hpp"
#include "tweak/train.hpp"

namespace tweak {

// ---- TOML-style key/value file ------------------------------------------------------
// Supported: [section] / [section.sub] headers, `key = value` with strings,
// integers, floats, booleans, and single-line arrays of those. `#` comments.

struct ConfigValue {
  using Scalar = std::variant<bool, long long, double, std::string>;
  std::variant<Scalar, std::vector<Scalar>> v;

  bool is_array() const { return v.index() == 1; }
  std::string as_string() const;
  double as_double() const;
  long long as_int() const;
  bool as_bool() const;
  std::vector<std::string> as_string_list() const;
  std::vector<double> as_double_list() const;
  std::vector<long long> as_int_list() const;
};

class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigDoc load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  const ConfigValue* get(const std::string& section, const std::string& key) const;
  std::vector<std::string> sections_with_prefix(const std::string& prefix) const;
  std::vector<std::string> keys(const std::string& section) const;

 private:
  std::map<std::string, std::map<std::string, ConfigValue>> sections_;
  std::vector<std::string> order_;
};

// ---- experiment config --------------------------------------------------------------

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "tweak-out";
  std::filesystem::path base_dir = ".";  // relative paths resolve here

  // synth
  std::size_t devices = 25;
  std::size_t frames_per_device = 800;
  ImpairmentRanges ranges;
  std::optional<std::filesystem::path> experiment_file;  // roster JSON overrides the above
  PayloadOptions payload;
  std::vector<DomainSpec> domains;

  // train
  std::string train_domain;
  TrainConfig train;
  bool tune_learning_rate = false;
  bool train_vanilla = true;

  // eval
  std::size_t known_count = 10;
  std::vector<DeviceId> known;    // empty: first known_count device ids
  std::vector<DeviceId> unknown;  // empty: the rest
  CalibrationSize n;
  std::size_t m = kDefaultBatchM;
  std::size_t trials = 5;
  std::size_t batches_per_device = 20;
  std::size_t n_known_sampled = 5;
  std::size_t n_unknown_sampled = 5;
  double train_fraction = 0.75;
  CalibrateOptions calibrate;
  std::vector<std::vector<std::string>> calibrate_domains;  // "a+b" => multi
  std::vector<std::string> test_domains;

  static ExperimentConfig from_doc(const ConfigDoc& doc, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);

  void validate() const;
  const DomainSpec& domain(const std::string& id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  // Output layout under `out`.
  std::filesystem::path data_dir() const { return resolve(out) / "data"; }
  std::filesystem::path manifest_path(const std::string& domain) const;
  std::filesystem::path model_path(bool vanilla) const;
  std::filesystem::path calibration_path(const std::string& domain) const;
  std::filesystem::path results_dir() const { return resolve(out) / "results"; }
};

std::vector<std::string> split_domain_list(const std::string& s);

}  // namespace tweak
