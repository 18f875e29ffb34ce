#include "tweak/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "tweak/triplet.hpp"

namespace tweak {

using nlohmann::json;

void CalibrationTable::validate() const {
  if (entries.empty()) throw Error("calibration table is empty");
  std::set<DeviceId> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.device_id).second)
      throw Error("device " + std::to_string(e.device_id) + " appears twice in calibration table");
    if (!(e.radius >= 0.0)) throw Error("negative calibration radius");
    if (e.n_used < 1) throw Error("calibration entry with n_used = 0");
    if (e.centroid.size() != entries.front().centroid.size())
      throw Error("calibration centroids differ in dimension");
  }
}

std::vector<DeviceId> CalibrationTable::device_ids() const {
  std::vector<DeviceId> ids;
  for (const auto& e : entries) ids.push_back(e.device_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void MultiCalibration::validate() const {
  if (tables.empty()) throw Error("multi-calibration holds no tables");
  std::set<std::string> domains;
  for (const auto& t : tables) {
    t.validate();
    if (t.device_ids() != tables.front().device_ids())
      throw Error("calibration tables cover different device sets");
    if (t.model_version != tables.front().model_version)
      throw Error("calibration tables come from different models");
    if (!domains.insert(t.domain_id).second)
      throw Error("domain '" + t.domain_id + "' calibrated twice");
  }
}

std::size_t MultiCalibration::pair_count() const {
  std::size_t n = 0;
  for (const auto& t : tables) n += t.entries.size();
  return n;
}

DeviceCalibration calibrate_device(DeviceId id, std::span<const EmbeddingPoint> emb,
                                   const std::string& domain_id, const CalibrateOptions& opts) {
  if (emb.empty()) throw Error("device " + std::to_string(id) + " has no calibration examples");
  const std::size_t D = emb.front().size();
  DeviceCalibration c;
  c.device_id = id;
  c.domain_id = domain_id;
  c.n_used = emb.size();
  c.centroid.assign(D, 0.0);
  for (const auto& e : emb) {
    if (e.size() != D) throw Error("calibration embeddings differ in dimension");
    for (std::size_t k = 0; k < D; ++k) c.centroid[k] += e[k];
  }
  for (auto& v : c.centroid) v /= static_cast<double>(emb.size());

  std::vector<double> dist;
  dist.reserve(emb.size());
  for (const auto& e : emb) dist.push_back(euclidean_distance(e, c.centroid));
  if (opts.radius == RadiusRule::mean) {
    c.radius = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
  } else {
    if (!(opts.quantile >= 0.0 && opts.quantile <= 1.0)) throw Error("quantile must be in [0,1]");
    std::sort(dist.begin(), dist.end());
    const double pos = opts.quantile * static_cast<double>(dist.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, dist.size() - 1);
    c.radius = dist[lo] + (pos - static_cast<double>(lo)) * (dist[hi] - dist[lo]);
  }
  return c;
}

std::vector<std::size_t> calibration_indices(std::size_t available, std::size_t n, DeviceId id,
                                             const CalibrateOptions& opts) {
  if (n == 0) throw Error("calibration size n must be at least 1");
  if (available < n)
    throw Error("device " + std::to_string(id) + " has " + std::to_string(available) +
                " calibration examples, need " + std::to_string(n));
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opts.select == CalibrationSelect::random) {
    std::mt19937_64 rng(derive_seed(opts.seed, "calibrate", static_cast<std::uint64_t>(id)));
    fisher_yates(idx, rng);
  }
  idx.resize(n);
  return idx;
}

CalibrationTable calibrate_embeddings(const std::map<DeviceId, std::vector<EmbeddingPoint>>& per_device,
                                      std::size_t n, const std::string& domain_id,
                                      const std::string& model_version,
                                      const CalibrateOptions& opts) {
  if (per_device.empty()) throw Error("no devices to calibrate");
  CalibrationTable t;
  t.domain_id = domain_id;
  t.model_version = model_version;
  for (const auto& [id, emb] : per_device) {
    std::vector<EmbeddingPoint> chosen;
    for (auto i : calibration_indices(emb.size(), n, id, opts)) chosen.push_back(emb[i]);
    t.entries.push_back(calibrate_device(id, chosen, domain_id, opts));
  }
  return t;
}

CalibrationTable calibrate(const Embedder& embed,
                           const std::map<DeviceId, std::vector<FrameExample>>& examples,
                           std::size_t n, const std::string& domain_id,
                           const CalibrateOptions& opts) {
  if (examples.empty()) throw Error("no devices to calibrate");
  CalibrationTable t;
  t.domain_id = domain_id;
  t.model_version = embed.params().model_version();
  for (const auto& [id, frames] : examples) {
    std::vector<const FrameExample*> chosen;
    for (auto i : calibration_indices(frames.size(), n, id, opts)) chosen.push_back(&frames[i]);
    const auto emb = embed.embed(std::span<const FrameExample* const>(chosen));
    t.entries.push_back(calibrate_device(id, emb, domain_id, opts));
  }
  return t;
}

CalibrationTable calibrate(const Embedder& embed, const LabeledDataset& examples, std::size_t n,
                           const CalibrateOptions& opts) {
  return calibrate(embed, examples.by_device(), n, examples.domain_id(), opts);
}

MultiCalibration merge_calibrations(std::span<const CalibrationTable> tables) {
  MultiCalibration m;
  m.tables.assign(tables.begin(), tables.end());
  m.validate();
  return m;
}

std::size_t calibration_cost(std::size_t n, std::size_t k_devices) {
  if (n == 0) throw Error("calibration size n must be at least 1");
  if (k_devices == 0) throw Error("calibration needs at least one device");
  return n * k_devices;
}

// ---- JSON -----------------------------------------------------------------------------

namespace {

json table_to_json(const CalibrationTable& t) {
  json entries = json::array();
  for (const auto& e : t.entries)
    entries.push_back({{"device_id", e.device_id},
                       {"centroid", e.centroid},
                       {"radius", std::isfinite(e.radius) ? json(e.radius) : json(nullptr)},
                       {"n_used", e.n_used}});
  return {{"model_version", t.model_version}, {"domain_id", t.domain_id}, {"entries", entries}};
}

CalibrationTable table_from_json(const json& j) {
  CalibrationTable t;
  t.model_version = j.at("model_version").get<std::string>();
  t.domain_id = j.at("domain_id").get<std::string>();
  for (const auto& e : j.at("entries")) {
    DeviceCalibration c;
    c.device_id = e.at("device_id").get<DeviceId>();
    c.centroid = e.at("centroid").get<std::vector<double>>();
    c.radius = e.at("radius").is_null() ? std::numeric_limits<double>::infinity()
                                        : e.at("radius").get<double>();
    c.n_used = e.at("n_used").get<std::size_t>();
    c.domain_id = t.domain_id;
    t.entries.push_back(std::move(c));
  }
  std::sort(t.entries.begin(), t.entries.end(),
            [](const auto& a, const auto& b) { return a.device_id < b.device_id; });
  t.validate();
  return t;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open calibration file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad calibration file " + path.string() + ": " + e.what());
  }
}

}  // namespace

void write_calibration(const std::filesystem::path& path, const CalibrationTable& table) {
  table.validate();
  write_file_atomic(path, table_to_json(table).dump(2) + "\n");
}

CalibrationTable read_calibration(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    return table_from_json(j);
  } catch (const json::exception& e) {
    throw Error("malformed calibration file " + path.string() + ": " + e.what());
  }
}

void write_multi_calibration(const std::filesystem::path& path, const MultiCalibration& multi) {
  multi.validate();
  json tables = json::array();
  for (const auto& t : multi.tables) tables.push_back(table_to_json(t));
  write_file_atomic(path, json{{"tables", tables}}.dump(2) + "\n");
}

MultiCalibration read_multi_calibration(const std::filesystem::path& path) {
  const json j = read_json(path);
  try {
    MultiCalibration m;
    if (j.contains("tables")) {
      for (const auto& t : j["tables"]) m.tables.push_back(table_from_json(t));
    } else {
      m.tables.push_back(table_from_json(j));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw Error("malformed calibration file " + path.string() + ": " + e.what());
  }
}

}  // namespace tweak
