#include "tweak/decide.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "tweak/triplet.hpp"

namespace tweak {

std::string to_string(Verdict v) { return v == Verdict::admit ? "Admit" : "Reject"; }

EmbeddingPoint mean_point(std::span<const EmbeddingPoint> embeddings) {
  if (embeddings.empty()) throw Error("empty input batch");
  const std::size_t D = embeddings.front().size();
  EmbeddingPoint p(D, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != D) throw Error("input embeddings differ in dimension");
    for (std::size_t k = 0; k < D; ++k) p[k] += e[k];
  }
  for (auto& v : p) v /= static_cast<double>(embeddings.size());
  return p;
}

EmbeddingPoint input_point(const Embedder& embed, std::span<const FrameExample> batch) {
  if (batch.empty()) throw Error("empty input batch");
  for (const auto& f : batch)
    if (f.domain_id != batch.front().domain_id)
      throw Error("input batch mixes domains");
  return mean_point(embed.embed(batch));
}

namespace {

struct EntryRef {
  const DeviceCalibration* entry;
  const std::string* domain;
};

Decision decide_entries(std::span<const double> point, std::vector<EntryRef> refs) {
  if (refs.empty()) throw Error("calibration table is empty");
  std::stable_sort(refs.begin(), refs.end(), [](const EntryRef& a, const EntryRef& b) {
    return a.entry->device_id < b.entry->device_id;
  });
  Decision d;
  d.min_distance = std::numeric_limits<double>::infinity();
  for (const auto& r : refs) {
    const double dist = euclidean_distance(point, r.entry->centroid);
    d.min_distance = std::min(d.min_distance, dist);
    if (d.verdict == Verdict::reject && dist <= r.entry->radius) {
      d.verdict = Verdict::admit;
      d.matched_device = r.entry->device_id;
      d.matched_domain = *r.domain;
    }
  }
  d.score = -d.min_distance;
  return d;
}

std::vector<EntryRef> refs_of(const CalibrationTable& t) {
  std::vector<EntryRef> refs;
  for (const auto& e : t.entries) refs.push_back({&e, &t.domain_id});
  return refs;
}

}  // namespace

Decision open_set_decide(std::span<const double> point, const CalibrationTable& table) {
  return decide_entries(point, refs_of(table));
}

Decision open_set_decide(std::span<const double> point, const MultiCalibration& multi) {
  std::vector<EntryRef> refs;
  for (const auto& t : multi.tables)
    for (const auto& r : refs_of(t)) refs.push_back(r);
  return decide_entries(point, std::move(refs));
}

double decision_score(std::span<const double> point, const CalibrationTable& table) {
  return open_set_decide(point, table).score;
}

double decision_score(std::span<const double> point, const MultiCalibration& multi) {
  return open_set_decide(point, multi).score;
}

std::string decision_jsonl(const DecisionRecord& r) {
  nlohmann::ordered_json j;
  j["true_device"] = r.true_device;
  j["true_known"] = r.true_known;
  j["verdict"] = to_string(r.decision.verdict);
  j["matched_device"] =
      r.decision.matched_device ? nlohmann::ordered_json(*r.decision.matched_device) : nullptr;
  j["score"] = r.decision.score;
  return j.dump();
}

void write_decisions_jsonl(const std::filesystem::path& path,
                           std::span<const DecisionRecord> records) {
  std::string out;
  for (const auto& r : records) out += decision_jsonl(r) + "\n";
  write_file_atomic(path, out);
}

}  // namespace tweak
