#include "tweak/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"
#include "tweak/checkpoint.hpp"

namespace tweak {

namespace fs = std::filesystem;

namespace {

void say(const Logger& log, const std::string& s) {
  if (log) log(s);
}

std::vector<DeviceId> resolve_known(const ExperimentConfig& cfg, const std::vector<DeviceId>& ids) {
  if (!cfg.known.empty()) return cfg.known;
  if (cfg.known_count > ids.size())
    throw Error("known_count " + std::to_string(cfg.known_count) + " exceeds the " +
                std::to_string(ids.size()) + " available devices");
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cfg.known_count)};
}

LabeledDataset known_train_portion(const ExperimentConfig& cfg, const LabeledDataset& ds) {
  const auto spec = config_trial_spec(cfg, ds.device_ids());
  const auto split = split_dataset(ds, cfg.train_fraction, derive_seed(cfg.seed, "split"));
  return split.train.restrict_to(spec.known_pool);
}

std::size_t min_count(const LabeledDataset& ds) {
  std::size_t n = SIZE_MAX;
  for (DeviceId id : ds.device_ids()) n = std::min(n, ds.count_of(id));
  return n;
}

}  // namespace

std::vector<DeviceImpairment> config_roster(const ExperimentConfig& cfg) {
  if (cfg.experiment_file) return read_experiment_json(cfg.resolve(*cfg.experiment_file)).devices;
  return default_device_roster(cfg.devices, derive_seed(cfg.seed, "roster"), cfg.ranges);
}

TrialSpec config_trial_spec(const ExperimentConfig& cfg, const std::vector<DeviceId>& ids) {
  TrialSpec s;
  s.known_pool = resolve_known(cfg, ids);
  if (!cfg.unknown.empty()) {
    s.unknown_pool = cfg.unknown;
  } else {
    for (DeviceId id : ids)
      if (std::find(s.known_pool.begin(), s.known_pool.end(), id) == s.known_pool.end())
        s.unknown_pool.push_back(id);
  }
  for (DeviceId id : s.known_pool)
    if (!std::binary_search(ids.begin(), ids.end(), id))
      throw Error("known device " + std::to_string(id) + " has no data");
  s.n_known_sampled = cfg.n_known_sampled;
  s.n_unknown_sampled = cfg.n_unknown_sampled;
  s.batches_per_device = cfg.batches_per_device;
  s.m = cfg.m;
  s.seed = derive_seed(cfg.seed, "trials");
  return s;
}

std::vector<fs::path> cmd_synth(const ExperimentConfig& cfg, const Logger& log) {
  if (cfg.domains.empty()) throw Error("config defines no domains to synthesize");
  const auto roster = config_roster(cfg);
  if (roster.empty()) throw Error("device roster is empty");
  std::vector<fs::path> manifests;
  for (const auto& domain : cfg.domains) {
    const fs::path dir = cfg.data_dir() / domain.domain_id;
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries(roster.size());
    std::vector<std::string> errors(roster.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(roster.size()); ++i) {
      try {
        const auto rec = synth_recording(roster[i], i, domain, cfg.frames_per_device, cfg.seed,
                                         cfg.payload);
        char name[32];
        std::snprintf(name, sizeof name, "device_%03td.iq", i);
        const fs::path path = dir / name;
        save_raw_iq(path, rec);
        SidecarMetadata meta;
        meta.device_id = i;
        meta.domain_id = domain.domain_id;
        meta.sample_rate_hz = rec.sample_rate_hz;
        meta.center_frequency_hz = 915e6;
        meta.lora_config = std::to_string(domain.lora.config_id);
        meta.notes = "synthetic";
        write_sidecar(path, meta);
        entries[i] = {name, i, domain.domain_id};
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw Error(e);
    const fs::path manifest = dir / "manifest.json";
    write_manifest(manifest, entries);
    say(log, "wrote " + std::to_string(roster.size()) + " recordings for domain " + domain.domain_id);
    manifests.push_back(manifest);
  }
  return manifests;
}

LabeledDataset load_domain(const ExperimentConfig& cfg, const std::string& domain) {
  const fs::path manifest = cfg.manifest_path(domain);
  if (!fs::exists(manifest))
    throw Error("no data for domain '" + domain + "' (expected " + manifest.string() +
                "; run `tweak synth` first)");
  return load_manifest_dataset(manifest);
}

fs::path cmd_train(const ExperimentConfig& cfg, bool vanilla, const Logger& log) {
  if (cfg.train_domain.empty()) throw Error("config names no training domain");
  const auto ds = load_domain(cfg, cfg.train_domain);
  const auto train_set = known_train_portion(cfg, ds);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, vanilla ? "train-vanilla" : "train");
  const auto init = vanilla ? init_network(NetworkConfig::vanilla(), derive_seed(cfg.seed, "init-vanilla"))
                            : init_network(NetworkConfig::reference(), derive_seed(cfg.seed, "init"));
  if (cfg.tune_learning_rate && !vanilla) {
    const auto tuned = tune_learning_rate(
        init_network(NetworkConfig::reference(), derive_seed(cfg.seed, "init-tune")), train_set, tc);
    tc.learning_rate = tuned.chosen;
    say(log, "tuned learning rate: " + std::to_string(tc.learning_rate));
  }
  auto report = [&](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  train %.5f  objective %.5f  val %.5f", r.epoch,
                  r.train_loss, r.objective, r.validation_loss);
    say(log, buf);
  };
  const auto res = vanilla ? train_vanilla(init, train_set, tc, report) : train(init, train_set, tc, report);
  Checkpoint ck;
  ck.kind = vanilla ? "vanilla" : "twin";
  ck.params = res.params;
  ck.history = res.history;
  ck.best_epoch = res.best_epoch;
  ck.learning_rate = tc.learning_rate;
  ck.seed = cfg.seed;
  ck.train_domain = cfg.train_domain;
  if (vanilla) ck.classes = vanilla_classes(train_set);
  const fs::path path = cfg.model_path(vanilla);
  fs::create_directories(path.parent_path());
  save_checkpoint(path, ck);
  say(log, "saved " + path.string() + " (best epoch " + std::to_string(res.best_epoch) + ")");
  return path;
}

fs::path cmd_calibrate(const ExperimentConfig& cfg, const fs::path& checkpoint,
                       const std::string& domain, const std::optional<CalibrationSize>& n,
                       const Logger& log) {
  const auto ck = load_checkpoint(checkpoint);
  if (ck.kind != "twin") throw Error("calibration needs a twin-network checkpoint");
  const auto cal_set = known_train_portion(cfg, load_domain(cfg, domain));
  const std::size_t n_used = n.value_or(cfg.n).resolve(min_count(cal_set));
  const Embedder embed(ck.params, cfg.train.precision);
  const auto table = calibrate(embed, cal_set, n_used, cfg.calibrate);
  const fs::path path = cfg.calibration_path(domain);
  fs::create_directories(path.parent_path());
  write_calibration(path, table);
  say(log, "calibrated " + std::to_string(table.entries.size()) + " devices on " + domain +
               " with n = " + std::to_string(n_used) + " (" +
               std::to_string(calibration_cost(n_used, table.entries.size())) + " forward passes)");
  return path;
}

fs::path cmd_merge(const std::vector<fs::path>& tables, const fs::path& out) {
  if (tables.empty()) throw Error("nothing to merge");
  std::vector<CalibrationTable> parts;
  for (const auto& p : tables)
    for (auto& t : read_multi_calibration(p).tables) parts.push_back(std::move(t));
  const auto multi = merge_calibrations(parts);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_multi_calibration(out, multi);
  return out;
}

fs::path cmd_decide(const fs::path& checkpoint, const fs::path& calibration,
                    const fs::path& manifest, std::size_t m, const fs::path& out,
                    Precision precision, const Logger& log) {
  if (m == 0) throw Error("M must be at least 1");
  const auto ck = load_checkpoint(checkpoint);
  const auto multi = read_multi_calibration(calibration);
  if (multi.tables.front().model_version != ck.params.model_version())
    throw Error("calibration was produced by a different model");
  const auto ds = load_manifest_dataset(manifest);
  const auto known = multi.tables.front().device_ids();
  const Embedder embed(ck.params, precision);

  std::vector<DecisionRecord> records;
  std::size_t admitted = 0;
  for (const auto& [id, frames] : ds.by_device()) {
    if (frames.size() < m)
      throw Error("device " + std::to_string(id) + " has " + std::to_string(frames.size()) +
                  " frames, fewer than M = " + std::to_string(m));
    const auto emb = embed.embed(std::span<const FrameExample>(frames));
    for (std::size_t start = 0; start + m <= frames.size(); start += m) {
      DecisionRecord r;
      r.true_device = id;
      r.true_known = std::binary_search(known.begin(), known.end(), id);
      const auto point = mean_point(std::span<const EmbeddingPoint>(emb).subspan(start, m));
      r.decision = open_set_decide(point, multi);
      admitted += r.decision.verdict == Verdict::admit;
      records.push_back(std::move(r));
    }
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_decisions_jsonl(out, records);
  say(log, std::to_string(records.size()) + " decisions, " + std::to_string(admitted) + " admitted");
  return out;
}

ExperimentMatrix cmd_evaluate(const ExperimentConfig& cfg, const Logger& log) {
  if (cfg.train_domain.empty()) throw Error("config names no training domain");
  std::set<std::string> needed{cfg.train_domain};
  for (const auto& cd : cfg.calibrate_domains) needed.insert(cd.begin(), cd.end());
  needed.insert(cfg.test_domains.begin(), cfg.test_domains.end());
  std::map<std::string, LabeledDataset> data;
  for (const auto& d : needed) data.emplace(d, load_domain(cfg, d));

  MatrixOptions opts;
  opts.train = cfg.train;
  opts.spec = config_trial_spec(cfg, data.at(cfg.train_domain).device_ids());
  opts.trials = cfg.trials;
  opts.train_fraction = cfg.train_fraction;
  opts.n = cfg.n;
  opts.calibrate = cfg.calibrate;
  opts.vanilla = cfg.train_vanilla;
  opts.tune_learning_rate = cfg.tune_learning_rate;
  opts.seed = cfg.seed;
  opts.log = log;

  TrainedModels models;
  const bool had_twin = fs::exists(cfg.model_path(false));
  const bool had_vanilla = fs::exists(cfg.model_path(true));
  if (had_twin) {
    models.twin = load_checkpoint(cfg.model_path(false)).params;
    say(log, "using checkpoint " + cfg.model_path(false).string());
  }
  if (had_vanilla && cfg.train_vanilla) models.vanilla = load_checkpoint(cfg.model_path(true)).params;

  const auto m = run_matrix(cfg.train_domain, cfg.calibrate_domains, cfg.test_domains, data, opts, &models);
  auto save = [&](bool vanilla) {
    Checkpoint ck;
    ck.kind = vanilla ? "vanilla" : "twin";
    ck.params = vanilla ? *models.vanilla : *models.twin;
    ck.seed = cfg.seed;
    ck.train_domain = cfg.train_domain;
    ck.learning_rate = m.learning_rate;
    fs::create_directories(cfg.model_path(vanilla).parent_path());
    save_checkpoint(cfg.model_path(vanilla), ck);
  };
  if (!had_twin) save(false);
  if (cfg.train_vanilla && !had_vanilla && models.vanilla) save(true);
  write_matrix(cfg.results_dir(), m, cfg.resolve(cfg.out).filename().string());
  say(log, "wrote " + (cfg.results_dir() / "matrix.csv").string());
  return m;
}

std::string cmd_report(const std::vector<fs::path>& dirs, const fs::path& out) {
  if (dirs.empty()) throw Error("report needs at least one results directory");
  using nlohmann::json;
  std::string csv = "run_id,method,calibrate_domains,test_domain,avg_auroc,avg_tpr,avg_fpr\n";
  std::string table;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %-8s %-20s %-12s %9s %9s %9s\n", "run", "method",
                "calibrate", "test", "auroc", "tpr", "fpr");
  table += line;
  auto fmt = [](const json& v) {
    if (v.is_null()) return std::string();
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", v.get<double>());
    return std::string(b);
  };
  for (const auto& dir : dirs) {
    fs::path file = dir / "matrix.json";
    if (!fs::exists(file)) file = dir / "results" / "matrix.json";
    if (!fs::exists(file)) throw Error("no matrix.json under " + dir.string());
    std::ifstream in(file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("bad results file " + file.string() + ": " + e.what());
    }
    std::string run = fs::absolute(dir).lexically_normal().filename().string();
    if (run == "results" || run.empty())
      run = fs::absolute(dir).lexically_normal().parent_path().filename().string();
    for (const auto& c : j.at("results")) {
      std::string cal;
      for (const auto& d : c.at("calibrate_domains")) cal += (cal.empty() ? "" : "+") + d.get<std::string>();
      const bool failed = c.value("failed", false);
      const std::string a = failed ? "" : fmt(c.at("avg_auroc"));
      const std::string t = failed ? "" : fmt(c.at("avg_tpr"));
      const std::string f = failed ? "" : fmt(c.at("avg_fpr"));
      const std::string test = c.at("test_domain").get<std::string>();
      csv += run + ",tweak," + cal + "," + test + "," + a + "," + t + "," + f + "\n";
      std::snprintf(line, sizeof line, "%-16s %-8s %-20s %-12s %9s %9s %9s\n", run.c_str(), "tweak",
                    cal.c_str(), test.c_str(), a.c_str(), t.c_str(), f.c_str());
      table += line;
    }
    for (const auto& v : j.value("vanilla", json::array())) {
      const bool failed = v.value("failed", false);
      const std::string a = failed ? "" : fmt(v.at("avg_auroc"));
      const std::string test = v.at("test_domain").get<std::string>();
      csv += run + ",vanilla,," + test + "," + a + ",,\n";
      std::snprintf(line, sizeof line, "%-16s %-8s %-20s %-12s %9s %9s %9s\n", run.c_str(), "vanilla",
                    "-", test.c_str(), a.c_str(), "", "");
      table += line;
    }
  }
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, csv);
  }
  return table;
}

}  // namespace tweak
