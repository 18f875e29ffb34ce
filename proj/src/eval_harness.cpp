#include "tweak/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "json.hpp"

namespace tweak {

std::optional<double> tpr(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> fpr(const ConfusionCounts& c) {
  if (c.fp + c.tn == 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
}

double auroc(std::span<const double> known, std::span<const double> unknown) {
  if (known.empty() || unknown.empty()) throw Error("auroc needs nonempty known and unknown scores");
  std::vector<std::pair<double, bool>> all;
  all.reserve(known.size() + unknown.size());
  for (double s : known) all.emplace_back(s, true);
  for (double s : unknown) all.emplace_back(s, false);
  for (const auto& [s, k] : all)
    if (std::isnan(s)) throw Error("auroc score is NaN");
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  // Sweep thresholds from high to low; each tie group moves the ROC point once.
  double area2 = 0.0;  // twice the area in count units
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i, dtp = 0, dfp = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? dtp : dfp)++;
      ++j;
    }
    area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area2 / (2.0 * static_cast<double>(known.size()) * static_cast<double>(unknown.size()));
}

void TrialSpec::validate() const {
  std::set<DeviceId> k(known_pool.begin(), known_pool.end());
  for (auto id : unknown_pool)
    if (k.count(id)) throw Error("device " + std::to_string(id) + " is in both known and unknown pools");
  if (n_known_sampled > known_pool.size())
    throw Error("cannot sample " + std::to_string(n_known_sampled) + " known devices from a pool of " +
                std::to_string(known_pool.size()));
  if (n_unknown_sampled > unknown_pool.size())
    throw Error("cannot sample " + std::to_string(n_unknown_sampled) +
                " unknown devices from a pool of " + std::to_string(unknown_pool.size()));
  if (n_known_sampled == 0 || n_unknown_sampled == 0) throw Error("trials need known and unknown devices");
  if (m == 0) throw Error("M must be at least 1");
  if (batches_per_device == 0) throw Error("batches_per_device must be at least 1");
}

std::vector<TrialBatch> sample_trial(const std::map<DeviceId, std::size_t>& available,
                                     const TrialSpec& spec, std::size_t trial_index) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, "trial", trial_index));
  auto pick = [&](std::vector<DeviceId> pool, std::size_t n) {
    std::sort(pool.begin(), pool.end());
    fisher_yates(pool, rng);
    pool.resize(n);
    return pool;
  };
  const auto known = pick(spec.known_pool, spec.n_known_sampled);
  const auto unknown = pick(spec.unknown_pool, spec.n_unknown_sampled);

  std::vector<TrialBatch> out;
  const std::size_t need = spec.batches_per_device * spec.m;
  auto emit = [&](DeviceId id, bool is_known) {
    const auto it = available.find(id);
    const std::size_t have = it == available.end() ? 0 : it->second;
    if (have < need)
      throw Error("device " + std::to_string(id) + " has " + std::to_string(have) +
                  " test frames; a trial needs " + std::to_string(need));
    std::vector<std::size_t> idx(have);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 frng(derive_seed(derive_seed(spec.seed, "trial", trial_index), "frames",
                                     static_cast<std::uint64_t>(id)));
    fisher_yates(idx, frng);
    for (std::size_t b = 0; b < spec.batches_per_device; ++b) {
      TrialBatch tb;
      tb.device = id;
      tb.known = is_known;
      tb.frames.assign(idx.begin() + static_cast<std::ptrdiff_t>(b * spec.m),
                       idx.begin() + static_cast<std::ptrdiff_t>((b + 1) * spec.m));
      out.push_back(std::move(tb));
    }
  };
  for (auto id : known) emit(id, true);
  for (auto id : unknown) emit(id, false);
  return out;
}

EmbeddedSet embed_by_device(const Embedder& embed, const LabeledDataset& ds,
                            std::span<const DeviceId> devices) {
  std::set<DeviceId> want(devices.begin(), devices.end());
  EmbeddedSet out;
  for (auto& [id, frames] : ds.by_device()) {
    if (!want.empty() && !want.count(id)) continue;
    out[id] = embed.embed(std::span<const FrameExample>(frames));
  }
  return out;
}

namespace {

std::map<DeviceId, std::size_t> counts_of(const EmbeddedSet& s) {
  std::map<DeviceId, std::size_t> c;
  for (const auto& [id, v] : s) c[id] = v.size();
  return c;
}

EmbeddingPoint batch_mean(const EmbeddedSet& set, const TrialBatch& b) {
  const auto& pts = set.at(b.device);
  std::vector<EmbeddingPoint> chosen;
  chosen.reserve(b.frames.size());
  for (auto i : b.frames) chosen.push_back(pts[i]);
  return mean_point(chosen);
}

void finish(TrialResult& r, const std::vector<TrialBatch>& batches, bool with_counts) {
  std::set<DeviceId> k, u;
  for (const auto& b : batches) (b.known ? k : u).insert(b.device);
  r.known_devices.assign(k.begin(), k.end());
  r.unknown_devices.assign(u.begin(), u.end());
  r.auroc = auroc(r.scores_known, r.scores_unknown);
  if (with_counts) {
    r.tpr = tpr(r.counts);
    r.fpr = fpr(r.counts);
  }
}

}  // namespace

TrialResult run_trial(const MultiCalibration& table, const EmbeddedSet& test,
                      const TrialSpec& spec, std::size_t trial_index) {
  table.validate();
  const auto batches = sample_trial(counts_of(test), spec, trial_index);
  TrialResult r;
  for (const auto& b : batches) {
    const auto d = open_set_decide(batch_mean(test, b), table);
    const bool admit = d.verdict == Verdict::admit;
    if (b.known) {
      r.scores_known.push_back(d.score);
      (admit ? r.counts.tp : r.counts.fn)++;
    } else {
      r.scores_unknown.push_back(d.score);
      (admit ? r.counts.fp : r.counts.tn)++;
    }
  }
  finish(r, batches, true);
  return r;
}

TrialResult run_trial(const CalibrationTable& table, const EmbeddedSet& test,
                      const TrialSpec& spec, std::size_t trial_index) {
  return run_trial(MultiCalibration{{table}}, test, spec, trial_index);
}

TrialResult run_trial(const Embedder& embed, const CalibrationTable& table,
                      const LabeledDataset& test, const TrialSpec& spec, std::size_t trial_index) {
  std::vector<DeviceId> pools = spec.known_pool;
  pools.insert(pools.end(), spec.unknown_pool.begin(), spec.unknown_pool.end());
  return run_trial(table, embed_by_device(embed, test, pools), spec, trial_index);
}

TrialResult run_vanilla_trial(const EmbeddedSet& logits, const TrialSpec& spec,
                              std::size_t trial_index) {
  const auto batches = sample_trial(counts_of(logits), spec, trial_index);
  TrialResult r;
  for (const auto& b : batches) {
    const double s = max_logit_score(batch_mean(logits, b));
    (b.known ? r.scores_known : r.scores_unknown).push_back(s);
  }
  finish(r, batches, false);
  return r;
}

TrialSummary avg_over_trials(std::span<const TrialResult> trials) {
  if (trials.empty()) throw Error("no trials to average");
  TrialSummary s;
  bool tpr_ok = true, fpr_ok = true;
  double st = 0.0, sf = 0.0, sa = 0.0;
  for (const auto& t : trials) {
    s.aurocs.push_back(t.auroc);
    s.tprs.push_back(t.tpr);
    s.fprs.push_back(t.fpr);
    sa += t.auroc;
    if (t.tpr) st += *t.tpr; else tpr_ok = false;
    if (t.fpr) sf += *t.fpr; else fpr_ok = false;
  }
  const double n = static_cast<double>(trials.size());
  s.avg_auroc = sa / n;
  if (tpr_ok) s.avg_tpr = st / n;
  if (fpr_ok) s.avg_fpr = sf / n;
  return s;
}

// ---- calibration size -------------------------------------------------------------

std::size_t CalibrationSize::resolve(std::size_t train_frames_per_device) const {
  if (absolute > 0) return absolute;
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("calibration fraction must be in (0,1]");
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train_frames_per_device) + 1e-9));
  if (n == 0) throw Error("calibration fraction selects no examples");
  return n;
}

CalibrationSize CalibrationSize::parse(const std::string& s) {
  CalibrationSize c;
  if (s.empty()) throw Error("empty calibration size");
  try {
    if (s.back() == '%') {
      c.fraction = std::stod(s.substr(0, s.size() - 1)) / 100.0;
    } else if (s.find('.') != std::string::npos) {
      c.fraction = std::stod(s);
    } else {
      const long long v = std::stoll(s);
      if (v <= 0) throw Error("calibration size must be positive");
      c.absolute = static_cast<std::size_t>(v);
    }
  } catch (const std::logic_error&) {
    throw Error("bad calibration size '" + s + "'");
  }
  if (c.absolute == 0 && !(c.fraction > 0.0 && c.fraction <= 1.0))
    throw Error("calibration fraction must be in (0,1], got '" + s + "'");
  return c;
}

std::string CalibrationSize::to_string() const {
  if (absolute > 0) return std::to_string(absolute);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", fraction * 100.0);
  return buf;
}

// ---- matrix -----------------------------------------------------------------------

const MatrixCell& ExperimentMatrix::cell(const std::vector<std::string>& calibrate,
                                         const std::string& test) const {
  for (const auto& c : cells)
    if (c.calibrate_domains == calibrate && c.test_domain == test) return c;
  throw Error("no matrix cell for test domain '" + test + "'");
}

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

const LabeledDataset& find_domain(const std::map<std::string, LabeledDataset>& ds,
                                  const std::string& name) {
  const auto it = ds.find(name);
  if (it == ds.end()) throw Error("no dataset for domain '" + name + "'");
  return it->second;
}

}  // namespace

ExperimentMatrix run_matrix(const std::string& train_domain,
                            const std::vector<std::vector<std::string>>& calibrate_domains,
                            const std::vector<std::string>& test_domains,
                            const std::map<std::string, LabeledDataset>& datasets,
                            const MatrixOptions& opts, TrainedModels* models) {
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  if (calibrate_domains.empty() || test_domains.empty())
    throw Error("matrix needs at least one calibrate and one test domain");
  const auto& base = find_domain(datasets, train_domain);
  for (const auto& cd : calibrate_domains) {
    if (cd.empty()) throw Error("empty calibration domain list");
    for (const auto& d : cd) find_domain(datasets, d);
  }
  for (const auto& d : test_domains) find_domain(datasets, d);
  for (const auto& [name, ds] : datasets)
    if (ds.device_ids() != base.device_ids())
      throw Error("domain '" + name + "' covers a different device set than '" + train_domain + "'");

  TrialSpec spec = opts.spec;
  spec.seed = derive_seed(opts.seed, "trials");
  spec.validate();

  std::map<std::string, DatasetSplit> splits;
  auto split_of = [&](const std::string& name) -> const DatasetSplit& {
    auto it = splits.find(name);
    if (it == splits.end())
      it = splits.emplace(name, split_dataset(find_domain(datasets, name), opts.train_fraction,
                                               derive_seed(opts.seed, "split")))
               .first;
    return it->second;
  };

  ExperimentMatrix m;
  m.train_domain = train_domain;
  m.calibrate_domains = calibrate_domains;
  m.test_domains = test_domains;

  const auto train_set = split_of(train_domain).train.restrict_to(spec.known_pool);
  TrainedModels local;
  TrainedModels& mdl = models ? *models : local;

  TrainConfig tc = opts.train;
  tc.seed = derive_seed(opts.seed, "train");
  if (!mdl.twin) {
    if (opts.tune_learning_rate) {
      const auto init = init_network(NetworkConfig::reference(), derive_seed(opts.seed, "init-tune"));
      tc.learning_rate = tune_learning_rate(init, train_set, tc).chosen;
      log("tuned learning rate: " + std::to_string(tc.learning_rate));
    }
    log("training twin network on " + train_domain + " (" + std::to_string(train_set.size()) +
        " frames)");
    const auto init = init_network(NetworkConfig::reference(), derive_seed(opts.seed, "init"));
    auto res = train(init, train_set, tc, [&](const EpochRecord& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "  epoch %zu  train %.5f  objective %.5f  val %.5f", r.epoch,
                    r.train_loss, r.objective, r.validation_loss);
      log(buf);
    });
    mdl.twin = std::move(res.params);
  }
  m.learning_rate = tc.learning_rate;
  if (opts.vanilla && !mdl.vanilla) {
    log("training vanilla baseline on " + train_domain);
    const auto init = init_network(NetworkConfig::vanilla(), derive_seed(opts.seed, "init-vanilla"));
    TrainConfig vc = tc;
    vc.seed = derive_seed(opts.seed, "train-vanilla");
    mdl.vanilla = train_vanilla(init, train_set, vc).params;
  }

  const Embedder embed(*mdl.twin, tc.precision);
  m.model_version = mdl.twin->model_version();

  std::size_t min_train = SIZE_MAX;
  for (DeviceId id : spec.known_pool) min_train = std::min(min_train, train_set.count_of(id));
  m.n_used = opts.n.resolve(min_train);

  std::map<std::string, CalibrationTable> tables;
  for (const auto& cd : calibrate_domains)
    for (const auto& d : cd)
      if (!tables.count(d)) {
        const auto cal_set = split_of(d).train.restrict_to(spec.known_pool);
        tables.emplace(d, calibrate(embed, cal_set, m.n_used, opts.calibrate));
      }

  std::vector<DeviceId> pools = spec.known_pool;
  pools.insert(pools.end(), spec.unknown_pool.begin(), spec.unknown_pool.end());
  std::map<std::string, EmbeddedSet> test_emb;
  for (const auto& td : test_domains)
    test_emb.emplace(td, embed_by_device(embed, split_of(td).test, pools));

  for (const auto& cd : calibrate_domains) {
    std::vector<CalibrationTable> parts;
    for (const auto& d : cd) parts.push_back(tables.at(d));
    const auto multi = merge_calibrations(parts);
    for (const auto& td : test_domains) {
      MatrixCell cell;
      cell.calibrate_domains = cd;
      cell.test_domain = td;
      try {
        std::vector<TrialResult> trials;
        for (std::size_t t = 0; t < opts.trials; ++t)
          trials.push_back(run_trial(multi, test_emb.at(td), spec, t));
        cell.summary = avg_over_trials(trials);
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      log("cell calibrate=" + join(cd, "+") + " test=" + td +
          (cell.failed ? " failed: " + cell.error
                       : " auroc=" + std::to_string(cell.summary.avg_auroc)));
      m.cells.push_back(std::move(cell));
    }
  }

  if (opts.vanilla) {
    const Embedder vembed(*mdl.vanilla, tc.precision);
    for (const auto& td : test_domains) {
      VanillaCell cell;
      cell.test_domain = td;
      try {
        const auto logits = embed_by_device(vembed, split_of(td).test, pools);
        std::vector<TrialResult> trials;
        for (std::size_t t = 0; t < opts.trials; ++t)
          trials.push_back(run_vanilla_trial(logits, spec, t));
        cell.summary = avg_over_trials(trials);
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      log("vanilla test=" + td +
          (cell.failed ? " failed: " + cell.error : " auroc=" + std::to_string(cell.summary.avg_auroc)));
      m.vanilla.push_back(std::move(cell));
    }
  }
  return m;
}

// ---- output -----------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string matrix_csv(const ExperimentMatrix& m, const std::string& run_id) {
  std::string out = "run_id,method,train_domain,calibrate_domains,test_domain,metric,trial,value\n";
  auto row = [&](const std::string& method, const std::string& cal, const std::string& test,
                 const std::string& metric, const std::string& trial, const std::string& value) {
    out += run_id + "," + method + "," + m.train_domain + "," + cal + "," + test + "," + metric +
           "," + trial + "," + value + "\n";
  };
  for (const auto& c : m.cells) {
    const auto cal = join(c.calibrate_domains, "+");
    if (c.failed) {
      row("tweak", cal, c.test_domain, "failed", "", "");
      continue;
    }
    for (std::size_t t = 0; t < c.summary.aurocs.size(); ++t) {
      row("tweak", cal, c.test_domain, "auroc", std::to_string(t), num(c.summary.aurocs[t]));
      row("tweak", cal, c.test_domain, "tpr", std::to_string(t), opt_num(c.summary.tprs[t]));
      row("tweak", cal, c.test_domain, "fpr", std::to_string(t), opt_num(c.summary.fprs[t]));
    }
    row("tweak", cal, c.test_domain, "auroc", "avg", num(c.summary.avg_auroc));
    row("tweak", cal, c.test_domain, "tpr", "avg", opt_num(c.summary.avg_tpr));
    row("tweak", cal, c.test_domain, "fpr", "avg", opt_num(c.summary.avg_fpr));
  }
  for (const auto& v : m.vanilla) {
    if (v.failed) {
      row("vanilla", "", v.test_domain, "failed", "", "");
      continue;
    }
    for (std::size_t t = 0; t < v.summary.aurocs.size(); ++t)
      row("vanilla", "", v.test_domain, "auroc", std::to_string(t), num(v.summary.aurocs[t]));
    row("vanilla", "", v.test_domain, "auroc", "avg", num(v.summary.avg_auroc));
  }
  return out;
}

std::string matrix_json(const ExperimentMatrix& m) {
  using oj = nlohmann::ordered_json;
  oj cells = oj::array();
  for (const auto& c : m.cells) {
    oj j;
    j["calibrate_domains"] = c.calibrate_domains;
    j["test_domain"] = c.test_domain;
    j["failed"] = c.failed;
    if (c.failed) {
      j["error"] = c.error;
    } else {
      j["avg_auroc"] = c.summary.avg_auroc;
      j["avg_tpr"] = opt_json(c.summary.avg_tpr);
      j["avg_fpr"] = opt_json(c.summary.avg_fpr);
      j["trials"] = oj::array();
      for (std::size_t t = 0; t < c.summary.aurocs.size(); ++t)
        j["trials"].push_back({{"auroc", c.summary.aurocs[t]},
                               {"tpr", opt_json(c.summary.tprs[t])},
                               {"fpr", opt_json(c.summary.fprs[t])}});
    }
    cells.push_back(j);
  }
  oj vanilla = oj::array();
  for (const auto& v : m.vanilla) {
    oj j;
    j["test_domain"] = v.test_domain;
    j["failed"] = v.failed;
    if (v.failed)
      j["error"] = v.error;
    else {
      j["avg_auroc"] = v.summary.avg_auroc;
      j["trials"] = v.summary.aurocs;
    }
    vanilla.push_back(j);
  }
  oj j;
  j["train_domain"] = m.train_domain;
  j["calibrate_domains"] = m.calibrate_domains;
  j["test_domains"] = m.test_domains;
  j["n_used"] = m.n_used;
  j["model_version"] = m.model_version;
  j["learning_rate"] = m.learning_rate;
  j["results"] = cells;
  j["vanilla"] = vanilla;
  return j.dump(2) + "\n";
}

void write_matrix(const std::filesystem::path& dir, const ExperimentMatrix& m,
                  const std::string& run_id) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "matrix.csv", matrix_csv(m, run_id));
  write_file_atomic(dir / "matrix.json", matrix_json(m));
}

}  // namespace tweak
