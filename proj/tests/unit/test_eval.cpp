#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "tweak/eval_harness.hpp"
#include "tweak/synth_rf.hpp"

using namespace tweak;

namespace {

double pairwise(const std::vector<double>& k, const std::vector<double>& u) {
  double s = 0;
  for (double a : k)
    for (double b : u) s += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return s / static_cast<double>(k.size() * u.size());
}

// Device d's embeddings cluster tightly around (d, 0).
EmbeddedSet clustered(std::size_t devices, std::size_t per_device, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.01);
  EmbeddedSet s;
  for (std::size_t d = 0; d < devices; ++d)
    for (std::size_t i = 0; i < per_device; ++i)
      s[static_cast<DeviceId>(d)].push_back({static_cast<double>(d) + n(rng), n(rng)});
  return s;
}

TrialSpec spec_5_5() {
  TrialSpec s;
  s.known_pool = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (DeviceId id = 10; id < 25; ++id) s.unknown_pool.push_back(id);
  s.seed = 9;
  return s;
}

CalibrationTable table_for(const EmbeddedSet& s, const std::vector<DeviceId>& ids, double radius) {
  CalibrationTable t;
  t.domain_id = "A";
  t.model_version = "m";
  for (DeviceId id : ids) t.entries.push_back({id, s.at(id).front(), radius, 1, "A"});
  return t;
}

}  // namespace

TEST_SUITE("eval_harness") {
  TEST_CASE("rates") {
    CHECK(tpr({9, 1, 0, 0}) == 0.9);
    CHECK(fpr({0, 0, 0, 10}) == 0.0);
    CHECK_FALSE(tpr({0, 0, 3, 4}).has_value());
  }

  TEST_CASE("auroc special cases") {
    CHECK(auroc(std::vector<double>{3, 4, 5}, std::vector<double>{0, 1, 2.9}) == 1.0);
    CHECK(auroc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 1}) == 0.5);
    CHECK(auroc(std::vector<double>{0}, std::vector<double>{1}) == 0.0);
    CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<double>{1}), Error);
  }

  TEST_CASE("auroc equals the pairwise rank statistic with ties") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> k(200), u(200);
      // values on a coarse grid so a large share of scores tie
      for (auto& v : k) v = static_cast<double>(uniform_index(rng, 12)) / 4.0;
      for (auto& v : u) v = static_cast<double>(uniform_index(rng, 10)) / 4.0;
      CHECK(std::abs(auroc(k, u) - pairwise(k, u)) <= 1e-9);
    }
  }

  TEST_CASE("trial sampling counts and disjoint batches") {
    const auto spec = spec_5_5();
    std::map<DeviceId, std::size_t> avail;
    for (DeviceId id = 0; id < 25; ++id) avail[id] = 200;
    const auto batches = sample_trial(avail, spec, 0);
    std::size_t known = 0, unknown = 0;
    std::map<DeviceId, std::set<std::size_t>> used;
    for (const auto& b : batches) {
      (b.known ? known : unknown)++;
      CHECK(b.frames.size() == 10);
      for (auto f : b.frames) CHECK(used[b.device].insert(f).second);
    }
    CHECK(known == 100);
    CHECK(unknown == 100);
    CHECK(used.size() == 10);
    const auto again = sample_trial(avail, spec, 0);
    CHECK(again.front().frames == batches.front().frames);
    avail[batches.front().device] = 50;
    CHECK_THROWS_AS(sample_trial(avail, spec, 0), Error);
  }

  TEST_CASE("infinite radii admit everything; zero radii reject everything") {
    const auto s = clustered(25, 200, 2);
    const auto spec = spec_5_5();
    auto tr = run_trial(table_for(s, spec.known_pool, std::numeric_limits<double>::infinity()), s, spec);
    CHECK(tr.counts.tp + tr.counts.fn == 100);
    CHECK(tr.counts.fp + tr.counts.tn == 100);
    CHECK(tr.tpr == 1.0);
    CHECK(tr.fpr == 1.0);
    tr = run_trial(table_for(s, spec.known_pool, 0.0), s, spec);
    CHECK(tr.tpr == 0.0);
    CHECK(tr.fpr == 0.0);
    tr = run_trial(table_for(s, spec.known_pool, 0.2), s, spec);
    CHECK(tr.tpr == 1.0);
    CHECK(tr.fpr == 0.0);
    CHECK(tr.auroc == 1.0);
  }

  TEST_CASE("averaging over trials") {
    std::vector<TrialResult> ts(5);
    const double a[] = {0.8, 0.9, 1.0, 0.7, 0.6};
    for (int i = 0; i < 5; ++i) {
      ts[i].auroc = a[i];
      ts[i].tpr = 0.5;
      ts[i].fpr = 0.25;
    }
    const auto s = avg_over_trials(ts);
    CHECK(s.avg_auroc == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(s.aurocs.size() == 5);
    CHECK(s.avg_tpr == 0.5);
    std::vector<TrialResult> same(5, ts[0]);
    CHECK(avg_over_trials(same).avg_auroc == 0.8);
    ts[2].tpr.reset();
    CHECK_FALSE(avg_over_trials(ts).avg_tpr.has_value());
  }

  TEST_CASE("portability matrix layout") {
    std::map<std::string, LabeledDataset> data;
    const auto roster = default_device_roster(4, 1);
    for (int c = 1; c <= 4; ++c) {
      DomainSpec d;
      d.domain_id = "cfg" + std::to_string(c);
      d.lora = lora_preset(c <= 2 ? c : 1);
      d.receiver.gain_db = c;
      data.emplace(d.domain_id, synth_dataset(roster, d, 12, 3));
    }
    MatrixOptions opts;
    opts.spec.known_pool = {0, 1};
    opts.spec.unknown_pool = {2, 3};
    opts.spec.n_known_sampled = 2;
    opts.spec.n_unknown_sampled = 2;
    opts.spec.batches_per_device = 3;
    opts.spec.m = 1;
    opts.trials = 2;
    opts.n = CalibrationSize::parse("2");
    TrainedModels models;
    models.twin = init_network(NetworkConfig::reference(), 1);
    models.vanilla = init_network(NetworkConfig::vanilla(), 2);
    const std::vector<std::string> all{"cfg1", "cfg2", "cfg3", "cfg4"};
    std::vector<std::vector<std::string>> cal;
    for (const auto& d : all) cal.push_back({d});
    const auto m = run_matrix("cfg1", cal, all, data, opts, &models);
    CHECK(m.cells.size() == 16);
    CHECK(m.vanilla.size() == 4);
    CHECK(m.n_used == 2);
    for (const auto& c : m.cells) {
      CHECK_FALSE(c.failed);
      CHECK(c.summary.aurocs.size() == 2);
    }

    opts.vanilla = false;
    const auto multi = run_matrix("cfg1", {{"cfg1", "cfg2"}}, all, data, opts, &models);
    CHECK(multi.cells.size() == 4);
    CHECK(multi.vanilla.empty());
    // union of tables admits at least what each part admits
    const auto& one = m.cell({"cfg1"}, "cfg1");
    const auto& both = multi.cell({"cfg1", "cfg2"}, "cfg1");
    CHECK(*both.summary.avg_fpr >= *one.summary.avg_fpr);
    CHECK(*both.summary.avg_tpr >= *one.summary.avg_tpr);

    const auto single = run_matrix("cfg1", {{"cfg1"}}, {"cfg1"}, data, opts, &models);
    CHECK(single.cells.size() == 1);
    const auto csv = matrix_csv(single, "r1");
    for (const char* metric : {",auroc,", ",tpr,", ",fpr,"})
      CHECK(csv.find(metric) != std::string::npos);
    CHECK(matrix_csv(single, "r1") == csv);
  }
}
