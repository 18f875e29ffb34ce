// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "tweak/calibrate.hpp"
#include "tweak/decide.hpp"
#include "tweak/eval_harness.hpp"
#include "tweak/synth_rf.hpp"
#include "tweak/triplet.hpp"

using namespace tweak;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
  std::printf("criterion %2d %-34s %s  (%.1f s)  %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", secs,
              o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

void run(int id, const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  report(id, name, o, seconds_since(t0));
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// ---- criterion 1 --------------------------------------------------------------------

Outcome triplet_suite() {
  double worst = 0;
  auto sq = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };
  const std::vector<double> z{0.3, -0.2, 0.1};
  worst = std::max(worst, std::abs(triplet_loss(z, z, z, 0.1) - 0.1));
  const std::vector<double> o{0.0, 0.0}, n1{std::sqrt(0.1), 0.0}, p3{0.2, 0.0}, n3{0.0, 0.3};
  worst = std::max(worst, std::abs(triplet_loss(o, o, n1, 0.1) - 0.0));
  worst = std::max(worst, std::abs(triplet_loss(o, p3, n3, 0.1) - 0.05));
  std::mt19937_64 rng(101);
  for (int t = 0; t < 1000; ++t) {
    const auto a = uniform_vec(rng, 12), p = uniform_vec(rng, 12), n = uniform_vec(rng, 12);
    const double expect = std::max(sq(a, p) - sq(a, n) + 0.1, 0.0);
    worst = std::max(worst, std::abs(triplet_loss(a, p, n, 0.1) - expect));
  }
  return {worst <= 1e-12, fmt("max |err| = %.2e over 3 examples + 1000 random triples", worst)};
}

// ---- criterion 2 --------------------------------------------------------------------

Outcome gradient_suite() {
  double worst = 0;
  std::size_t coords = 0;
  int draws = 0;
  for (auto mining : {MiningStrategy::batch_hard, MiningStrategy::batch_all})
    for (std::uint64_t draw = 0; draw < 5; ++draw) {
      const auto params = init_network(NetworkConfig::reduced(), 1000 + draw);
      const auto frames = testing::fd_batch(params.config.input_length, 2000 + draw);
      std::vector<const FrameExample*> ptrs;
      for (const auto& f : frames) ptrs.push_back(&f);
      TrainConfig cfg;
      cfg.mining = mining;
      const auto r = testing::finite_difference_check(params, ptrs, cfg);
      if (r.loss <= 0) return {false, "a draw produced no active triplets"};
      worst = std::max(worst, r.max_rel_error);
      coords = r.coordinates;
      ++draws;
    }
  return {worst <= 1e-4, fmt("max rel err = %.2e over %.0f draws x %.0f coordinates (2 conv, 4-d output)", worst,
                             draws, static_cast<double>(coords))};
}

// ---- criterion 3 --------------------------------------------------------------------

Outcome calibrate_suite() {
  std::mt19937_64 rng(303);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 1 + uniform_index(rng, 12), devices = 1 + uniform_index(rng, 6);
    const std::size_t per = 1 + uniform_index(rng, 30);
    const std::size_t n = 1 + uniform_index(rng, per);
    std::map<DeviceId, std::vector<EmbeddingPoint>> sets;
    for (std::size_t d = 0; d < devices; ++d)
      for (std::size_t i = 0; i < per; ++i) sets[static_cast<DeviceId>(d * 7)].push_back(uniform_vec(rng, dim, -3, 3));
    const auto table = calibrate_embeddings(sets, n, "X", "m");
    for (const auto& e : table.entries) {
      // independent recomputation over the first n embeddings
      const auto& pts = sets.at(e.device_id);
      std::vector<long double> c(dim, 0.0L);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k) c[k] += pts[i][k];
      for (auto& v : c) v /= static_cast<long double>(n);
      long double r = 0;
      for (std::size_t i = 0; i < n; ++i) {
        long double s = 0;
        for (std::size_t k = 0; k < dim; ++k) s += (pts[i][k] - c[k]) * (pts[i][k] - c[k]);
        r += std::sqrt(s);
      }
      r /= static_cast<long double>(n);
      for (std::size_t k = 0; k < dim; ++k)
        worst = std::max(worst, static_cast<double>(std::abs(e.centroid[k] - c[k])));
      worst = std::max(worst, static_cast<double>(std::abs(e.radius - r)));
    }
  }
  bool single_zero = true;
  for (int t = 0; t < 20; ++t) {
    std::map<DeviceId, std::vector<EmbeddingPoint>> one{{0, {uniform_vec(rng, 12)}}};
    single_zero &= calibrate_embeddings(one, 1, "X", "m").entries[0].radius == 0.0;
  }
  return {worst <= 1e-9 && single_zero,
          fmt("max |err| = %.2e over 100 sets; n = 1 radius exactly 0: ", worst) + (single_zero ? "yes" : "no")};
}

// ---- criterion 4 --------------------------------------------------------------------

// Exhaustive reimplementation of the admit rule.
bool oracle_admit(const std::vector<double>& p, const CalibrationTable& t) {
  for (const auto& e : t.entries) {
    long double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) s += (static_cast<long double>(p[k]) - e.centroid[k]) * (p[k] - e.centroid[k]);
    if (std::sqrt(s) <= e.radius) return true;
  }
  return false;
}

Outcome decide_suite() {
  std::mt19937_64 rng(404);
  std::size_t agree = 0, boundary = 0, boundary_admit = 0, cases = 10'000;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t dim = 1 + uniform_index(rng, 12), k = 1 + uniform_index(rng, 8);
    CalibrationTable table;
    table.domain_id = "X";
    table.model_version = "m";
    for (std::size_t i = 0; i < k; ++i) {
      // centroids on a dyadic grid so exact-boundary points are representable
      EmbeddingPoint c(dim);
      for (auto& v : c) v = static_cast<double>(static_cast<int>(uniform_index(rng, 33)) - 16) / 8.0;
      const double r = uniform_index(rng, 10) == 0 ? 0.0 : static_cast<double>(uniform_index(rng, 24)) / 8.0;
      table.entries.push_back({static_cast<DeviceId>(i), c, r, 1, "X"});
    }
    std::vector<double> p;
    if (t % 4 == 0) {
      // boundary case: move exactly one radius along one axis from a centroid
      const auto& e = table.entries[uniform_index(rng, k)];
      p = e.centroid;
      p[uniform_index(rng, dim)] += (uniform_index(rng, 2) ? 1.0 : -1.0) * e.radius;
      ++boundary;
    } else {
      p = uniform_vec(rng, dim, -2.5, 2.5);
    }
    const auto d = open_set_decide(p, table);
    const bool admit = d.verdict == Verdict::admit;
    const bool expect = oracle_admit(p, table);
    agree += admit == expect;
    if (t % 4 == 0) boundary_admit += admit;
  }
  return {agree == cases && boundary_admit == boundary,
          fmt("%.0f/%.0f agree; boundary cases admitted %.0f/%.0f", static_cast<double>(agree),
              static_cast<double>(cases), static_cast<double>(boundary_admit), static_cast<double>(boundary))};
}

// ---- criterion 5 --------------------------------------------------------------------

Outcome auroc_suite() {
  std::mt19937_64 rng(505);
  double worst = 0, min_tie_share = 1.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t nk = 20 + uniform_index(rng, 200), nu = 20 + uniform_index(rng, 200);
    const std::size_t levels = 4 + uniform_index(rng, 20);
    std::vector<double> k(nk), u(nu);
    for (auto& v : k) v = static_cast<double>(uniform_index(rng, levels)) + 0.5 * static_cast<double>(t % 3);
    for (auto& v : u) v = static_cast<double>(uniform_index(rng, levels));
    double pair = 0;
    std::map<double, std::size_t> count;
    for (double a : k) ++count[a];
    for (double b : u) ++count[b];
    std::size_t tied = 0;
    for (auto [v, c] : count) tied += c > 1 ? c : 0;
    min_tie_share = std::min(min_tie_share, static_cast<double>(tied) / static_cast<double>(nk + nu));
    for (double a : k)
      for (double b : u) pair += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    pair /= static_cast<double>(nk * nu);
    worst = std::max(worst, std::abs(auroc(k, u) - pair));
  }
  const double perfect = auroc(std::vector<double>{2, 3, 4}, std::vector<double>{-1, 0, 1.5});
  const double same = auroc(std::vector<double>(7, 0.25), std::vector<double>(9, 0.25));
  return {worst <= 1e-9 && min_tie_share >= 0.2 && perfect == 1.0 && same == 0.5,
          fmt("max |err| = %.2e; min tie share %.2f; perfect %.1f; identical %.1f", worst, min_tie_share, perfect, same)};
}

// ---- criteria 6-10: synthetic suite ----------------------------------------------------

struct Suite {
  std::uint64_t seed = 1;
  std::size_t devices = 25;
  std::size_t known = 10;
  std::size_t frames = 3200;
  std::size_t epochs = 6;
  std::size_t trials = 5;
};

DomainSpec domain(const std::string& id, int lora_config, double lo_hz, double gain_db) {
  DomainSpec d;
  d.domain_id = id;
  d.lora = lora_preset(lora_config);
  d.channel.snr_db = 30.0;
  d.receiver.lo_offset_hz = lo_hz;
  d.receiver.gain_db = gain_db;
  return d;
}

MatrixOptions options(const Suite& s, bool vanilla) {
  MatrixOptions o;
  o.train.epochs = s.epochs;
  o.train.learning_rate = 1e-3;
  o.train.precision = Precision::f32;
  o.train.mining = MiningStrategy::batch_all;
  for (DeviceId id = 0; id < static_cast<DeviceId>(s.devices); ++id)
    (id < static_cast<DeviceId>(s.known) ? o.spec.known_pool : o.spec.unknown_pool).push_back(id);
  o.spec.n_known_sampled = 5;
  o.spec.n_unknown_sampled = 5;
  o.spec.batches_per_device = 20;
  o.spec.m = 10;
  o.trials = s.trials;
  o.train_fraction = 0.75;
  o.n = CalibrationSize::parse("10%");
  o.vanilla = vanilla;
  o.seed = s.seed;
  o.log = [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); };
  return o;
}

std::string metrics(const MatrixCell& c) {
  return fmt("auroc %.4f tpr %.4f fpr %.4f", c.summary.avg_auroc, c.summary.avg_tpr.value_or(NAN),
             c.summary.avg_fpr.value_or(NAN));
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  run(1, "triplet loss unit suite", triplet_suite);
  run(2, "gradient vs finite differences", gradient_suite);
  run(3, "calibration oracle", calibrate_suite);
  run(4, "open-set decision oracle", decide_suite);
  run(5, "AUROC equals rank statistic", auroc_suite);

  const Suite s;
  const auto t_data = Clock::now();
  const auto roster = default_device_roster(s.devices, derive_seed(s.seed, "roster"));
  std::map<std::string, LabeledDataset> data;
  // A: configuration 1; B: A through a second receiver; C: configuration 2.
  for (const auto& d : {domain("A", 1, 0, 0), domain("B", 1, 1000, 3), domain("C", 2, 0, 0)})
    data.emplace(d.domain_id, synth_dataset(roster, d, s.frames, s.seed));
  std::fprintf(stderr, "synthesized %zu devices x %zu frames x 3 domains in %.1f s\n", s.devices, s.frames,
               seconds_since(t_data));

  // Criteria 6 and 7 share one training run; 10 repeats it from scratch.
  const std::vector<std::vector<std::string>> cal67{{"A"}, {"B"}};
  const std::vector<std::string> test67{"A", "B"};
  std::optional<ExperimentMatrix> m67;
  TrainedModels models;
  double t67 = 0;
  {
    const auto t0 = Clock::now();
    try {
      m67 = run_matrix("A", cal67, test67, data, options(s, false), &models);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "matrix failed: %s\n", e.what());
    }
    t67 = seconds_since(t0);
  }

  run(6, "same-domain performance", [&]() -> Outcome {
    if (!m67) return {false, "matrix did not run"};
    const auto& c = m67->cell({"A"}, "A");
    const bool ok = c.summary.avg_auroc >= 0.90 && c.summary.avg_tpr.value_or(0) >= 0.85;
    return {ok, metrics(c) + fmt(" (train+eval %.0f s; n = %.0f)", t67, static_cast<double>(m67->n_used))};
  });

  run(7, "portability trend", [&]() -> Outcome {
    if (!m67) return {false, "matrix did not run"};
    const double aa = m67->cell({"A"}, "A").summary.avg_auroc;
    const double ab = m67->cell({"A"}, "B").summary.avg_auroc;
    const double bb = m67->cell({"B"}, "B").summary.avg_auroc;
    const bool drop = aa - ab >= 0.05, recover = bb >= aa - 0.05;
    return {drop && recover, fmt("A/A %.4f  A/B %.4f (drop %.4f)  B/B %.4f", aa, ab, aa - ab, bb) +
                                 (drop ? "" : " [no drop]") + (recover ? "" : " [no recovery]")};
  });

  std::optional<ExperimentMatrix> m89;
  {
    const std::vector<std::vector<std::string>> cal{{"A"}, {"C"}, {"A", "C"}};
    try {
      if (models.twin) m89 = run_matrix("A", cal, {"A", "C"}, data, options(s, true), &models);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "matrix failed: %s\n", e.what());
    }
  }

  run(8, "vanilla comparison", [&]() -> Outcome {
    if (!m89 || m89->vanilla.empty()) return {false, "matrix did not run"};
    const double tweak = m89->cell({"A"}, "A").summary.avg_auroc;
    const double vanilla = m89->vanilla.front().summary.avg_auroc;
    return {tweak >= vanilla, fmt("tweak %.4f vs vanilla max-logit %.4f", tweak, vanilla)};
  });

  run(9, "multi-calibration sanity", [&]() -> Outcome {
    if (!m89) return {false, "matrix did not run"};
    bool ok = true;
    std::string detail;
    for (const std::string td : {"A", "C"}) {
      const auto& multi = m89->cell({"A", "C"}, td);
      const auto& single = m89->cell({td}, td);
      const double tpr = multi.summary.avg_tpr.value_or(0), f_multi = multi.summary.avg_fpr.value_or(NAN);
      const double f_single = single.summary.avg_fpr.value_or(NAN);
      ok &= tpr >= 0.85 && f_multi >= f_single - 0.02;
      detail += td + ": multi tpr " + fmt("%.4f fpr %.4f vs single fpr %.4f; ", tpr, f_multi, f_single);
    }
    return {ok, detail};
  });

  run(10, "determinism", [&]() -> Outcome {
    if (!m67) return {false, "matrix did not run"};
    TrainedModels fresh;
    const auto again = run_matrix("A", cal67, test67, data, options(s, false), &fresh);
    const bool same_csv = matrix_csv(again, "acceptance") == matrix_csv(*m67, "acceptance");
    const bool same_json = matrix_json(again) == matrix_json(*m67);
    const bool same_model = fresh.twin == models.twin;
    return {same_csv && same_json && same_model,
            std::string("csv ") + (same_csv ? "identical" : "DIFFERS") + ", json " +
                (same_json ? "identical" : "DIFFERS") + ", weights " + (same_model ? "identical" : "DIFFER")};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
