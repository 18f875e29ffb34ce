// tweak: synthesize data, train, calibrate, decide, evaluate, report.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "tweak/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c, bool config_required = true) {
  auto* opt = sub->add_option("--config,-c", c.config, "experiment config file (TOML-style)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "override the root seed");
  sub->add_option("--out,-o", c.out, "override the output directory");
  sub->add_flag("--quiet,-q", c.quiet, "suppress progress messages");
}

tweak::ExperimentConfig load_config(const Common& c) {
  auto cfg = tweak::ExperimentConfig::load(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.calibrate.seed = tweak::derive_seed(cfg.seed, "calibration-select");
  }
  if (c.out) cfg.out = fs::absolute(*c.out);
  cfg.validate();
  return cfg;
}

tweak::Logger logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

void apply_thread_override() {
  if (const char* env = std::getenv("TWEAK_NUM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1)
      throw tweak::Error(std::string("TWEAK_NUM_THREADS must be a positive integer, got '") + env + "'");
    omp_set_num_threads(static_cast<int>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tweak: open-set RF fingerprinting with calibrated twin-network embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tweak 0.1.0");

  Common synth_c, train_c, cal_c, eval_c;

  auto* synth = app.add_subcommand("synth", "generate synthetic recordings for every configured domain");
  add_common(synth, synth_c);

  auto* trn = app.add_subcommand("train", "train the twin network (or the vanilla baseline)");
  add_common(trn, train_c);
  std::string baseline;
  trn->add_option("--baseline", baseline, "train the cross-entropy baseline instead")
      ->check(CLI::IsMember({"vanilla"}));

  auto* cal = app.add_subcommand("calibrate", "compute per-device centroids and radii, or merge tables");
  add_common(cal, cal_c, false);
  std::string cal_checkpoint, cal_domain, cal_n;
  std::vector<std::string> merge_inputs;
  std::string merge_out;
  cal->add_option("--checkpoint", cal_checkpoint, "twin checkpoint (default: <out>/model/twin.json)");
  cal->add_option("--domain,-d", cal_domain, "domain to calibrate on");
  cal->add_option("--n", cal_n, "calibration size per device: count or percentage such as 10%");
  cal->add_option("--merge", merge_inputs, "calibration files to merge into one multi-domain table")
      ->check(CLI::ExistingFile);
  cal->add_option("--merge-out", merge_out, "output path for --merge");

  auto* dec = app.add_subcommand("decide", "admit or reject M-frame batches from a recording set");
  std::string dec_checkpoint, dec_calibration, dec_manifest, dec_out, dec_precision = "f64";
  std::size_t dec_m = tweak::kDefaultBatchM;
  bool dec_quiet = false;
  dec->add_option("--checkpoint", dec_checkpoint, "twin checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--calibration", dec_calibration, "calibration table (single or merged)")
      ->required()->check(CLI::ExistingFile);
  dec->add_option("--input,-i", dec_manifest, "manifest of the recordings to decide on")
      ->required()->check(CLI::ExistingFile);
  dec->add_option("--m,-M", dec_m, "frames per decision batch");
  dec->add_option("--out,-o", dec_out, "JSON-lines output")->required();
  dec->add_option("--precision", dec_precision, "inference precision")->check(CLI::IsMember({"f32", "f64"}));
  dec->add_flag("--quiet,-q", dec_quiet);

  auto* ev = app.add_subcommand("evaluate", "run the portability matrix and write CSV/JSON results");
  add_common(ev, eval_c);

  auto* rep = app.add_subcommand("report", "merge matrix results from several runs into one table");
  std::vector<std::string> rep_dirs;
  std::string rep_out;
  rep->add_option("dirs", rep_dirs, "result directories (one per run)")->required();
  rep->add_option("--out,-o", rep_out, "merged CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    apply_thread_override();
    if (*synth) {
      for (const auto& p : tweak::cmd_synth(load_config(synth_c), logger(synth_c))) std::cout << p.string() << '\n';
    } else if (*trn) {
      std::cout << tweak::cmd_train(load_config(train_c), baseline == "vanilla", logger(train_c)).string() << '\n';
    } else if (*cal) {
      if (!merge_inputs.empty()) {
        if (merge_out.empty()) throw tweak::Error("--merge needs --merge-out");
        std::vector<fs::path> in(merge_inputs.begin(), merge_inputs.end());
        std::cout << tweak::cmd_merge(in, merge_out).string() << '\n';
      } else {
        if (cal_c.config.empty()) throw tweak::Error("calibrate needs --config (or --merge)");
        if (cal_domain.empty()) throw tweak::Error("calibrate needs --domain");
        const auto cfg = load_config(cal_c);
        const fs::path ck = cal_checkpoint.empty() ? cfg.model_path(false) : fs::path(cal_checkpoint);
        std::optional<tweak::CalibrationSize> n;
        if (!cal_n.empty()) n = tweak::CalibrationSize::parse(cal_n);
        std::cout << tweak::cmd_calibrate(cfg, ck, cal_domain, n, logger(cal_c)).string() << '\n';
      }
    } else if (*dec) {
      Common c;
      c.quiet = dec_quiet;
      std::cout << tweak::cmd_decide(dec_checkpoint, dec_calibration, dec_manifest, dec_m, dec_out,
                                     tweak::parse_precision(dec_precision), logger(c))
                       .string()
                << '\n';
    } else if (*ev) {
      const auto m = tweak::cmd_evaluate(load_config(eval_c), logger(eval_c));
      for (const auto& cell : m.cells) {
        std::string cal_name;
        for (const auto& d : cell.calibrate_domains) cal_name += (cal_name.empty() ? "" : "+") + d;
        std::cout << cal_name << " -> " << cell.test_domain << ": ";
        if (cell.failed) {
          std::cout << "failed (" << cell.error << ")\n";
          continue;
        }
        std::cout << "auroc " << cell.summary.avg_auroc;
        if (cell.summary.avg_tpr) std::cout << "  tpr " << *cell.summary.avg_tpr;
        if (cell.summary.avg_fpr) std::cout << "  fpr " << *cell.summary.avg_fpr;
        std::cout << '\n';
      }
    } else if (*rep) {
      std::vector<fs::path> dirs(rep_dirs.begin(), rep_dirs.end());
      std::cout << tweak::cmd_report(dirs, rep_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "tweak: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
