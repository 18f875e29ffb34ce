#include <cmath>
#include <numbers>

#include "doctest.h"
#include "fd_check.hpp"
#include "test_util.hpp"
#include "tweak/train.hpp"

using namespace tweak;

namespace {

// Two devices whose frames are tones at clearly different frequencies.
LabeledDataset separable(std::size_t per_device, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<FrameExample> frames;
  for (DeviceId d = 0; d < 2; ++d)
    for (std::size_t i = 0; i < per_device; ++i) {
      FrameExample f(length, d, "S");
      const double freq = d == 0 ? 0.05 : 0.2;
      const double phase = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
      for (std::size_t t = 0; t < length; ++t) {
        f.in_phase(t) = std::cos(2 * std::numbers::pi * freq * static_cast<double>(t) + phase) + noise(rng);
        f.quadrature(t) = std::sin(2 * std::numbers::pi * freq * static_cast<double>(t) + phase) + noise(rng);
      }
      frames.push_back(std::move(f));
    }
  return LabeledDataset(std::move(frames), "S");
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.devices_per_batch = 2;
  c.epochs = 8;
  c.learning_rate = 1e-2;
  c.validation_fraction = 0.25;
  c.seed = 3;
  return c;
}

std::vector<const FrameExample*> pointers(const std::vector<FrameExample>& v) {
  std::vector<const FrameExample*> p;
  for (const auto& f : v) p.push_back(&f);
  return p;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("defaults are the stated hyperparameters") {
    const TrainConfig c;
    CHECK(c.margin == 0.1);
    CHECK(c.batch_size == 64);
    CHECK(c.momentum == 0.9);
    CHECK(c.epochs == 100);
    CHECK(c.lr_grid == std::vector<double>{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6});
  }

  TEST_CASE("zero epochs returns the initial parameters") {
    const auto init = init_network(NetworkConfig::reduced(), 1);
    auto cfg = small_config();
    cfg.epochs = 0;
    const auto r = train(init, separable(32, 16, 1), cfg);
    CHECK(r.params == init);
    CHECK(r.history.empty());
  }

  TEST_CASE("training on separable devices lowers the validation loss") {
    const auto init = init_network(NetworkConfig::reduced(), 2);
    const auto ds = separable(32, 16, 2);
    const auto cfg = small_config();
    const auto split = split_validation(ds, cfg.validation_fraction);
    const double before = validation_loss(init, split.validation, cfg);
    std::size_t calls = 0;
    const auto r = train(init, ds, cfg, [&](const EpochRecord&) { ++calls; });
    CHECK(calls == cfg.epochs);
    CHECK(r.history.size() == cfg.epochs);
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_validation_loss < before);
    CHECK(r.history[r.best_epoch - 1].validation_loss == r.best_validation_loss);
  }

  TEST_CASE("training is reproducible in both precisions") {
    const auto init = init_network(NetworkConfig::reduced(), 3);
    const auto ds = separable(24, 16, 3);
    for (auto prec : {Precision::f64, Precision::f32}) {
      auto cfg = small_config();
      cfg.epochs = 2;
      cfg.precision = prec;
      const auto a = train(init, ds, cfg);
      const auto b = train(init, ds, cfg);
      CHECK(a.params == b.params);
      CHECK(a.params != init);
    }
  }

  TEST_CASE("batch sampler draws P devices by Q frames") {
    const auto ds = separable(10, 16, 4);
    BatchSampler s(ds, 8, 2, 1);
    for (int i = 0; i < 5; ++i) {
      const auto b = s.next();
      REQUIRE(b.size() == 8);
      std::map<DeviceId, int> count;
      for (const auto* f : b) ++count[f->device_id];
      CHECK(count.size() == 2);
      for (auto [id, c] : count) CHECK(c == 4);
    }
  }

  TEST_CASE("validation holdout is the tail of each device") {
    const auto ds = separable(20, 16, 5);
    const auto s = split_validation(ds, 0.1);
    CHECK(s.fit.count_of(0) == 18);
    CHECK(s.validation.count_of(1) == 2);
    CHECK(s.validation.frames_of(0)[0].data == ds.frames_of(0)[18].data);
  }

  TEST_CASE("learning-rate tuning") {
    const auto init = init_network(NetworkConfig::reduced(), 6);
    const auto ds = separable(24, 16, 6);
    auto cfg = small_config();
    cfg.epochs = 1;
    cfg.lr_grid = {1e-3};
    CHECK(tune_learning_rate(init, ds, cfg).chosen == 1e-3);
    cfg.lr_grid = {1e300, 1e-3};
    const auto r = tune_learning_rate(init, ds, cfg);
    CHECK(r.chosen == 1e-3);
    CHECK_FALSE(r.validation_loss[0].has_value());
    cfg.lr_grid = {1e300};
    CHECK_THROWS_AS(tune_learning_rate(init, ds, cfg), Error);
  }

  TEST_CASE("invalid configuration is rejected") {
    auto cfg = small_config();
    cfg.margin = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.batch_size = 3;
    CHECK_THROWS_AS(cfg.validate(), Error);
    const auto one_device = separable(10, 16, 7).restrict_to(std::vector<DeviceId>{0});
    CHECK_THROWS_AS(train(init_network(NetworkConfig::reduced(), 1), one_device, small_config()), Error);
  }

  TEST_CASE("analytic gradient matches central differences on the reduced network") {
    for (auto mining : {MiningStrategy::batch_hard, MiningStrategy::batch_all}) {
      for (std::uint64_t draw = 0; draw < 3; ++draw) {
        const auto params = init_network(NetworkConfig::reduced(), 100 + draw);
        const auto frames = testing::fd_batch(params.config.input_length, 200 + draw);
        const auto ptrs = pointers(frames);
        TrainConfig cfg;
        cfg.mining = mining;
        const auto rep = testing::finite_difference_check(params, ptrs, cfg);
        INFO("mining " << to_string(mining) << " draw " << draw << " worst index " << rep.worst_index);
        CHECK(rep.loss > 0.0);
        CHECK(rep.max_rel_error <= 1e-4);
      }
    }
  }

  TEST_CASE("batch-norm scale gradient at init matches central differences") {
    const auto params = init_network(NetworkConfig::reduced(), 7);
    const auto frames = testing::fd_batch(params.config.input_length, 8);
    const auto ptrs = pointers(frames);
    const TrainConfig cfg;
    const auto g = gradient(params, ptrs, cfg);
    const ParameterLayout lay(params.config);
    const auto& norm = lay.norm.at(0);
    for (std::size_t c = 0; c < norm.channels; ++c) {
      Parameters p = params;
      const std::size_t i = norm.gamma + c;
      const double h = 1e-5;
      p.values[i] = 1.0 + h;
      const double up = batch_objective(p, ptrs, cfg);
      p.values[i] = 1.0 - h;
      const double dn = batch_objective(p, ptrs, cfg);
      CHECK(g.grad[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1e-6));
    }
  }

  TEST_CASE("zero surviving triplets give a zero gradient") {
    const auto params = init_network(NetworkConfig::reduced(), 9);
    const auto frames = testing::fd_batch(params.config.input_length, 10);
    TrainConfig cfg;
    cfg.margin = 1e-12;
    cfg.mining = MiningStrategy::batch_all;
    // push the margin below every achievable gap by separating devices far apart
    auto far = frames;
    for (auto& f : far)
      for (double& v : f.data) v += 1e3 * static_cast<double>(f.device_id);
    const auto g = gradient(params, pointers(far), cfg);
    if (g.active == 0)
      for (double v : g.grad) CHECK(v == 0.0);
    const std::vector<FrameExample> same(4, frames[0]);
    const auto none = gradient(params, pointers(same), cfg);
    CHECK(none.active == 0);
    for (double v : none.grad) CHECK(v == 0.0);
  }

  TEST_CASE("cross entropy and max-logit score") {
    const std::vector<double> uniform(10, 0.3);
    CHECK(cross_entropy_loss(uniform, 4) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    std::vector<double> five(10, 0.0);
    five[0] = 5.0;
    CHECK(max_logit_score(five) == 5.0);
    CHECK(cross_entropy_loss(five, 0) < std::log(10.0));
    CHECK(cross_entropy_loss(five, 1) > std::log(10.0));
  }

  TEST_CASE("vanilla training emits one logit per class") {
    const auto ds = separable(24, 16, 11);
    auto cfg_net = NetworkConfig::reduced();
    cfg_net.output_dim = 2;
    auto cfg = small_config();
    cfg.epochs = 3;
    const auto r = train_vanilla(init_network(cfg_net, 1), ds, cfg);
    CHECK(vanilla_classes(ds) == std::vector<DeviceId>{0, 1});
    CHECK(vanilla_forward(r.params, ds.frames()[0]).size() == 2);
    auto too_few = NetworkConfig::reduced();
    too_few.output_dim = 1;
    CHECK_THROWS_AS(train_vanilla(init_network(too_few, 1), ds, cfg), Error);
  }
}
