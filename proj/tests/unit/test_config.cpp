#include "doctest.h"
#include "test_util.hpp"
#include "tweak/config.hpp"

using namespace tweak;

TEST_SUITE("config") {
  TEST_CASE("parser handles scalars, arrays, sections and comments") {
    const auto doc = ConfigDoc::parse(R"(
# top comment
seed = 42
name = "x # not a comment"
[sec]
f = 1.5e3
b = true
list = [1, 2, 3]   # trailing
strs = ["a", "b"]
[sec.sub]
neg = -7
)");
    CHECK(doc.get("", "seed")->as_int() == 42);
    CHECK(doc.get("", "name")->as_string() == "x # not a comment");
    CHECK(doc.get("sec", "f")->as_double() == 1500.0);
    CHECK(doc.get("sec", "b")->as_bool());
    CHECK(doc.get("sec", "list")->as_int_list() == std::vector<long long>{1, 2, 3});
    CHECK(doc.get("sec", "strs")->as_string_list() == std::vector<std::string>{"a", "b"});
    CHECK(doc.get("sec.sub", "neg")->as_int() == -7);
    CHECK(doc.get("sec", "missing") == nullptr);
    CHECK(doc.sections_with_prefix("sec.") == std::vector<std::string>{"sec.sub"});
  }

  TEST_CASE("parser errors name the line") {
    CHECK_THROWS_WITH_AS(ConfigDoc::parse("a = 1\nb 2\n"), doctest::Contains("2"), Error);
    CHECK_THROWS_AS(ConfigDoc::parse("a = 1\na = 2\n"), Error);
    CHECK_THROWS_AS(ConfigDoc::parse("[open\n"), Error);
    CHECK_THROWS_AS(ConfigDoc::parse("s = \"unterminated\n"), Error);
  }

  TEST_CASE("experiment config defaults mirror the reference hyperparameters") {
    const auto c = ExperimentConfig::from_doc(ConfigDoc::parse("[domain.A]\n"), ".");
    CHECK(c.m == 10);
    CHECK(c.n.fraction == 0.10);
    CHECK(c.n.absolute == 0);
    CHECK(c.train.batch_size == 64);
    CHECK(c.train.margin == 0.1);
    CHECK(c.train_fraction == 0.75);
    CHECK(c.train_domain == "A");
    CHECK(c.test_domains == std::vector<std::string>{"A"});
  }

  TEST_CASE("sections populate the config") {
    const auto c = ExperimentConfig::from_doc(ConfigDoc::parse(R"(
seed = 3
out = "o"
[synth]
devices = 7
frames_per_device = 90
cfo_hz = 1000
[domain.A]
lora_config = 2
snr_db = 25
tap_delays = [0, 3]
tap_re = [1.0, 0.2]
[domain.B]
lo_offset_hz = 1500
gain_db = 3
[train]
domain = "A"
epochs = 4
precision = "f32"
mining = "batch_hard"
[eval]
known_count = 3
n = "20%"
m = 5
calibrate = ["A", "A+B"]
test = ["A", "B"]
)"),
                                              "/base");
    CHECK(c.seed == 3);
    CHECK(c.data_dir() == "/base/o/data");
    CHECK(c.devices == 7);
    CHECK(c.ranges.cfo_hz == 1000.0);
    CHECK(c.domain("A").lora.spreading_factor == 8);
    CHECK(c.domain("A").channel.taps.size() == 2);
    CHECK(c.domain("B").receiver.lo_offset_hz == 1500.0);
    CHECK(c.train.epochs == 4);
    CHECK(c.train.precision == Precision::f32);
    CHECK(c.train.mining == MiningStrategy::batch_hard);
    CHECK(c.n.fraction == 0.2);
    CHECK(c.calibrate_domains == std::vector<std::vector<std::string>>{{"A"}, {"A", "B"}});
    CHECK_THROWS_AS(c.domain("Z"), Error);
  }

  TEST_CASE("unknown keys, sections and bad values are rejected") {
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[train]\nepoch = 3\n"), "."), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[bogus]\n"), "."), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[eval]\nn = \"0%\"\n"), "."), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[eval]\ntrain_fraction = 1.5\n"), "."), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[domain.A]\nlora_config = 9\n"), "."), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_doc(ConfigDoc::parse("[train]\nepochs = \"many\"\n"), "."), Error);
  }

  TEST_CASE("domain lists split on plus") {
    CHECK(split_domain_list("cfg1+cfg2") == std::vector<std::string>{"cfg1", "cfg2"});
    CHECK(split_domain_list("A") == std::vector<std::string>{"A"});
    CHECK_THROWS_AS(split_domain_list("A++B"), Error);
  }
}
