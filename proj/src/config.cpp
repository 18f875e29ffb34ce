#include "tweak/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace tweak {

namespace fs = std::filesystem;

// ---- values ---------------------------------------------------------------------------

namespace {

using Scalar = ConfigValue::Scalar;

std::string scalar_string(const Scalar& s) {
  if (const auto* p = std::get_if<std::string>(&s)) return *p;
  throw Error("expected a string value");
}

double scalar_double(const Scalar& s) {
  if (const auto* p = std::get_if<double>(&s)) return *p;
  if (const auto* p = std::get_if<long long>(&s)) return static_cast<double>(*p);
  throw Error("expected a numeric value");
}

long long scalar_int(const Scalar& s) {
  if (const auto* p = std::get_if<long long>(&s)) return *p;
  throw Error("expected an integer value");
}

}  // namespace

std::string ConfigValue::as_string() const {
  if (is_array()) throw Error("expected a string, got an array");
  return scalar_string(std::get<0>(v));
}

double ConfigValue::as_double() const {
  if (is_array()) throw Error("expected a number, got an array");
  return scalar_double(std::get<0>(v));
}

long long ConfigValue::as_int() const {
  if (is_array()) throw Error("expected an integer, got an array");
  return scalar_int(std::get<0>(v));
}

bool ConfigValue::as_bool() const {
  if (!is_array())
    if (const auto* p = std::get_if<bool>(&std::get<0>(v))) return *p;
  throw Error("expected a boolean value");
}

std::vector<std::string> ConfigValue::as_string_list() const {
  if (!is_array()) return {as_string()};
  std::vector<std::string> out;
  for (const auto& s : std::get<1>(v)) out.push_back(scalar_string(s));
  return out;
}

std::vector<double> ConfigValue::as_double_list() const {
  if (!is_array()) return {as_double()};
  std::vector<double> out;
  for (const auto& s : std::get<1>(v)) out.push_back(scalar_double(s));
  return out;
}

std::vector<long long> ConfigValue::as_int_list() const {
  if (!is_array()) return {as_int()};
  std::vector<long long> out;
  for (const auto& s : std::get<1>(v)) out.push_back(scalar_int(s));
  return out;
}

// ---- parser ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Strips a trailing comment outside of quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

class ValueParser {
 public:
  ValueParser(std::string_view s, std::string where) : s_(s), where_(std::move(where)) {}

  ConfigValue parse() {
    skip();
    ConfigValue out;
    if (peek() == '[') {
      ++i_;
      std::vector<Scalar> items;
      skip();
      if (peek() == ']') {
        ++i_;
      } else {
        for (;;) {
          items.push_back(scalar());
          skip();
          if (peek() == ',') {
            ++i_;
            skip();
            if (peek() == ']') {
              ++i_;
              break;
            }
            continue;
          }
          if (peek() == ']') {
            ++i_;
            break;
          }
          fail("expected ',' or ']' in array");
        }
      }
      out.v = std::move(items);
    } else {
      out.v = scalar();
    }
    skip();
    if (i_ != s_.size()) fail("unexpected trailing characters");
    return out;
  }

 private:
  char peek() const { return i_ < s_.size() ? s_[i_] : '\0'; }
  void skip() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  [[noreturn]] void fail(const std::string& msg) const { throw Error(where_ + ": " + msg); }

  Scalar scalar() {
    skip();
    if (peek() == '"') {
      ++i_;
      std::string out;
      while (i_ < s_.size() && s_[i_] != '"') {
        if (s_[i_] == '\\' && i_ + 1 < s_.size()) {
          const char c = s_[++i_];
          out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
        } else {
          out += s_[i_];
        }
        ++i_;
      }
      if (peek() != '"') fail("unterminated string");
      ++i_;
      return out;
    }
    std::size_t j = i_;
    while (j < s_.size() && s_[j] != ',' && s_[j] != ']' &&
           !std::isspace(static_cast<unsigned char>(s_[j])))
      ++j;
    const std::string tok(s_.substr(i_, j - i_));
    i_ = j;
    if (tok.empty()) fail("missing value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok == "inf" || tok == "+inf") return std::numeric_limits<double>::infinity();
    if (tok == "-inf") return -std::numeric_limits<double>::infinity();
    std::string digits;
    for (char c : tok)
      if (c != '_') digits += c;
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      long long v = 0;
      const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec == std::errc() && p == digits.data() + digits.size()) return v;
    } else {
      try {
        std::size_t used = 0;
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      } catch (const std::logic_error&) {
      }
    }
    fail("cannot parse value '" + tok + "'");
  }

  std::string_view s_;
  std::string where_;
  std::size_t i_ = 0;
};

}  // namespace

ConfigDoc ConfigDoc::parse(const std::string& text, const std::string& origin) {
  ConfigDoc doc;
  std::string section;
  doc.sections_[section];
  doc.order_.push_back(section);
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw Error(where + ": empty section name");
      if (doc.sections_.count(section)) throw Error(where + ": duplicate section [" + section + "]");
      doc.sections_[section];
      doc.order_.push_back(section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    if (key.empty()) throw Error(where + ": empty key");
    auto& sec = doc.sections_[section];
    if (sec.count(key)) throw Error(where + ": duplicate key '" + key + "'");
    sec.emplace(key, ValueParser(std::string_view(line).substr(eq + 1), where).parse());
  }
  return doc;
}

ConfigDoc ConfigDoc::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool ConfigDoc::has(const std::string& section, const std::string& key) const {
  return get(section, key) != nullptr;
}

const ConfigValue* ConfigDoc::get(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  const auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

std::vector<std::string> ConfigDoc::sections_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& s : order_)
    if (s.size() > prefix.size() && s.compare(0, prefix.size(), prefix) == 0) out.push_back(s);
  return out;
}

std::vector<std::string> ConfigDoc::keys(const std::string& section) const {
  std::vector<std::string> out;
  const auto s = sections_.find(section);
  if (s != sections_.end())
    for (const auto& [k, v] : s->second) out.push_back(k);
  return out;
}

// ---- experiment config ----------------------------------------------------------------

std::vector<std::string> split_domain_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '+') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  for (const auto& d : out)
    if (d.empty()) throw Error("empty domain name in '" + s + "'");
  return out;
}

namespace {

class Reader {
 public:
  Reader(const ConfigDoc& doc, std::string section) : doc_(doc), section_(std::move(section)) {
    allowed_ = doc.keys(section_);
  }

  template <class F>
  void opt(const std::string& key, F&& apply) {
    used_.push_back(key);
    if (const auto* v = doc_.get(section_, key)) {
      try {
        apply(*v);
      } catch (const Error& e) {
        throw Error("[" + section_ + "] " + key + ": " + e.what());
      }
    }
  }

  void finish() const {
    for (const auto& k : allowed_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end())
        throw Error("unknown key '" + k + "' in section [" + section_ + "]");
  }

 private:
  const ConfigDoc& doc_;
  std::string section_;
  std::vector<std::string> allowed_;
  std::vector<std::string> used_;
};

std::size_t to_size(long long v) {
  if (v < 0) throw Error("expected a nonnegative integer");
  return static_cast<std::size_t>(v);
}

std::complex<double> to_complex(const ConfigValue& v) {
  const auto d = v.as_double_list();
  if (d.size() == 1) return {d[0], 0.0};
  if (d.size() == 2) return {d[0], d[1]};
  throw Error("complex values are [re, im]");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_doc(const ConfigDoc& doc, const fs::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;

  for (const auto& s : doc.sections_with_prefix(""))
    if (s != "synth" && s != "train" && s != "eval" && s.rfind("domain.", 0) != 0)
      throw Error("unknown config section [" + s + "]");

  Reader top(doc, "");
  top.opt("seed", [&](const ConfigValue& v) { c.seed = static_cast<std::uint64_t>(v.as_int()); });
  top.opt("out", [&](const ConfigValue& v) { c.out = v.as_string(); });
  top.finish();

  Reader syn(doc, "synth");
  syn.opt("devices", [&](const ConfigValue& v) { c.devices = to_size(v.as_int()); });
  syn.opt("frames_per_device", [&](const ConfigValue& v) { c.frames_per_device = to_size(v.as_int()); });
  syn.opt("experiment", [&](const ConfigValue& v) { c.experiment_file = v.as_string(); });
  syn.opt("cfo_hz", [&](const ConfigValue& v) { c.ranges.cfo_hz = v.as_double(); });
  syn.opt("iq_gain_imbalance_db", [&](const ConfigValue& v) { c.ranges.iq_gain_imbalance_db = v.as_double(); });
  syn.opt("iq_phase_imbalance_rad", [&](const ConfigValue& v) { c.ranges.iq_phase_imbalance_rad = v.as_double(); });
  syn.opt("dc_offset_max", [&](const ConfigValue& v) { c.ranges.dc_offset_max = v.as_double(); });
  syn.opt("phase_noise_std_max", [&](const ConfigValue& v) { c.ranges.phase_noise_std_max = v.as_double(); });
  syn.opt("preamble_length", [&](const ConfigValue& v) { c.payload.preamble_length = to_size(v.as_int()); });
  syn.opt("message", [&](const ConfigValue& v) {
    c.payload.message.clear();
    for (auto x : v.as_int_list()) c.payload.message.push_back(static_cast<std::uint32_t>(to_size(x)));
  });
  syn.opt("random_payload", [&](const ConfigValue& v) { c.payload.randomize = v.as_bool(); });
  syn.finish();

  for (const auto& s : doc.sections_with_prefix("domain.")) {
    DomainSpec d;
    d.domain_id = s.substr(7);
    Reader r(doc, s);
    r.opt("lora_config", [&](const ConfigValue& v) { d.lora = lora_preset(static_cast<int>(v.as_int())); });
    r.opt("spreading_factor", [&](const ConfigValue& v) { d.lora.spreading_factor = static_cast<int>(v.as_int()); });
    r.opt("snr_db", [&](const ConfigValue& v) { d.channel.snr_db = v.as_double(); });
    r.opt("channel_seed", [&](const ConfigValue& v) { d.channel.seed = static_cast<std::uint64_t>(v.as_int()); });
    std::vector<long long> delays;
    std::vector<double> re, im;
    r.opt("tap_delays", [&](const ConfigValue& v) { delays = v.as_int_list(); });
    r.opt("tap_re", [&](const ConfigValue& v) { re = v.as_double_list(); });
    r.opt("tap_im", [&](const ConfigValue& v) { im = v.as_double_list(); });
    if (!delays.empty()) {
      if (re.size() != delays.size() || (!im.empty() && im.size() != delays.size()))
        throw Error("[" + s + "] tap_delays, tap_re and tap_im must have equal lengths");
      d.channel.taps.clear();
      for (std::size_t i = 0; i < delays.size(); ++i)
        d.channel.taps.push_back({to_size(delays[i]), {re[i], im.empty() ? 0.0 : im[i]}});
    }
    r.opt("lo_offset_hz", [&](const ConfigValue& v) { d.receiver.lo_offset_hz = v.as_double(); });
    r.opt("gain_db", [&](const ConfigValue& v) { d.receiver.gain_db = v.as_double(); });
    r.opt("rx_dc_offset", [&](const ConfigValue& v) { d.receiver.dc_offset = to_complex(v); });
    r.finish();
    c.domains.push_back(std::move(d));
  }

  Reader tr(doc, "train");
  tr.opt("domain", [&](const ConfigValue& v) { c.train_domain = v.as_string(); });
  tr.opt("epochs", [&](const ConfigValue& v) { c.train.epochs = to_size(v.as_int()); });
  tr.opt("learning_rate", [&](const ConfigValue& v) { c.train.learning_rate = v.as_double(); });
  tr.opt("lr_grid", [&](const ConfigValue& v) { c.train.lr_grid = v.as_double_list(); });
  tr.opt("tune", [&](const ConfigValue& v) { c.tune_learning_rate = v.as_bool(); });
  tr.opt("tune_epochs", [&](const ConfigValue& v) { c.train.tune_epochs = to_size(v.as_int()); });
  tr.opt("margin", [&](const ConfigValue& v) { c.train.margin = v.as_double(); });
  tr.opt("momentum", [&](const ConfigValue& v) { c.train.momentum = v.as_double(); });
  tr.opt("batch_size", [&](const ConfigValue& v) { c.train.batch_size = to_size(v.as_int()); });
  tr.opt("devices_per_batch", [&](const ConfigValue& v) { c.train.devices_per_batch = to_size(v.as_int()); });
  tr.opt("batches_per_epoch", [&](const ConfigValue& v) { c.train.batches_per_epoch = to_size(v.as_int()); });
  tr.opt("validation_fraction", [&](const ConfigValue& v) { c.train.validation_fraction = v.as_double(); });
  tr.opt("precision", [&](const ConfigValue& v) { c.train.precision = parse_precision(v.as_string()); });
  tr.opt("mining", [&](const ConfigValue& v) { c.train.mining = parse_mining_strategy(v.as_string()); });
  tr.opt("vanilla", [&](const ConfigValue& v) { c.train_vanilla = v.as_bool(); });
  tr.finish();

  Reader ev(doc, "eval");
  ev.opt("known_count", [&](const ConfigValue& v) { c.known_count = to_size(v.as_int()); });
  ev.opt("known", [&](const ConfigValue& v) {
    for (auto x : v.as_int_list()) c.known.push_back(x);
  });
  ev.opt("unknown", [&](const ConfigValue& v) {
    for (auto x : v.as_int_list()) c.unknown.push_back(x);
  });
  ev.opt("n", [&](const ConfigValue& v) {
    if (v.is_array()) throw Error("expected a count or a percentage");
    const auto& s = std::get<0>(v.v);
    if (std::holds_alternative<long long>(s))
      c.n = CalibrationSize::parse(std::to_string(std::get<long long>(s)));
    else if (std::holds_alternative<double>(s))
      c.n = CalibrationSize::parse(std::to_string(std::get<double>(s)));
    else
      c.n = CalibrationSize::parse(v.as_string());
  });
  ev.opt("m", [&](const ConfigValue& v) { c.m = to_size(v.as_int()); });
  ev.opt("trials", [&](const ConfigValue& v) { c.trials = to_size(v.as_int()); });
  ev.opt("batches_per_device", [&](const ConfigValue& v) { c.batches_per_device = to_size(v.as_int()); });
  ev.opt("known_sampled", [&](const ConfigValue& v) { c.n_known_sampled = to_size(v.as_int()); });
  ev.opt("unknown_sampled", [&](const ConfigValue& v) { c.n_unknown_sampled = to_size(v.as_int()); });
  ev.opt("train_fraction", [&](const ConfigValue& v) { c.train_fraction = v.as_double(); });
  ev.opt("select", [&](const ConfigValue& v) {
    const auto s = v.as_string();
    if (s == "first") c.calibrate.select = CalibrationSelect::first;
    else if (s == "random") c.calibrate.select = CalibrationSelect::random;
    else throw Error("select must be 'first' or 'random'");
  });
  ev.opt("radius", [&](const ConfigValue& v) {
    const auto s = v.as_string();
    if (s == "mean") c.calibrate.radius = RadiusRule::mean;
    else if (s == "quantile") c.calibrate.radius = RadiusRule::quantile;
    else throw Error("radius must be 'mean' or 'quantile'");
  });
  ev.opt("quantile", [&](const ConfigValue& v) { c.calibrate.quantile = v.as_double(); });
  ev.opt("calibrate", [&](const ConfigValue& v) {
    for (const auto& s : v.as_string_list()) c.calibrate_domains.push_back(split_domain_list(s));
  });
  ev.opt("test", [&](const ConfigValue& v) { c.test_domains = v.as_string_list(); });
  ev.finish();

  if (c.train_domain.empty() && !c.domains.empty()) c.train_domain = c.domains.front().domain_id;
  if (c.calibrate_domains.empty() && !c.train_domain.empty()) c.calibrate_domains = {{c.train_domain}};
  if (c.test_domains.empty() && !c.train_domain.empty()) c.test_domains = {c.train_domain};
  c.calibrate.seed = derive_seed(c.seed, "calibration-select");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_doc(ConfigDoc::load(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void ExperimentConfig::validate() const {
  std::vector<std::string> ids;
  for (const auto& d : domains) {
    if (std::find(ids.begin(), ids.end(), d.domain_id) != ids.end())
      throw Error("domain '" + d.domain_id + "' defined twice");
    ids.push_back(d.domain_id);
    d.lora.validate();
    d.channel.validate();
    d.receiver.validate();
  }
  if (frames_per_device == 0) throw Error("frames_per_device must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("train_fraction must be in (0,1)");
  if (m == 0) throw Error("M must be at least 1");
  train.validate();
}

const DomainSpec& ExperimentConfig::domain(const std::string& id) const {
  for (const auto& d : domains)
    if (d.domain_id == id) return d;
  throw Error("config defines no domain '" + id + "'");
}

fs::path ExperimentConfig::resolve(const fs::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

fs::path ExperimentConfig::manifest_path(const std::string& domain) const {
  return data_dir() / domain / "manifest.json";
}

fs::path ExperimentConfig::model_path(bool vanilla) const {
  return resolve(out) / "model" / (vanilla ? "vanilla.json" : "twin.json");
}

fs::path ExperimentConfig::calibration_path(const std::string& domain) const {
  return resolve(out) / "calibration" / (domain + ".json");
}

}  // namespace tweak
