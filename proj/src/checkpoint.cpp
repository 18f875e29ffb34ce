#include "tweak/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace tweak {

using nlohmann::json;

namespace {

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json config_to_json(const NetworkConfig& c) {
  json layers = json::array();
  for (const auto& l : c.conv_layers) layers.push_back({l.out_channels, l.kernel});
  return {{"input_channels", c.input_channels},
          {"input_length", c.input_length},
          {"conv_layers", layers},
          {"pool_size", c.pool_size},
          {"hidden", c.hidden},
          {"output_dim", c.output_dim},
          {"leaky_slope", c.leaky_slope},
          {"batchnorm_momentum", c.batchnorm_momentum},
          {"batchnorm_eps", c.batchnorm_eps}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.input_length = j.at("input_length").get<std::size_t>();
  c.conv_layers.clear();
  for (const auto& l : j.at("conv_layers"))
    c.conv_layers.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>()});
  c.pool_size = j.at("pool_size").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.batchnorm_momentum = j.at("batchnorm_momentum").get<double>();
  c.batchnorm_eps = j.at("batchnorm_eps").get<double>();
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  ck.params.validate();
  const ParameterLayout layout(ck.params.config);
  json tensors = json::object();
  for (const auto& s : layout.slots) {
    const auto first = ck.params.values.begin() + static_cast<std::ptrdiff_t>(s.offset);
    tensors[s.name] = {{"shape", s.shape},
                       {"data", std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.size))}};
  }
  json history = json::array();
  for (const auto& r : ck.history)
    history.push_back({{"epoch", r.epoch},
                       {"train_loss", nan_to_null(r.train_loss)},
                       {"objective", nan_to_null(r.objective)},
                       {"validation_loss", nan_to_null(r.validation_loss)},
                       {"active_fraction", nan_to_null(r.active_fraction)}});
  json j = {{"format", kCheckpointFormat},
            {"kind", ck.kind},
            {"version", ck.params.version},
            {"model_version", ck.params.model_version()},
            {"init_seed", ck.params.init_seed},
            {"seed", ck.seed},
            {"train_domain", ck.train_domain},
            {"learning_rate", ck.learning_rate},
            {"best_epoch", ck.best_epoch},
            {"classes", ck.classes},
            {"config", config_to_json(ck.params.config)},
            {"tensors", tensors},
            {"running_mean", ck.params.running_mean},
            {"running_var", ck.params.running_var},
            {"history", history}};
  write_file_atomic(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format").get<int>() != kCheckpointFormat)
      throw Error("unsupported checkpoint format in " + path.string());
    Checkpoint ck;
    ck.kind = j.at("kind").get<std::string>();
    ck.params.config = config_from_json(j.at("config"));
    ck.params.version = j.at("version").get<std::string>();
    ck.params.init_seed = j.at("init_seed").get<std::uint64_t>();
    ck.seed = j.value("seed", std::uint64_t{0});
    ck.train_domain = j.value("train_domain", std::string{});
    ck.learning_rate = j.value("learning_rate", 0.0);
    ck.best_epoch = j.value("best_epoch", std::size_t{0});
    ck.classes = j.value("classes", std::vector<DeviceId>{});

    const ParameterLayout layout(ck.params.config);
    ck.params.values.assign(layout.total, 0.0);
    const auto& tensors = j.at("tensors");
    for (const auto& s : layout.slots) {
      const auto& t = tensors.at(s.name);
      if (t.at("shape").get<std::vector<std::size_t>>() != s.shape)
        throw Error("tensor " + s.name + " has the wrong shape");
      const auto data = t.at("data").get<std::vector<double>>();
      if (data.size() != s.size) throw Error("tensor " + s.name + " has the wrong size");
      std::copy(data.begin(), data.end(),
                ck.params.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
    ck.params.running_mean = j.at("running_mean").get<std::vector<double>>();
    ck.params.running_var = j.at("running_var").get<std::vector<double>>();
    for (const auto& h : j.value("history", json::array())) {
      EpochRecord r;
      r.epoch = h.at("epoch").get<std::size_t>();
      r.train_loss = null_to_nan(h.at("train_loss"));
      r.objective = null_to_nan(h.at("objective"));
      r.validation_loss = null_to_nan(h.at("validation_loss"));
      r.active_fraction = null_to_nan(h.at("active_fraction"));
      ck.history.push_back(r);
    }
    ck.params.validate();
    if (j.contains("model_version") &&
        j["model_version"].get<std::string>() != ck.params.model_version())
      throw Error("checkpoint " + path.string() + " fails its model_version check");
    return ck;
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace tweak
