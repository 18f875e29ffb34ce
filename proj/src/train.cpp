#include "tweak/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace tweak {

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw Error("margin must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0,1)");
  if (batch_size < 4) throw Error("batch_size must be at least 4");
  if (devices_per_batch < 2) throw Error("batches need at least 2 devices");
  if (devices_per_batch > batch_size / 2)
    throw Error("devices_per_batch leaves fewer than 2 frames per device");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error("validation_fraction must be in [0,1)");
}

TrainDivergence::TrainDivergence(std::size_t e, std::size_t b, const std::string& what)
    : Error("training diverged at epoch " + std::to_string(e) + ", batch " + std::to_string(b) +
            ": " + what),
      epoch(e),
      batch(b) {}

FitSplit split_validation(const LabeledDataset& train_set, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("validation_fraction must be in [0,1)");
  std::map<DeviceId, std::size_t> held, seen;
  for (DeviceId id : train_set.device_ids()) {
    const std::size_t k = train_set.count_of(id);
    std::size_t nval = static_cast<std::size_t>(std::floor(static_cast<double>(k) * fraction));
    if (fraction > 0.0 && nval == 0 && k >= 2) nval = 1;
    if (nval >= k) nval = k - 1;
    held[id] = nval;
  }
  std::vector<FrameExample> fit, val;
  for (const auto& f : train_set.frames()) {
    const std::size_t k = train_set.count_of(f.device_id);
    const std::size_t i = seen[f.device_id]++;
    (i >= k - held[f.device_id] ? val : fit).push_back(f);
  }
  FitSplit s;
  s.fit = LabeledDataset(std::move(fit), train_set.domain_id());
  if (!val.empty()) s.validation = LabeledDataset(std::move(val), train_set.domain_id());
  return s;
}

// ---- sampler ------------------------------------------------------------------------

BatchSampler::BatchSampler(const LabeledDataset& ds, std::size_t batch_size,
                           std::size_t devices_per_batch, std::uint64_t seed)
    : rng_(seed) {
  const auto groups = ds.by_device();
  if (groups.size() < 2) throw Error("training needs at least 2 devices");
  for (DeviceId id : ds.device_ids()) {
    std::vector<const FrameExample*> pool;
    for (const auto& f : ds.frames())
      if (f.device_id == id) pool.push_back(&f);
    fisher_yates(pool, rng_);
    pools_.push_back(std::move(pool));
  }
  cursor_.assign(pools_.size(), 0);
  device_order_.resize(pools_.size());
  for (std::size_t i = 0; i < device_order_.size(); ++i) device_order_[i] = i;
  per_batch_devices_ = std::min(devices_per_batch, pools_.size());
  per_device_frames_ = std::max<std::size_t>(batch_size / per_batch_devices_, 2);
}

std::vector<const FrameExample*> BatchSampler::next() {
  fisher_yates(device_order_, rng_);
  std::vector<const FrameExample*> out;
  out.reserve(per_batch_devices_ * per_device_frames_);
  for (std::size_t d = 0; d < per_batch_devices_; ++d) {
    const std::size_t dev = device_order_[d];
    auto& pool = pools_[dev];
    for (std::size_t q = 0; q < per_device_frames_; ++q) {
      if (cursor_[dev] == pool.size()) {
        fisher_yates(pool, rng_);
        cursor_[dev] = 0;
      }
      out.push_back(pool[cursor_[dev]++]);
    }
  }
  return out;
}

// ---- shared helpers -----------------------------------------------------------------

namespace {

enum class Objective { triplet, cross_entropy };

std::vector<DeviceId> labels_of(std::span<const FrameExample* const> batch) {
  std::vector<DeviceId> l;
  l.reserve(batch.size());
  for (const auto* f : batch) l.push_back(f->device_id);
  return l;
}

// Device-interleaved order: d0 f0, d1 f0, ..., d0 f1, ...
std::vector<const FrameExample*> interleaved(const LabeledDataset& ds) {
  std::vector<std::vector<const FrameExample*>> pools;
  for (DeviceId id : ds.device_ids()) {
    pools.emplace_back();
    for (const auto& f : ds.frames())
      if (f.device_id == id) pools.back().push_back(&f);
  }
  std::vector<const FrameExample*> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; out.size() < ds.size(); ++i)
    for (const auto& p : pools)
      if (i < p.size()) out.push_back(p[i]);
  return out;
}

std::size_t class_index(const std::vector<DeviceId>& classes, DeviceId id) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), id);
  if (it == classes.end() || *it != id)
    throw Error("device " + std::to_string(id) + " has no vanilla class");
  return static_cast<std::size_t>(it - classes.begin());
}

struct BatchEval {
  double objective = 0.0;
  std::size_t active = 0;
  std::size_t possible = 0;
  double full_sum = 0.0;
  std::size_t full_count = 0;
  std::vector<double> dout;
};

BatchEval evaluate_batch(const std::vector<double>& out, std::size_t D,
                         const std::vector<DeviceId>& labels, const TrainConfig& cfg,
                         Objective kind, const std::vector<DeviceId>& classes) {
  BatchEval ev;
  const std::size_t B = labels.size();
  if (kind == Objective::triplet) {
    auto obj = mined_triplet_objective(out, D, labels, cfg.margin, cfg.mining);
    const auto full = all_triplet_loss(out, D, labels, cfg.margin);
    ev.objective = obj.loss;
    ev.active = obj.active;
    ev.possible = cfg.mining == MiningStrategy::batch_all ? full.count : B;
    ev.full_sum = full.sum;
    ev.full_count = full.count;
    ev.dout = std::move(obj.grad);
  } else {
    ev.dout.assign(B * D, 0.0);
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      std::span<const double> logits(out.data() + b * D, D);
      const std::size_t y = class_index(classes, labels[b]);
      sum += cross_entropy_loss(logits, y);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      for (std::size_t k = 0; k < D; ++k)
        ev.dout[b * D + k] = (std::exp(logits[k] - mx) / z - (k == y ? 1.0 : 0.0)) / B;
    }
    ev.objective = sum / B;
    ev.active = B;
    ev.possible = B;
    ev.full_sum = sum;
    ev.full_count = B;
  }
  return ev;
}

template <class T>
std::vector<double> forward_double(Network<T>& net, std::span<const FrameExample* const> batch,
                                   ForwardMode mode, std::vector<T>& buf) {
  pack_frames<T>(batch, net.config().input_length, buf);
  const auto& y = net.forward(buf.data(), batch.size(), mode);
  return {y.begin(), y.end()};
}

double cross_entropy_validation(const Parameters& params, const LabeledDataset& val,
                                const TrainConfig& cfg, const std::vector<DeviceId>& classes) {
  const Embedder emb(params, cfg.precision);
  const auto logits = emb.embed(std::span<const FrameExample>(val.frames()));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    sum += cross_entropy_loss(logits[i], class_index(classes, val.frames()[i].device_id));
  return sum / static_cast<double>(logits.size());
}

template <class T>
TrainResult train_impl(const Parameters& init, const LabeledDataset& train_set,
                       const TrainConfig& cfg, const EpochCallback& on_epoch, Objective kind) {
  cfg.validate();
  init.validate();
  TrainResult result;
  result.params = init;
  result.learning_rate = cfg.learning_rate;
  result.best_validation_loss = std::numeric_limits<double>::quiet_NaN();
  if (train_set.device_ids().size() < 2) throw Error("training needs at least 2 devices");
  std::vector<DeviceId> classes;
  if (kind == Objective::cross_entropy) {
    classes = train_set.device_ids();
    if (classes.size() > init.config.output_dim)
      throw Error("vanilla network has " + std::to_string(init.config.output_dim) +
                  " outputs but the training set has " + std::to_string(classes.size()) +
                  " devices");
  }
  if (cfg.epochs == 0) return result;

  const auto split = split_validation(train_set, cfg.validation_fraction);
  const bool have_val = !split.validation.empty();
  BatchSampler sampler(split.fit, cfg.batch_size, cfg.devices_per_batch,
                       derive_seed(cfg.seed, "sampler"));
  const std::size_t per_batch = sampler.devices_per_batch() * sampler.frames_per_device();
  const std::size_t nb = cfg.batches_per_epoch > 0
                             ? cfg.batches_per_epoch
                             : std::max<std::size_t>(1, split.fit.size() / per_batch);

  Parameters params = init;
  Network<T> net(init.config);
  const std::size_t D = init.config.output_dim;
  std::vector<double> velocity(params.values.size(), 0.0);
  std::vector<T> buf, dout, grad;
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double obj_sum = 0.0, full_sum = 0.0, active = 0.0, possible = 0.0;
    std::size_t full_count = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      const auto batch = sampler.next();
      const auto labels = labels_of(batch);
      BatchEval ev;
      try {
        net.load(params);
        const auto out = forward_double(net, batch, ForwardMode::train, buf);
        ev = evaluate_batch(out, D, labels, cfg, kind, classes);
      } catch (const TrainDivergence&) {
        throw;
      } catch (const Error& e) {
        throw TrainDivergence(epoch, b, e.what());
      }
      if (!std::isfinite(ev.objective)) throw TrainDivergence(epoch, b, "non-finite loss");
      obj_sum += ev.objective;
      full_sum += ev.full_sum;
      full_count += ev.full_count;
      active += static_cast<double>(ev.active);
      possible += static_cast<double>(ev.possible);
      net.update_running_stats(params);
      if (ev.active == 0) continue;

      dout.assign(ev.dout.begin(), ev.dout.end());
      net.backward(dout.data(), grad);
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + static_cast<double>(grad[i]);
        params.values[i] -= cfg.learning_rate * velocity[i];
      }
      for (double v : params.values)
        if (!std::isfinite(v)) throw TrainDivergence(epoch, b, "non-finite parameter update");
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.objective = obj_sum / static_cast<double>(nb);
    rec.train_loss = full_count ? full_sum / static_cast<double>(full_count) : 0.0;
    rec.active_fraction = possible > 0 ? active / possible : 0.0;
    rec.validation_loss = std::numeric_limits<double>::quiet_NaN();
    if (have_val) {
      try {
        rec.validation_loss = kind == Objective::triplet
                                  ? validation_loss(params, split.validation, cfg)
                                  : cross_entropy_validation(params, split.validation, cfg, classes);
      } catch (const Error& e) {
        throw TrainDivergence(epoch, nb, e.what());
      }
      if (!std::isfinite(rec.validation_loss))
        throw TrainDivergence(epoch, nb, "non-finite validation loss");
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const double score = have_val ? rec.validation_loss : rec.train_loss;
    if (score < best) {
      best = score;
      result.best_epoch = epoch;
      result.best_validation_loss = score;
      result.params = params;
    }
  }
  return result;
}

template <class T>
GradientResult gradient_impl(const Parameters& params, std::span<const FrameExample* const> batch,
                             const TrainConfig& cfg) {
  Network<T> net(params.config);
  net.load(params);
  std::vector<T> buf;
  const auto out = forward_double(net, batch, ForwardMode::train, buf);
  const auto labels = labels_of(batch);
  auto obj = mined_triplet_objective(out, params.config.output_dim, labels, cfg.margin, cfg.mining);
  GradientResult r;
  r.loss = obj.loss;
  r.active = obj.active;
  if (obj.active == 0) {
    r.grad.assign(params.values.size(), 0.0);
    return r;
  }
  std::vector<T> dout(obj.grad.begin(), obj.grad.end()), g;
  net.backward(dout.data(), g);
  r.grad.assign(g.begin(), g.end());
  return r;
}

}  // namespace

TrainResult train(const Parameters& init, const LabeledDataset& train_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  return cfg.precision == Precision::f64
             ? train_impl<double>(init, train_set, cfg, on_epoch, Objective::triplet)
             : train_impl<float>(init, train_set, cfg, on_epoch, Objective::triplet);
}

TrainResult train_vanilla(const Parameters& init, const LabeledDataset& train_set,
                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return cfg.precision == Precision::f64
             ? train_impl<double>(init, train_set, cfg, on_epoch, Objective::cross_entropy)
             : train_impl<float>(init, train_set, cfg, on_epoch, Objective::cross_entropy);
}

TuneResult tune_learning_rate(const Parameters& init, const LabeledDataset& train_set,
                              const TrainConfig& cfg) {
  if (cfg.lr_grid.empty()) throw Error("learning-rate grid is empty");
  TuneResult r;
  r.rates = cfg.lr_grid;
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < r.rates.size(); ++i) {
    TrainConfig c = cfg;
    c.learning_rate = r.rates[i];
    if (cfg.tune_epochs > 0) c.epochs = cfg.tune_epochs;
    if (c.epochs == 0) c.epochs = 1;
    std::optional<double> loss;
    try {
      const auto res = train(init, train_set, c);
      loss = res.best_validation_loss;
      if (!std::isfinite(*loss)) loss.reset();
    } catch (const TrainDivergence&) {
    }
    r.validation_loss.push_back(loss);
    if (!loss) continue;
    if (!pick) {
      pick = i;
      continue;
    }
    const double best = *r.validation_loss[*pick];
    if (*loss < best || (*loss == best && r.rates[i] < r.rates[*pick])) pick = i;
  }
  if (!pick) throw Error("every learning rate in the grid diverged");
  r.chosen = r.rates[*pick];
  return r;
}

GradientResult gradient(const Parameters& params, std::span<const FrameExample* const> batch,
                        const TrainConfig& cfg) {
  return cfg.precision == Precision::f64 ? gradient_impl<double>(params, batch, cfg)
                                         : gradient_impl<float>(params, batch, cfg);
}

double batch_objective(const Parameters& params, std::span<const FrameExample* const> batch,
                       const TrainConfig& cfg) {
  Network<double> net(params.config);
  net.load(params);
  std::vector<double> buf;
  const auto out = forward_double(net, batch, ForwardMode::train, buf);
  const auto labels = labels_of(batch);
  return mined_triplet_objective(out, params.config.output_dim, labels, cfg.margin, cfg.mining).loss;
}

double validation_loss(const Parameters& params, const LabeledDataset& validation,
                       const TrainConfig& cfg) {
  if (validation.empty()) throw Error("validation set is empty");
  const auto order = interleaved(validation);
  const Embedder emb(params, cfg.precision);
  const auto points = emb.embed(std::span<const FrameExample* const>(order));
  const std::size_t D = params.config.output_dim;
  TripletSum total;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, order.size() - start);
    std::vector<double> flat;
    std::vector<DeviceId> labels;
    for (std::size_t i = start; i < start + n; ++i) {
      flat.insert(flat.end(), points[i].begin(), points[i].end());
      labels.push_back(order[i]->device_id);
    }
    const auto s = all_triplet_loss(flat, D, labels, cfg.margin);
    total.sum += s.sum;
    total.count += s.count;
  }
  if (total.count == 0) throw Error("validation slice yields no triplets");
  return total.sum / static_cast<double>(total.count);
}

double cross_entropy_loss(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size())
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[label];
}

double max_logit_score(std::span<const double> logits) {
  if (logits.empty()) throw Error("empty logits");
  return *std::max_element(logits.begin(), logits.end());
}

std::vector<DeviceId> vanilla_classes(const LabeledDataset& train_set) {
  return train_set.device_ids();
}

std::vector<double> vanilla_forward(const Parameters& params, const FrameExample& frame) {
  return Embedder(params).embed(frame);
}

}  // namespace tweak
