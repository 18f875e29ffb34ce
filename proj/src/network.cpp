#include "tweak/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

namespace tweak {

// ---- config ---------------------------------------------------------------------

void NetworkConfig::validate() const {
  if (input_channels == 0 || input_length == 0) throw Error("network input shape must be nonzero");
  if (conv_layers.empty() || conv_layers.size() % 2 != 0)
    throw Error("conv layers must come in pairs, got " + std::to_string(conv_layers.size()));
  for (const auto& c : conv_layers) {
    if (c.out_channels == 0) throw Error("conv layer with zero output channels");
    if (c.kernel == 0 || c.kernel % 2 == 0) throw Error("conv kernel sizes must be odd");
  }
  if (pool_size < 1) throw Error("pool_size must be >= 1");
  std::size_t len = input_length;
  for (std::size_t p = 0; p < num_blocks(); ++p) {
    if (len % pool_size != 0)
      throw Error("input length " + std::to_string(input_length) + " not divisible by pooling");
    len /= pool_size;
  }
  if (len == 0) throw Error("pooling reduces the sequence to nothing");
  if (hidden == 0 || output_dim == 0) throw Error("dense layer widths must be nonzero");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw Error("leaky_slope must be in [0,1)");
  if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0))
    throw Error("batchnorm_momentum must be in (0,1]");
  if (!(batchnorm_eps > 0.0)) throw Error("batchnorm_eps must be positive");
}

bool NetworkConfig::is_reference_shape() const {
  return conv_layers.size() == 4 && output_dim == kEmbeddingDim;
}

std::size_t NetworkConfig::flat_features() const {
  std::size_t len = input_length;
  for (std::size_t p = 0; p < num_blocks(); ++p) len /= pool_size;
  return conv_layers.back().out_channels * len;
}

NetworkConfig NetworkConfig::reference() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::vanilla() {
  NetworkConfig c;
  c.output_dim = kVanillaClasses;
  return c;
}

NetworkConfig NetworkConfig::reduced() {
  NetworkConfig c;
  c.input_length = 16;
  c.conv_layers = {{4, 3}, {4, 3}};
  c.hidden = 8;
  c.output_dim = 4;
  return c;
}

// ---- layout / parameters ----------------------------------------------------------

ParameterLayout::ParameterLayout(const NetworkConfig& cfg) {
  cfg.validate();
  std::size_t off = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    slots.push_back({std::move(name), off, n, std::move(shape)});
    off += n;
    return slots.back().offset;
  };
  std::size_t channels = cfg.input_channels;
  std::size_t len = cfg.input_length;
  for (std::size_t p = 0; p < cfg.num_blocks(); ++p) {
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t i = 2 * p + j;
      const auto& spec = cfg.conv_layers[i];
      Conv c{};
      c.in_channels = channels;
      c.out_channels = spec.out_channels;
      c.kernel = spec.kernel;
      c.length = len;
      const std::string tag = "conv" + std::to_string(i + 1);
      c.weight = add(tag + ".weight", {spec.out_channels, channels, spec.kernel});
      c.bias = add(tag + ".bias", {spec.out_channels});
      conv.push_back(c);
      channels = spec.out_channels;
    }
    len /= cfg.pool_size;
    Norm n{};
    n.channels = channels;
    n.length = len;
    n.stat_offset = stat_total;
    stat_total += channels;
    const std::string tag = "bn" + std::to_string(p + 1);
    n.gamma = add(tag + ".gamma", {channels});
    n.beta = add(tag + ".beta", {channels});
    norm.push_back(n);
  }
  const std::size_t flat = channels * len;
  fc1 = {add("fc1.weight", {cfg.hidden, flat}), add("fc1.bias", {cfg.hidden}), flat, cfg.hidden};
  fc2 = {add("fc2.weight", {cfg.output_dim, cfg.hidden}), add("fc2.bias", {cfg.output_dim}),
         cfg.hidden, cfg.output_dim};
  total = off;
}

void Parameters::validate() const {
  const ParameterLayout layout(config);
  if (values.size() != layout.total)
    throw Error("parameter vector has " + std::to_string(values.size()) + " values, expected " +
                std::to_string(layout.total));
  if (running_mean.size() != layout.stat_total || running_var.size() != layout.stat_total)
    throw Error("running statistics do not match the network shape");
  for (double v : running_var)
    if (!(v > 0.0)) throw Error("running variance must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw Error("non-finite parameter value");
}

namespace {

std::uint64_t hash_doubles(std::uint64_t h, const std::vector<double>& v) {
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    h = mix64(h ^ bits);
  }
  return mix64(h ^ v.size());
}

}  // namespace

std::string Parameters::model_version() const {
  std::uint64_t h = fnv1a64(version);
  h = mix64(h ^ config.input_channels);
  h = mix64(h ^ config.input_length);
  for (const auto& c : config.conv_layers) h = mix64(h ^ (c.out_channels * 131 + c.kernel));
  h = mix64(h ^ config.pool_size);
  h = mix64(h ^ config.hidden);
  h = mix64(h ^ config.output_dim);
  h = hash_doubles(h, values);
  h = hash_doubles(h, running_mean);
  h = hash_doubles(h, running_var);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Parameters init_network(const NetworkConfig& config, std::uint64_t seed) {
  const ParameterLayout layout(config);
  Parameters p;
  p.config = config;
  p.init_seed = seed;
  p.values.assign(layout.total, 0.0);
  p.running_mean.assign(layout.stat_total, 0.0);
  p.running_var.assign(layout.stat_total, 1.0);

  std::mt19937_64 rng(derive_seed(seed, "init"));
  auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) p.values[off + i] = uniform(rng, -bound, bound);
  };
  for (const auto& c : layout.conv)
    fill(c.weight, c.out_channels * c.in_channels * c.kernel, c.in_channels * c.kernel);
  for (const auto& n : layout.norm)
    std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(n.gamma), n.channels, 1.0);
  fill(layout.fc1.weight, layout.fc1.in * layout.fc1.out, layout.fc1.in);
  fill(layout.fc2.weight, layout.fc2.in * layout.fc2.out, layout.fc2.in);
  return p;
}

// ---- network ----------------------------------------------------------------------

namespace {

template <class T>
void check_finite(const std::vector<T>& v, const std::string& layer) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw Error("non-finite activation in layer " + layer + " at index " + std::to_string(i));
}

template <class T>
void leaky(const std::vector<T>& in, std::vector<T>& out, T slope) {
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
}

template <class T>
void leaky_backward(const std::vector<T>& pre, T* grad, T slope) {
  for (std::size_t i = 0; i < pre.size(); ++i)
    if (!(pre[i] > T(0))) grad[i] *= slope;
}

}  // namespace

template <class T>
Network<T>::Network(const NetworkConfig& config, kernels::Backend backend)
    : config_(config), layout_(config), backend_(backend), blocks_(config.num_blocks()) {}

template <class T>
void Network<T>::load(const Parameters& params) {
  if (!(params.config == config_)) throw Error("parameters belong to a different network shape");
  if (params.values.size() != layout_.total) throw Error("parameter vector has the wrong size");
  w_.assign(params.values.begin(), params.values.end());
  run_mean_.assign(params.running_mean.begin(), params.running_mean.end());
  run_var_.assign(params.running_var.begin(), params.running_var.end());
}

template <class T>
const std::vector<T>& Network<T>::forward(const T* x, std::size_t batch, ForwardMode mode) {
  if (w_.empty()) throw Error("network weights not loaded");
  if (batch == 0) throw Error("empty batch");
  if (mode == ForwardMode::train && batch * layout_.norm.front().length < 2)
    throw Error("train-mode batch normalization needs more than one value per channel");
  batch_ = batch;
  const T slope = static_cast<T>(config_.leaky_slope);
  input_.assign(x, x + batch * config_.input_channels * config_.input_length);
  check_finite(input_, "input");

  const T* cur = input_.data();
  for (std::size_t p = 0; p < blocks_.size(); ++p) {
    Block& blk = blocks_[p];
    for (std::size_t j = 0; j < 2; ++j) {
      const auto& c = layout_.conv[2 * p + j];
      const kernels::ConvShape s{batch, c.in_channels, c.out_channels, c.length, c.kernel};
      blk.pre[j].resize(batch * c.out_channels * c.length);
      kernels::conv1d_forward<T>(backend_, s, cur, w_.data() + c.weight, w_.data() + c.bias,
                                 blk.pre[j].data());
      check_finite(blk.pre[j], "conv" + std::to_string(2 * p + j + 1));
      leaky(blk.pre[j], blk.post[j], slope);
      cur = blk.post[j].data();
    }

    const auto& n = layout_.norm[p];
    const std::size_t C = n.channels, Lp = n.length, L = Lp * config_.pool_size;
    const std::size_t P = config_.pool_size;
    blk.pooled.resize(batch * C * Lp);
    blk.argmax.resize(batch * C * Lp);
    for (std::size_t bc = 0; bc < batch * C; ++bc) {
      const T* src = cur + bc * L;
      for (std::size_t t = 0; t < Lp; ++t) {
        std::size_t best = t * P;
        for (std::size_t q = 1; q < P; ++q)
          if (src[t * P + q] > src[best]) best = t * P + q;
        blk.pooled[bc * Lp + t] = src[best];
        blk.argmax[bc * Lp + t] = static_cast<std::uint32_t>(best);
      }
    }

    const T* gamma = w_.data() + n.gamma;
    const T* beta = w_.data() + n.beta;
    blk.out.resize(blk.pooled.size());
    blk.mean.resize(C);
    blk.var.resize(C);
    blk.invstd.resize(C);
    if (mode == ForwardMode::train) {
      blk.xhat.resize(blk.pooled.size());
      const double count = static_cast<double>(batch * Lp);
      for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < Lp; ++t) sum += blk.pooled[(b * C + c) * Lp + t];
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < Lp; ++t) {
            const double d = blk.pooled[(b * C + c) * Lp + t] - mean;
            sq += d * d;
          }
        const double var = sq / count;
        blk.mean[c] = static_cast<T>(mean);
        blk.var[c] = static_cast<T>(var);
        blk.invstd[c] = static_cast<T>(1.0 / std::sqrt(var + config_.batchnorm_eps));
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < Lp; ++t) {
            const std::size_t i = (b * C + c) * Lp + t;
            blk.xhat[i] = (blk.pooled[i] - blk.mean[c]) * blk.invstd[c];
            blk.out[i] = gamma[c] * blk.xhat[i] + beta[c];
          }
      }
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        const T mean = run_mean_[n.stat_offset + c];
        const T inv = static_cast<T>(
            1.0 / std::sqrt(static_cast<double>(run_var_[n.stat_offset + c]) + config_.batchnorm_eps));
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < Lp; ++t) {
            const std::size_t i = (b * C + c) * Lp + t;
            blk.out[i] = gamma[c] * ((blk.pooled[i] - mean) * inv) + beta[c];
          }
      }
    }
    check_finite(blk.out, "bn" + std::to_string(p + 1));
    cur = blk.out.data();
  }

  const auto& f1 = layout_.fc1;
  fc1_pre_.resize(batch * f1.out);
  kernels::linear_forward<T>(backend_, {batch, f1.in, f1.out}, cur, w_.data() + f1.weight,
                             w_.data() + f1.bias, fc1_pre_.data());
  check_finite(fc1_pre_, "fc1");
  leaky(fc1_pre_, fc1_post_, slope);

  const auto& f2 = layout_.fc2;
  out_.resize(batch * f2.out);
  kernels::linear_forward<T>(backend_, {batch, f2.in, f2.out}, fc1_post_.data(),
                             w_.data() + f2.weight, w_.data() + f2.bias, out_.data());
  check_finite(out_, "fc2");
  have_train_cache_ = mode == ForwardMode::train;
  return out_;
}

template <class T>
void Network<T>::backward(const T* dout, std::vector<T>& grad) {
  if (!have_train_cache_) throw Error("backward requires a train-mode forward pass");
  const std::size_t B = batch_;
  const T slope = static_cast<T>(config_.leaky_slope);
  grad.assign(layout_.total, T(0));

  const auto& f2 = layout_.fc2;
  kernels::linear_backward_weights<T>(backend_, {B, f2.in, f2.out}, fc1_post_.data(), dout,
                                      grad.data() + f2.weight, grad.data() + f2.bias);
  scratch_a_.resize(B * f2.in);
  kernels::linear_backward_input<T>(backend_, {B, f2.in, f2.out}, dout, w_.data() + f2.weight,
                                    scratch_a_.data());
  leaky_backward(fc1_pre_, scratch_a_.data(), slope);

  const auto& f1 = layout_.fc1;
  const T* fc1_in = blocks_.back().out.data();
  kernels::linear_backward_weights<T>(backend_, {B, f1.in, f1.out}, fc1_in, scratch_a_.data(),
                                      grad.data() + f1.weight, grad.data() + f1.bias);
  scratch_b_.resize(B * f1.in);
  kernels::linear_backward_input<T>(backend_, {B, f1.in, f1.out}, scratch_a_.data(),
                                    w_.data() + f1.weight, scratch_b_.data());
  // scratch_b_ now holds d(out of last block)

  for (std::size_t pi = blocks_.size(); pi-- > 0;) {
    Block& blk = blocks_[pi];
    const auto& n = layout_.norm[pi];
    const std::size_t C = n.channels, Lp = n.length, L = Lp * config_.pool_size;
    const T* gamma = w_.data() + n.gamma;
    T* dgamma = grad.data() + n.gamma;
    T* dbeta = grad.data() + n.beta;
    const double count = static_cast<double>(B * Lp);

    // batch norm: scratch_b_ (dy) -> scratch_a_ (d pooled)
    scratch_a_.resize(B * C * Lp);
    for (std::size_t c = 0; c < C; ++c) {
      double sdy = 0.0, sdyx = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Lp; ++t) {
          const std::size_t i = (b * C + c) * Lp + t;
          sdy += scratch_b_[i];
          sdyx += static_cast<double>(scratch_b_[i]) * blk.xhat[i];
        }
      dgamma[c] = static_cast<T>(sdyx);
      dbeta[c] = static_cast<T>(sdy);
      const double g = gamma[c], inv = blk.invstd[c];
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < Lp; ++t) {
          const std::size_t i = (b * C + c) * Lp + t;
          const double dxhat = g * scratch_b_[i];
          scratch_a_[i] =
              static_cast<T>(inv / count * (count * dxhat - g * sdy - blk.xhat[i] * g * sdyx));
        }
    }

    // max pool: scratch_a_ -> scratch_b_ (d post[1])
    scratch_b_.assign(B * C * L, T(0));
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t t = 0; t < Lp; ++t)
        scratch_b_[bc * L + blk.argmax[bc * Lp + t]] += scratch_a_[bc * Lp + t];

    for (std::size_t j = 2; j-- > 0;) {
      const std::size_t li = 2 * pi + j;
      const auto& c = layout_.conv[li];
      const kernels::ConvShape s{B, c.in_channels, c.out_channels, c.length, c.kernel};
      leaky_backward(blk.pre[j], scratch_b_.data(), slope);
      const T* conv_in = j == 1 ? blk.post[0].data()
                         : pi > 0 ? blocks_[pi - 1].out.data()
                                  : input_.data();
      kernels::conv1d_backward_weights<T>(backend_, s, conv_in, scratch_b_.data(),
                                          grad.data() + c.weight, grad.data() + c.bias);
      if (li == 0) break;
      scratch_a_.resize(B * c.in_channels * c.length);
      kernels::conv1d_backward_input<T>(backend_, s, scratch_b_.data(), w_.data() + c.weight,
                                        scratch_a_.data());
      std::swap(scratch_a_, scratch_b_);
    }
  }
}

template <class T>
void Network<T>::update_running_stats(Parameters& params) const {
  if (!have_train_cache_) throw Error("no train-mode batch statistics to blend");
  const double m = config_.batchnorm_momentum;
  for (std::size_t p = 0; p < blocks_.size(); ++p) {
    const auto& n = layout_.norm[p];
    const double count = static_cast<double>(batch_ * n.length);
    for (std::size_t c = 0; c < n.channels; ++c) {
      const std::size_t k = n.stat_offset + c;
      const double unbiased = static_cast<double>(blocks_[p].var[c]) * count / (count - 1.0);
      params.running_mean[k] = (1.0 - m) * params.running_mean[k] + m * blocks_[p].mean[c];
      params.running_var[k] = (1.0 - m) * params.running_var[k] + m * unbiased;
    }
  }
}

template class Network<float>;
template class Network<double>;

template <class T>
void pack_frames(std::span<const FrameExample* const> frames, std::size_t length,
                 std::vector<T>& out) {
  out.resize(frames.size() * kFrameChannels * length);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const FrameExample& f = *frames[i];
    if (f.length != length || f.data.size() != kFrameChannels * length)
      throw Error("frame length " + std::to_string(f.length) + " does not match network input " +
                  std::to_string(length));
    std::copy(f.data.begin(), f.data.end(),
              out.begin() + static_cast<std::ptrdiff_t>(i * kFrameChannels * length));
  }
}

template void pack_frames<float>(std::span<const FrameExample* const>, std::size_t,
                                 std::vector<float>&);
template void pack_frames<double>(std::span<const FrameExample* const>, std::size_t,
                                  std::vector<double>&);

Precision parse_precision(const std::string& s) {
  if (s == "f64" || s == "double" || s == "64") return Precision::f64;
  if (s == "f32" || s == "float" || s == "32") return Precision::f32;
  throw Error("unknown precision '" + s + "' (expected f64 or f32)");
}

std::string to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

// ---- embedder ---------------------------------------------------------------------

Embedder::Embedder(Parameters params, Precision precision, std::size_t chunk)
    : params_(std::move(params)), precision_(precision), chunk_(std::max<std::size_t>(chunk, 1)) {
  params_.validate();
}

namespace {

template <class T>
std::vector<EmbeddingPoint> embed_impl(const Parameters& params,
                                       std::span<const FrameExample* const> frames,
                                       std::size_t chunk) {
  Network<T> net(params.config);
  net.load(params);
  const std::size_t D = params.config.output_dim;
  std::vector<EmbeddingPoint> out;
  out.reserve(frames.size());
  std::vector<T> buf;
  for (std::size_t start = 0; start < frames.size(); start += chunk) {
    const std::size_t n = std::min(chunk, frames.size() - start);
    pack_frames<T>(frames.subspan(start, n), params.config.input_length, buf);
    const auto& y = net.forward(buf.data(), n, ForwardMode::infer);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(y.begin() + i * D, y.begin() + (i + 1) * D);
  }
  return out;
}

}  // namespace

std::vector<EmbeddingPoint> Embedder::embed(std::span<const FrameExample* const> frames) const {
  if (frames.empty()) return {};
  return precision_ == Precision::f64 ? embed_impl<double>(params_, frames, chunk_)
                                      : embed_impl<float>(params_, frames, chunk_);
}

std::vector<EmbeddingPoint> Embedder::embed(std::span<const FrameExample> frames) const {
  std::vector<const FrameExample*> ptrs;
  ptrs.reserve(frames.size());
  for (const auto& f : frames) ptrs.push_back(&f);
  return embed(std::span<const FrameExample* const>(ptrs));
}

EmbeddingPoint Embedder::embed(const FrameExample& frame) const {
  const FrameExample* p = &frame;
  return embed(std::span<const FrameExample* const>(&p, 1)).front();
}

}  // namespace tweak
