#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tweak/kernels.hpp"
#include "tweak/signal_io.hpp"

namespace tweak {

using EmbeddingPoint = std::vector<double>;

inline constexpr std::size_t kEmbeddingDim = 12;
inline constexpr std::size_t kVanillaClasses = 10;

struct ConvLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  bool operator==(const ConvLayerSpec&) const = default;
};

// conv, leaky, conv, leaky, maxpool, batchnorm for every pair of conv layers,
// then flatten -> FC(hidden) -> leaky -> FC(output_dim).
struct NetworkConfig {
  std::size_t input_channels = kFrameChannels;
  std::size_t input_length = kFrameLength;
  std::vector<ConvLayerSpec> conv_layers{{32, 7}, {32, 5}, {64, 5}, {64, 3}};
  std::size_t pool_size = 2;
  std::size_t hidden = 128;
  std::size_t output_dim = kEmbeddingDim;
  double leaky_slope = 0.01;
  double batchnorm_momentum = 0.1;
  double batchnorm_eps = 1e-5;

  // Structural checks shared by every variant.
  void validate() const;
  // Four conv layers and a 12-wide embedding.
  bool is_reference_shape() const;
  std::size_t num_blocks() const { return conv_layers.size() / 2; }
  std::size_t flat_features() const;

  static NetworkConfig reference();
  static NetworkConfig vanilla();
  // Two conv layers, 4-d output, 16-sample input; sized for finite-difference checks.
  static NetworkConfig reduced();

  bool operator==(const NetworkConfig&) const = default;
};

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

// Offsets of every trainable tensor in the flat parameter vector.
struct ParameterLayout {
  struct Conv {
    std::size_t weight, bias, in_channels, out_channels, kernel, length;
  };
  struct Norm {
    std::size_t gamma, beta, channels, length, stat_offset;
  };
  struct Dense {
    std::size_t weight, bias, in, out;
  };
  std::vector<Conv> conv;
  std::vector<Norm> norm;
  Dense fc1{}, fc2{};
  std::size_t total = 0;
  std::size_t stat_total = 0;  // running mean/var length
  std::vector<TensorSlot> slots;

  explicit ParameterLayout(const NetworkConfig& config);
};

struct Parameters {
  NetworkConfig config;
  std::vector<double> values;  // trainable, in layout order
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::uint64_t init_seed = 0;
  std::string version = "tweak-net/1";

  void validate() const;
  // Content hash of config, weights and running statistics.
  std::string model_version() const;
  bool operator==(const Parameters&) const = default;
};

Parameters init_network(const NetworkConfig& config, std::uint64_t seed);

enum class ForwardMode { train, infer };

// Batch workspace for one precision. Holds activations from the last forward
// pass so `backward` can run against them.
template <class T>
class Network {
 public:
  explicit Network(const NetworkConfig& config, kernels::Backend backend = kernels::Backend::parallel);

  const NetworkConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }

  // Copies weights and running statistics into this precision.
  void load(const Parameters& params);

  // x is [batch][channels][length]. Returns [batch][output_dim].
  const std::vector<T>& forward(const T* x, std::size_t batch, ForwardMode mode);

  // Gradient of sum_b <dout_b, out_b> w.r.t. every trainable value, in layout order.
  // Requires a preceding train-mode forward.
  void backward(const T* dout, std::vector<T>& grad);

  // Blends the last train-mode batch statistics into params' running statistics.
  void update_running_stats(Parameters& params) const;

 private:
  struct Block {
    std::vector<T> conv_in[2], pre[2], post[2];
    std::vector<std::uint32_t> argmax;
    std::vector<T> pooled, xhat, out;
    std::vector<T> mean, var, invstd;
  };

  NetworkConfig config_;
  ParameterLayout layout_;
  kernels::Backend backend_;
  std::vector<T> w_;
  std::vector<T> run_mean_, run_var_;
  std::size_t batch_ = 0;
  bool have_train_cache_ = false;
  std::vector<Block> blocks_;
  std::vector<T> input_, fc1_pre_, fc1_post_, out_;
  std::vector<T> scratch_a_, scratch_b_;
};

// Converts frames into a contiguous [batch][2][length] buffer.
template <class T>
void pack_frames(std::span<const FrameExample* const> frames, std::size_t length, std::vector<T>& out);

enum class Precision { f64, f32 };
Precision parse_precision(const std::string& s);
std::string to_string(Precision p);

// Infer-mode embedding f(.) over frozen parameters.
class Embedder {
 public:
  explicit Embedder(Parameters params, Precision precision = Precision::f64,
                    std::size_t chunk = 256);

  const Parameters& params() const { return params_; }
  std::size_t dim() const { return params_.config.output_dim; }

  EmbeddingPoint embed(const FrameExample& frame) const;
  std::vector<EmbeddingPoint> embed(std::span<const FrameExample> frames) const;
  std::vector<EmbeddingPoint> embed(std::span<const FrameExample* const> frames) const;

 private:
  Parameters params_;
  Precision precision_;
  std::size_t chunk_;
};

}  // namespace tweak
