// Serial reference vs OpenMP kernels, plus a full forward/backward step.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tweak/kernels.hpp"
#include "tweak/network.hpp"

using namespace tweak;

namespace {

template <class T>
std::vector<T> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

// Second conv of the first block at batch 64: 32 -> 32 channels, length 128, k5.
template <class T>
void conv_forward(benchmark::State& state, kernels::Backend be) {
  const kernels::ConvShape s{64, 32, 32, 128, 5};
  const auto x = noise<T>(s.batch * s.in_channels * s.length, 1);
  const auto w = noise<T>(s.out_channels * s.in_channels * s.kernel, 2);
  const auto b = noise<T>(s.out_channels, 3);
  std::vector<T> y(s.batch * s.out_channels * s.length);
  for (auto _ : state) {
    kernels::conv1d_forward(be, s, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

template <class T>
void conv_backward(benchmark::State& state, kernels::Backend be) {
  const kernels::ConvShape s{64, 32, 32, 128, 5};
  const auto x = noise<T>(s.batch * s.in_channels * s.length, 1);
  const auto w = noise<T>(s.out_channels * s.in_channels * s.kernel, 2);
  const auto dy = noise<T>(s.batch * s.out_channels * s.length, 3);
  std::vector<T> dx(x.size()), dw(w.size()), db(s.out_channels);
  for (auto _ : state) {
    kernels::conv1d_backward_input(be, s, dy.data(), w.data(), dx.data());
    kernels::conv1d_backward_weights(be, s, x.data(), dy.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

// FC(2048 -> 128) at batch 64.
template <class T>
void linear_forward(benchmark::State& state, kernels::Backend be) {
  const kernels::LinearShape s{64, 2048, 128};
  const auto x = noise<T>(s.batch * s.in, 1);
  const auto w = noise<T>(s.out * s.in, 2);
  const auto b = noise<T>(s.out, 3);
  std::vector<T> y(s.batch * s.out);
  for (auto _ : state) {
    kernels::linear_forward(be, s, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

template <class T>
void train_step(benchmark::State& state, kernels::Backend be) {
  const auto params = init_network(NetworkConfig::reference(), 1);
  Network<T> net(params.config, be);
  net.load(params);
  const std::size_t batch = 64;
  const auto x = noise<T>(batch * kFrameChannels * kFrameLength, 4);
  const std::vector<T> dout(batch * params.config.output_dim, T(0.01));
  std::vector<T> grad;
  for (auto _ : state) {
    net.forward(x.data(), batch, ForwardMode::train);
    net.backward(dout.data(), grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}

constexpr auto S = kernels::Backend::serial;
constexpr auto P = kernels::Backend::parallel;

}  // namespace

#define TWEAK_BENCH(fn, T, unit)                                               \
  void fn##_##T##_serial(benchmark::State& s) { fn<T>(s, S); }                 \
  void fn##_##T##_parallel(benchmark::State& s) { fn<T>(s, P); }               \
  BENCHMARK(fn##_##T##_serial)->Unit(unit);                                    \
  BENCHMARK(fn##_##T##_parallel)->Unit(unit);

TWEAK_BENCH(conv_forward, float, benchmark::kMicrosecond)
TWEAK_BENCH(conv_forward, double, benchmark::kMicrosecond)
TWEAK_BENCH(conv_backward, float, benchmark::kMicrosecond)
TWEAK_BENCH(linear_forward, float, benchmark::kMicrosecond)
TWEAK_BENCH(train_step, float, benchmark::kMillisecond)
TWEAK_BENCH(train_step, double, benchmark::kMillisecond)

BENCHMARK_MAIN();
