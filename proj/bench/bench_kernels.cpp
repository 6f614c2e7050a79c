// Parallel kernels against their serial references on representative shapes.

#include <benchmark/benchmark.h>

#include <random>

#include "nbed/kernels.hpp"
#include "nbed/reference.hpp"

namespace {

nbed::Tensor random_tensor(nbed::Tensor::Shape shape, unsigned seed) {
  nbed::Tensor t(std::move(shape));
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  for (double& v : t.values()) v = dist(rng);
  return t;
}

template <bool Parallel>
void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto x = random_tensor({1, c, side, side}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  const nbed::kernels::Conv2dSpec spec{1, 1, 1};
  for (auto _ : state) {
    auto y = Parallel ? nbed::kernels::conv2d_forward(x, w, nullptr, spec)
                      : nbed::reference::conv2d_forward(x, w, nullptr, spec);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * side * side);
}

template <bool Parallel>
void BM_Depthwise3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto x = random_tensor({1, c, side, side}, 3);
  const auto w = random_tensor({c, 1, 3, 3}, 4);
  const nbed::kernels::Conv2dSpec spec{1, 1, c};
  for (auto _ : state) {
    auto y = Parallel ? nbed::kernels::conv2d_forward(x, w, nullptr, spec)
                      : nbed::reference::conv2d_forward(x, w, nullptr, spec);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto qkv = random_tensor({1, 3 * c, side, side}, 5);
  for (auto _ : state) {
    auto y = Parallel ? nbed::kernels::attention_forward(qkv, c / 32, nullptr)
                      : nbed::reference::attention_forward(qkv, c / 32, nullptr);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_Resize(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, 32, side, side}, 6);
  for (auto _ : state) {
    auto y = Parallel ? nbed::kernels::resize_bilinear_forward(x, 2 * side, 2 * side)
                      : nbed::reference::resize_bilinear_forward(x, 2 * side, 2 * side);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_ChannelNorm(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto x = random_tensor({1, c, side, side}, 7);
  const nbed::Tensor gamma({c}, 1.0), beta({c}, 0.0);
  for (auto _ : state) {
    auto y = Parallel ? nbed::kernels::channel_norm_forward(x, gamma, beta, 1e-6, nullptr, nullptr)
                      : nbed::reference::channel_norm_forward(x, gamma, beta, 1e-6, nullptr, nullptr);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Conv3x3<true>)->Args({32, 128})->Args({96, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3<false>)->Args({32, 128})->Args({96, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise3x3<true>)->Args({192, 40})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise3x3<false>)->Args({192, 40})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<true>)->Args({384, 20})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<false>)->Args({384, 20})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Resize<true>)->Arg(80)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Resize<false>)->Arg(80)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChannelNorm<true>)->Args({96, 80})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChannelNorm<false>)->Args({96, 80})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
