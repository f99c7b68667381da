#include <benchmark/benchmark.h>

#include "dcnet/nn.hpp"
#include "dcnet/ops.hpp"

using namespace dcnet;

namespace {

TensorPtr randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
  auto t = zeros<float>(std::move(shape));
  Rng rng(seed);
  for (auto& v : t->data) v = static_cast<float>(rng.normal());
  return t;
}

void BM_matmul(benchmark::State& state) {
  const auto n = state.range(0);
  auto a = randn({n, n}, 1);
  auto b = randn({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul<float>(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_conv3x3(benchmark::State& state) {
  const auto c = state.range(0);
  auto x = randn({4, c, 28, 28}, 3);
  auto w = randn({c, c, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d<float>(x, w, 1, 1));
}
BENCHMARK(BM_conv3x3)->Arg(16)->Arg(48);

void BM_conv1x1(benchmark::State& state) {
  const auto c = state.range(0);
  auto x = randn({4, c, 28, 28}, 5);
  auto w = randn({c / 2, c, 1, 1}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d<float>(x, w, 1, 0));
}
BENCHMARK(BM_conv1x1)->Arg(64)->Arg(192);

void BM_batch_norm_train(benchmark::State& state) {
  auto x = randn({8, 64, 28, 28}, 7);
  auto bn = make_batch_norm<float>(64);
  for (auto _ : state) benchmark::DoNotOptimize(batch_norm<float>(x, bn, Mode::kTrain));
}
BENCHMARK(BM_batch_norm_train);

void BM_max_pool(benchmark::State& state) {
  auto x = randn({8, 24, 112, 112}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(max_pool2d<float>(x, 3, 2, 1));
}
BENCHMARK(BM_max_pool);

void BM_concat(benchmark::State& state) {
  std::vector<TensorPtr> xs;
  for (int i = 0; i < 6; ++i) xs.push_back(randn({8, 12, 28, 28}, 100 + i));
  for (auto _ : state) benchmark::DoNotOptimize(concat_channels<float>(xs));
}
BENCHMARK(BM_concat);

}  // namespace

BENCHMARK_MAIN();
