#include <benchmark/benchmark.h>

#include "dcnet/losses.hpp"
#include "dcnet/model.hpp"
#include "dcnet/optim.hpp"

using namespace dcnet;

namespace {

ArchConfig bench_arch() {
  ArchConfig cfg;
  cfg.block_sizes = {2, 4, 4};
  cfg.growth = 12;
  cfg.stem_channels = 24;
  cfg.input_size = 64;
  cfg.freeze.reset();
  return cfg;
}

TensorPtr random_batch(std::int64_t n, std::int64_t side, std::uint64_t seed) {
  auto x = zeros<float>({n, 3, side, side});
  Rng rng(seed);
  for (auto& v : x->data) v = static_cast<float>(rng.normal());
  return x;
}

void BM_forward_inference(benchmark::State& state) {
  DenseNet net(bench_arch(), 11);
  auto x = random_batch(state.range(0), 64, 12);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, Mode::kInference));
}
BENCHMARK(BM_forward_inference)->Arg(1)->Arg(8);

void BM_train_step(benchmark::State& state) {
  DenseNet net(bench_arch(), 13);
  OptimizerConfig ocfg;
  Sgd opt(net.named_parameters(), ocfg);
  auto bank = make_center_bank<float>(7, net.feature_dim());
  LossConfig lcfg;
  auto x = random_batch(8, 64, 14);
  std::vector<std::int64_t> labels{0, 1, 2, 3, 4, 5, 6, 0};
  for (auto _ : state) {
    for (auto& [name, p] : net.named_parameters()) p->zero_grad();
    Tape tape;
    auto out = net.forward(x, Mode::kTrain, &tape);
    auto ls = softmax_cross_entropy<float>(out.logits, labels, &tape);
    auto lc = center_loss<float>(out.features, labels, bank, lcfg, &tape);
    auto loss = joint_loss<float>(ls, lc, lcfg, &tape);
    tape.backward(loss);
    opt.step(0.01);
    center_update<float>(bank, out.features, labels);
    benchmark::DoNotOptimize(loss->item());
  }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

}  // namespace
