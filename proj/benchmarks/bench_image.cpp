#include <benchmark/benchmark.h>

#include "dcnet/image.hpp"
#include "dcnet/rng.hpp"

using namespace dcnet;

namespace {

ImageBuffer noise_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  ImageBuffer img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<std::size_t>(h * w * 3));
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

void BM_resize_to_input(benchmark::State& state) {
  auto img = noise_image(450, 450, 21);
  for (auto _ : state) benchmark::DoNotOptimize(resize_bilinear(img, 224, 224));
}
BENCHMARK(BM_resize_to_input);

void BM_center_square_crop(benchmark::State& state) {
  auto img = noise_image(450, 600, 22);
  for (auto _ : state) benchmark::DoNotOptimize(center_square_crop(img));
}
BENCHMARK(BM_center_square_crop);

void BM_rotate(benchmark::State& state) {
  auto img = noise_image(450, 600, 23);
  TransformDesc t;
  t.kind = TransformDesc::Kind::kRotation;
  t.angle_deg = 17.5;
  for (auto _ : state) benchmark::DoNotOptimize(apply_transform(img, t));
}
BENCHMARK(BM_rotate);

void BM_hflip(benchmark::State& state) {
  auto img = noise_image(450, 600, 24);
  TransformDesc t;
  t.kind = TransformDesc::Kind::kHFlip;
  for (auto _ : state) benchmark::DoNotOptimize(apply_transform(img, t));
}
BENCHMARK(BM_hflip);

}  // namespace
