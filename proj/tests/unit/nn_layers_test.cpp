#include <cmath>

#include "doctest.h"
#include "dcnet/nn.hpp"
#include "dcnet/ops.hpp"

using namespace dcnet;

namespace {
std::int64_t out_side(std::int64_t h, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (h + 2 * p - k) / s + 1;
}
}  // namespace

TEST_SUITE_BEGIN("nn_layers");

TEST_CASE("conv2d 3x3 of ones counts window overlaps") {
  auto x = ones<float>({1, 1, 4, 4});
  auto w = ones<float>({1, 1, 3, 3});
  auto y = conv2d<float>(x, w, 1, 1);
  REQUIRE(y->shape == std::vector<std::int64_t>{1, 1, 4, 4});
  auto at = [&](std::int64_t r, std::int64_t c) { return y->data[r * 4 + c]; };
  CHECK(at(0, 0) == 4.f);  // corner
  CHECK(at(0, 1) == 6.f);  // edge
  CHECK(at(1, 1) == 9.f);  // interior
  CHECK(at(3, 3) == 4.f);
}

TEST_CASE("conv2d 1x1 identity weight is a channel mix") {
  auto x = make_tensor<float>({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto w = make_tensor<float>({2, 2, 1, 1}, {1, 0, 0, 1});  // identity mix
  auto y = conv2d<float>(x, w, 1, 0);
  CHECK(y->data == x->data);
}

TEST_CASE("conv2d rejects channel mismatch") {
  auto x = ones<float>({1, 3, 4, 4});
  auto w = ones<float>({1, 2, 3, 3});
  CHECK_THROWS_AS((void)conv2d<float>(x, w, 1, 0), ShapeError);
}

TEST_CASE("conv and pool output sides match the floor formula") {
  struct Case {
    std::int64_t h, k, s, p;
  };
  for (const Case& c : {Case{224, 7, 2, 3}, Case{56, 1, 1, 0}, Case{56, 3, 1, 1},
                        Case{9, 3, 2, 1}, Case{11, 5, 3, 0}}) {
    auto x = ones<float>({1, 1, c.h, c.h});
    auto w = ones<float>({1, 1, c.k, c.k});
    auto y = conv2d<float>(x, w, c.s, c.p);
    CHECK(y->shape[2] == out_side(c.h, c.k, c.s, c.p));
    CHECK(y->shape[3] == out_side(c.h, c.k, c.s, c.p));
  }
}

TEST_CASE("stem downsampling trace 224 -> 112 -> 56") {
  CHECK(out_side(224, 7, 2, 3) == 112);   // stem conv
  CHECK(out_side(112, 3, 2, 1) == 56);    // stem max pool
  CHECK(out_side(56, 2, 2, 0) == 28);     // transition pool
  CHECK(out_side(28, 2, 2, 0) == 14);
}

TEST_CASE("batch_norm training output has zero mean, unit variance") {
  auto x = zeros<double>({2, 3, 4, 4});
  Rng rng(17);
  for (auto& v : x->data) v = 2.0 * rng.normal() + 1.5;
  auto p = make_batch_norm<double>(3);
  auto y = batch_norm<double>(x, p, Mode::kTrain);
  const std::int64_t plane = 16, sample = 3 * plane, m = 2 * plane;
  for (std::int64_t j = 0; j < 3; ++j) {
    double mu = 0, var = 0;
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t q = 0; q < plane; ++q) mu += y->data[i * sample + j * plane + q];
    mu /= m;
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t q = 0; q < plane; ++q) {
        double d = y->data[i * sample + j * plane + q] - mu;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batch_norm affine parameters shift and scale") {
  auto x = zeros<double>({2, 1, 3, 3});
  Rng rng(18);
  for (auto& v : x->data) v = rng.normal();
  auto p = make_batch_norm<double>(1);
  p.gamma->data[0] = 2.0;
  p.beta->data[0] = 3.0;
  auto y = batch_norm<double>(x, p, Mode::kTrain);
  double mu = 0;
  for (double v : y->data) mu += v;
  mu /= static_cast<double>(y->data.size());
  double var = 0;
  for (double v : y->data) var += (v - mu) * (v - mu);
  var /= static_cast<double>(y->data.size());
  CHECK(mu == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(var == doctest::Approx(4.0).epsilon(1e-3));
}

TEST_CASE("batch_norm running stats follow the update rule") {
  auto x = make_tensor<double>({1, 1, 2, 2}, {1.0, 2.0, 3.0, 6.0});
  auto p = make_batch_norm<double>(1);
  (void)batch_norm<double>(x, p, Mode::kTrain);
  const double mu = 3.0;
  const double var = (4.0 + 1.0 + 0.0 + 9.0) / 4.0;  // biased
  CHECK(p.running_mean->data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * mu).epsilon(1e-12));
  CHECK(p.running_var->data[0] == doctest::Approx(0.9 * 1.0 + 0.1 * var).epsilon(1e-12));
}

TEST_CASE("batch_norm inference with batch stats matches training output") {
  auto x = zeros<double>({2, 2, 3, 3});
  Rng rng(19);
  for (auto& v : x->data) v = rng.normal();
  auto p = make_batch_norm<double>(2);
  auto y_train = batch_norm<double>(x, p, Mode::kTrain);
  // plant exact batch statistics as the running ones
  const std::int64_t plane = 9, sample = 18, m = 18;
  for (std::int64_t j = 0; j < 2; ++j) {
    double mu = 0;
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t q = 0; q < plane; ++q) mu += x->data[i * sample + j * plane + q];
    mu /= m;
    double var = 0;
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t q = 0; q < plane; ++q) {
        double d = x->data[i * sample + j * plane + q] - mu;
        var += d * d;
      }
    p.running_mean->data[j] = mu;
    p.running_var->data[j] = var / m;
  }
  auto y_inf = batch_norm<double>(x, p, Mode::kInference);
  for (std::size_t i = 0; i < y_train->data.size(); ++i)
    CHECK(y_inf->data[i] == doctest::Approx(y_train->data[i]).epsilon(1e-9));
}

TEST_CASE("batch_norm inference leaves running stats untouched") {
  auto x = ones<double>({1, 1, 2, 2});
  auto p = make_batch_norm<double>(1);
  (void)batch_norm<double>(x, p, Mode::kInference);
  CHECK(p.running_mean->data[0] == 0.0);
  CHECK(p.running_var->data[0] == 1.0);
}

TEST_CASE("relu clamps negatives only") {
  auto x = make_tensor<float>({5}, {-2.f, -0.f, 0.f, 0.5f, 3.f});
  auto y = relu<float>(x);
  CHECK(y->data == std::vector<float>{0.f, 0.f, 0.f, 0.5f, 3.f});
}

TEST_CASE("avg_pool2x2 averages each window") {
  auto x = make_tensor<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto y = avg_pool2x2<float>(x);
  REQUIRE(y->shape == std::vector<std::int64_t>{1, 1, 1, 1});
  CHECK(y->data[0] == 2.5f);
}

TEST_CASE("avg_pool2x2 rejects odd sides") {
  auto x = ones<float>({1, 1, 3, 4});
  CHECK_THROWS_AS((void)avg_pool2x2<float>(x), ShapeError);
}

TEST_CASE("global_avg_pool of a constant plane is the constant") {
  auto x = full<float>({2, 3, 5, 5}, 1.25f);
  auto y = global_avg_pool<float>(x);
  REQUIRE(y->shape == std::vector<std::int64_t>{2, 3});
  for (float v : y->data) CHECK(v == 1.25f);
}

TEST_CASE("max_pool2d takes window maxima, padding never wins") {
  auto x = make_tensor<float>({1, 1, 2, 2}, {-1.f, -2.f, -3.f, -4.f});
  auto y = max_pool2d<float>(x, 3, 2, 1);
  REQUIRE(y->shape == std::vector<std::int64_t>{1, 1, 1, 1});
  CHECK(y->data[0] == -1.f);  // all inputs negative; zero padding must not win
}

TEST_CASE("max_pool2d hand case") {
  auto x = make_tensor<float>({1, 1, 4, 4},
                              {1, 3, 2, 4, 5, 7, 6, 8, 4, 2, 9, 1, 0, 3, 5, 2});
  auto y = max_pool2d<float>(x, 2, 2, 0);
  CHECK(y->data == std::vector<float>{7.f, 8.f, 4.f, 9.f});
}

TEST_CASE("concat then slice recovers the parts") {
  Rng rng(23);
  auto a = zeros<float>({2, 3, 2, 2});
  auto b = zeros<float>({2, 5, 2, 2});
  for (auto& v : a->data) v = static_cast<float>(rng.normal());
  for (auto& v : b->data) v = static_cast<float>(rng.normal());
  auto cat = concat_channels<float>({a, b});
  REQUIRE(cat->shape == std::vector<std::int64_t>{2, 8, 2, 2});
  CHECK(slice_channels<float>(cat, 0, 3)->data == a->data);
  CHECK(slice_channels<float>(cat, 3, 8)->data == b->data);
}

TEST_CASE("concat backward routes gradients to both inputs") {
  TapeT<double> tape;
  auto a = ones<double>({1, 2, 1, 1}, true);
  auto b = ones<double>({1, 3, 1, 1}, true);
  auto loss = sum_all<double>(concat_channels<double>({a, b}, &tape), &tape);
  tape.backward(loss);
  for (double g : a->grad) CHECK(g == 1.0);
  for (double g : b->grad) CHECK(g == 1.0);
}

TEST_CASE("concat rejects mismatched spatial shapes") {
  auto a = ones<float>({1, 2, 2, 2});
  auto b = ones<float>({1, 2, 3, 3});
  CHECK_THROWS_AS((void)concat_channels<float>({a, b}), ShapeError);
}

TEST_CASE("linear hand case") {
  auto x = make_tensor<double>({1, 2}, {1.0, 2.0});
  auto w = make_tensor<double>({2, 2}, {0.0, 2.0, 2.0, 3.0});
  auto b = zeros<double>({2});
  auto y = linear<double>(x, w, b);
  CHECK(y->data[0] == 4.0);
  CHECK(y->data[1] == 8.0);
}

TEST_CASE("linear with identity weight adds the bias") {
  auto x = make_tensor<double>({1, 2}, {5.0, -1.0});
  auto w = make_tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto b = make_tensor<double>({2}, {0.5, 0.25});
  auto y = linear<double>(x, w, b);
  CHECK(y->data[0] == 5.5);
  CHECK(y->data[1] == -0.75);
}

TEST_CASE("he_init is seed-deterministic") {
  auto a = he_init<float>({8, 4, 3, 3}, 36, 77);
  auto b = he_init<float>({8, 4, 3, 3}, 36, 77);
  CHECK(a->data == b->data);
  auto c = he_init<float>({8, 4, 3, 3}, 36, 78);
  CHECK(a->data != c->data);
}

TEST_CASE("he_init spread matches sqrt(2/fan_in)") {
  const std::int64_t fan = 50, n = 100000;
  auto t = he_init<double>({n}, fan, 5);
  double mu = 0;
  for (double v : t->data) mu += v;
  mu /= n;
  double var = 0;
  for (double v : t->data) var += (v - mu) * (v - mu);
  var /= n;
  const double expect = std::sqrt(2.0 / static_cast<double>(fan));
  CHECK(std::abs(mu) < 0.05 * expect);
  CHECK(std::sqrt(var) == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("he_init shrinks with fan-in") {
  auto wide = he_init<double>({4096}, 4096, 9);
  double mx = 0;
  for (double v : wide->data) mx = std::max(mx, std::abs(v));
  CHECK(mx < 0.2);  // sigma ~ 0.022, 6-sigma bound with margin
}

TEST_SUITE_END();
