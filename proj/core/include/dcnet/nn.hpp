#pragma once

#include "dcnet/rng.hpp"
#include "dcnet/tape.hpp"

namespace dcnet {

enum class Mode { kTrain, kInference };

// Per-channel batch-norm parameters and running statistics. gamma/beta are
// trainable; the running stats are state updated during training forwards.
template <typename T>
struct BatchNormT {
  TensorPtrT<T> gamma;
  TensorPtrT<T> beta;
  TensorPtrT<T> running_mean;
  TensorPtrT<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);
};
using BatchNorm = BatchNormT<float>;

template <typename T>
BatchNormT<T> make_batch_norm(std::int64_t channels);

// x: [N,C,H,W], weight: [out_ch,in_ch,kh,kw], no bias. Cross-correlation,
// zero padding, output side floor((H + 2p - k)/s) + 1.
template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& x, const TensorPtrT<T>& weight, std::int64_t stride,
                     std::int64_t pad, TapeT<T>* tape = nullptr);

template <typename T>
TensorPtrT<T> batch_norm(const TensorPtrT<T>& x, BatchNormT<T>& p, Mode mode,
                         TapeT<T>* tape = nullptr);

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& x, TapeT<T>* tape = nullptr);

// Max pooling; padded cells never win the window max.
template <typename T>
TensorPtrT<T> max_pool2d(const TensorPtrT<T>& x, std::int64_t kernel, std::int64_t stride,
                         std::int64_t pad, TapeT<T>* tape = nullptr);

// 2x2 window, stride 2. H and W must be even.
template <typename T>
TensorPtrT<T> avg_pool2x2(const TensorPtrT<T>& x, TapeT<T>* tape = nullptr);

// [N,C,H,W] -> [N,C], mean over the spatial plane.
template <typename T>
TensorPtrT<T> global_avg_pool(const TensorPtrT<T>& x, TapeT<T>* tape = nullptr);

template <typename T>
TensorPtrT<T> concat_channels(const std::vector<TensorPtrT<T>>& xs, TapeT<T>* tape = nullptr);

// Channel range [begin, end) of a [N,C,H,W] tensor.
template <typename T>
TensorPtrT<T> slice_channels(const TensorPtrT<T>& x, std::int64_t begin, std::int64_t end,
                             TapeT<T>* tape = nullptr);

// x: [N,d], weight: [C,d], bias: [C] -> x * weight^T + bias.
template <typename T>
TensorPtrT<T> linear(const TensorPtrT<T>& x, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias, TapeT<T>* tape = nullptr);

// Draws from normal(0, sqrt(2 / fan_in)).
template <typename T>
void he_init_into(TensorT<T>& t, std::int64_t fan_in, Rng& rng);

template <typename T>
TensorPtrT<T> he_init(const std::vector<std::int64_t>& shape, std::int64_t fan_in,
                      std::uint64_t seed);

}  // namespace dcnet
