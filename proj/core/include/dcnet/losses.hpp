#pragma once

#include "dcnet/tape.hpp"

namespace dcnet {

// Per-class feature centers. Updated only by center_update, never by
// backward, and never touched by the optimizer.
template <typename T>
struct CenterBankT {
  TensorPtrT<T> centers;  // [num_classes, feature_dim]
  T alpha = T(0.5);       // update rate
};
using CenterBank = CenterBankT<float>;

// Centers start at zero.
template <typename T>
CenterBankT<T> make_center_bank(std::int64_t num_classes, std::int64_t dim, T alpha = T(0.5));

struct LossConfig {
  double lambda = 0.8;
  // The center term is a plain batch sum by definition; the mean switch
  // exists for scale-sensitivity experiments only.
  bool center_mean = false;
};

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <typename T>
TensorPtrT<T> softmax_cross_entropy(const TensorPtrT<T>& logits,
                                    const std::vector<std::int64_t>& labels,
                                    TapeT<T>* tape = nullptr);

// Row-wise softmax probabilities, no tape.
template <typename T>
TensorPtrT<T> softmax_probs(const TensorPtrT<T>& logits);

// 1/2 * sum_i ||x_i - c_{y_i}||^2 (batch mean instead when cfg.center_mean).
// Gradient flows to features only.
template <typename T>
TensorPtrT<T> center_loss(const TensorPtrT<T>& features, const std::vector<std::int64_t>& labels,
                          const CenterBankT<T>& bank, const LossConfig& cfg,
                          TapeT<T>* tape = nullptr);

// L = L_s + lambda * L_c. With lambda == 0 the center branch receives no
// gradient at all, so the step is bit-identical to pure softmax training.
template <typename T>
TensorPtrT<T> joint_loss(const TensorPtrT<T>& ls, const TensorPtrT<T>& lc, const LossConfig& cfg,
                         TapeT<T>* tape = nullptr);

// For each class j in the batch: delta_j = sum_{y_i=j}(c_j - x_i) / (1 + n_j),
// c_j <- c_j - alpha * delta_j. Absent classes are unchanged.
template <typename T>
void center_update(CenterBankT<T>& bank, const TensorPtrT<T>& features,
                   const std::vector<std::int64_t>& labels);

}  // namespace dcnet
