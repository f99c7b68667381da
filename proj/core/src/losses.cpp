#include "dcnet/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dcnet {

namespace {

using i64 = std::int64_t;

template <typename T>
void check_labels(const std::vector<i64>& labels, i64 rows, i64 classes, const char* what) {
  if (static_cast<i64>(labels.size()) != rows)
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw ValidationError(std::string(what) + ": label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i) + " outside [0," +
                            std::to_string(classes) + ")");
}

}  // namespace

template <typename T>
CenterBankT<T> make_center_bank(i64 num_classes, i64 dim, T alpha) {
  if (num_classes < 1 || dim < 1) throw ValidationError("center bank: dims must be positive");
  if (!(alpha > T(0)) || alpha > T(1))
    throw ValidationError("center bank: alpha must be in (0,1]");
  CenterBankT<T> bank;
  bank.centers = zeros<T>({num_classes, dim});
  bank.alpha = alpha;
  return bank;
}

template <typename T>
TensorPtrT<T> softmax_cross_entropy(const TensorPtrT<T>& logits, const std::vector<i64>& labels,
                                    TapeT<T>* tape) {
  if (logits->shape.size() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be [batch, classes], got " +
                     shape_str(logits->shape));
  const i64 m = logits->shape[0], c = logits->shape[1];
  check_labels<T>(labels, m, c, "softmax_cross_entropy");
  if (m == 0) throw ValidationError("softmax_cross_entropy: empty batch");

  std::vector<T> probs(static_cast<std::size_t>(m * c));
  double total = 0.0;
  for (i64 i = 0; i < m; ++i) {
    const T* row = logits->data.data() + i * c;
    T mx = *std::max_element(row, row + c);
    double denom = 0.0;
    for (i64 j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    for (i64 j = 0; j < c; ++j)
      probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / denom);
    total += std::log(denom) - static_cast<double>(row[labels[i]] - mx);
  }
  auto out = scalar_tensor<T>(static_cast<T>(total / m), logits->requires_grad);
  check_finite(*out, "softmax_cross_entropy");

  if (tape && out->requires_grad) {
    tape->record("softmax_cross_entropy", {logits}, out, [=, p = std::move(probs)]() {
      logits->ensure_grad();
      const T go = out->grad[0];
      const T inv_m = T(1) / static_cast<T>(m);
      for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < c; ++j) {
          T y = labels[i] == j ? T(1) : T(0);
          logits->grad[i * c + j] += go * inv_m * (p[i * c + j] - y);
        }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> softmax_probs(const TensorPtrT<T>& logits) {
  if (logits->shape.size() != 2)
    throw ShapeError("softmax_probs: logits must be [batch, classes], got " +
                     shape_str(logits->shape));
  const i64 m = logits->shape[0], c = logits->shape[1];
  auto out = zeros<T>({m, c});
  for (i64 i = 0; i < m; ++i) {
    const T* row = logits->data.data() + i * c;
    T mx = *std::max_element(row, row + c);
    double denom = 0.0;
    for (i64 j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    for (i64 j = 0; j < c; ++j)
      out->data[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / denom);
  }
  return out;
}

template <typename T>
TensorPtrT<T> center_loss(const TensorPtrT<T>& features, const std::vector<i64>& labels,
                          const CenterBankT<T>& bank, const LossConfig& cfg, TapeT<T>* tape) {
  if (features->shape.size() != 2)
    throw ShapeError("center_loss: features must be [batch, dim], got " +
                     shape_str(features->shape));
  const i64 m = features->shape[0], d = features->shape[1];
  const i64 c = bank.centers->shape[0];
  if (bank.centers->shape[1] != d)
    throw ShapeError("center_loss: feature dim " + std::to_string(d) + " vs centers " +
                     shape_str(bank.centers->shape));
  check_labels<T>(labels, m, c, "center_loss");

  double total = 0.0;
  for (i64 i = 0; i < m; ++i) {
    const T* x = features->data.data() + i * d;
    const T* ctr = bank.centers->data.data() + labels[i] * d;
    for (i64 j = 0; j < d; ++j) {
      double diff = static_cast<double>(x[j]) - static_cast<double>(ctr[j]);
      total += diff * diff;
    }
  }
  total *= 0.5;
  if (cfg.center_mean && m > 0) total /= m;
  auto out = scalar_tensor<T>(static_cast<T>(total), features->requires_grad);
  check_finite(*out, "center_loss");

  if (tape && out->requires_grad) {
    auto centers = bank.centers;
    const T s = cfg.center_mean && m > 0 ? T(1) / static_cast<T>(m) : T(1);
    tape->record("center_loss", {features}, out, [=]() {
      features->ensure_grad();
      const T go = out->grad[0] * s;
      for (i64 i = 0; i < m; ++i) {
        const T* x = features->data.data() + i * d;
        const T* ctr = centers->data.data() + labels[i] * d;
        T* g = features->grad.data() + i * d;
        for (i64 j = 0; j < d; ++j) g[j] += go * (x[j] - ctr[j]);
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> joint_loss(const TensorPtrT<T>& ls, const TensorPtrT<T>& lc, const LossConfig& cfg,
                         TapeT<T>* tape) {
  if (!ls->is_scalar() || !lc->is_scalar())
    throw ShapeError("joint_loss: both terms must be scalars");
  if (cfg.lambda < 0) throw ValidationError("joint_loss: lambda must be non-negative");
  const T lambda = static_cast<T>(cfg.lambda);
  auto out =
      scalar_tensor<T>(ls->item() + lambda * lc->item(), ls->requires_grad || lc->requires_grad);
  check_finite(*out, "joint_loss");
  if (tape && out->requires_grad) {
    tape->record("joint_loss", {ls, lc}, out, [=]() {
      if (ls->requires_grad) {
        ls->ensure_grad();
        ls->grad[0] += out->grad[0];
      }
      // lambda == 0 leaves the center branch without any gradient, so its
      // rules never run and the step matches pure softmax training bit for
      // bit.
      if (lc->requires_grad && lambda != T(0)) {
        lc->ensure_grad();
        lc->grad[0] += lambda * out->grad[0];
      }
    });
  }
  return out;
}

template <typename T>
void center_update(CenterBankT<T>& bank, const TensorPtrT<T>& features,
                   const std::vector<i64>& labels) {
  if (features->shape.size() != 2)
    throw ShapeError("center_update: features must be [batch, dim], got " +
                     shape_str(features->shape));
  const i64 m = features->shape[0], d = features->shape[1];
  const i64 c = bank.centers->shape[0];
  if (bank.centers->shape[1] != d)
    throw ShapeError("center_update: feature dim " + std::to_string(d) + " vs centers " +
                     shape_str(bank.centers->shape));
  check_labels<T>(labels, m, c, "center_update");

  std::vector<i64> counts(static_cast<std::size_t>(c), 0);
  std::vector<double> delta(static_cast<std::size_t>(c * d), 0.0);
  for (i64 i = 0; i < m; ++i) {
    const i64 j = labels[i];
    ++counts[j];
    const T* x = features->data.data() + i * d;
    const T* ctr = bank.centers->data.data() + j * d;
    for (i64 q = 0; q < d; ++q)
      delta[j * d + q] += static_cast<double>(ctr[q]) - static_cast<double>(x[q]);
  }
  for (i64 j = 0; j < c; ++j) {
    if (counts[j] == 0) continue;
    const double scale = static_cast<double>(bank.alpha) / (1.0 + counts[j]);
    T* ctr = bank.centers->data.data() + j * d;
    for (i64 q = 0; q < d; ++q) ctr[q] -= static_cast<T>(scale * delta[j * d + q]);
  }
  check_finite(*bank.centers, "center_update");
}

#define DCNET_LOSSES_INSTANTIATE(T)                                                              \
  template CenterBankT<T> make_center_bank<T>(i64, i64, T);                                      \
  template TensorPtrT<T> softmax_cross_entropy<T>(const TensorPtrT<T>&, const std::vector<i64>&, \
                                                  TapeT<T>*);                                    \
  template TensorPtrT<T> softmax_probs<T>(const TensorPtrT<T>&);                                 \
  template TensorPtrT<T> center_loss<T>(const TensorPtrT<T>&, const std::vector<i64>&,           \
                                        const CenterBankT<T>&, const LossConfig&, TapeT<T>*);    \
  template TensorPtrT<T> joint_loss<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,               \
                                       const LossConfig&, TapeT<T>*);                            \
  template void center_update<T>(CenterBankT<T>&, const TensorPtrT<T>&, const std::vector<i64>&)

DCNET_LOSSES_INSTANTIATE(float);
DCNET_LOSSES_INSTANTIATE(double);

#undef DCNET_LOSSES_INSTANTIATE

}  // namespace dcnet
