#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "dcnet/common.hpp"

namespace dcnet {

// Dense row-major N-d array of reals. Activations follow the NCHW
// convention. Data is written once by its producing operation; grad is
// accumulated additively during backward and stays empty until a gradient
// actually reaches the tensor. Scalars are rank-0 (shape == {}).
template <typename T>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool is_scalar() const { return data.size() == 1; }

  T item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  void accumulate_grad(const T* g, std::int64_t n);
  void zero_grad() { grad.clear(); }
  bool all_finite() const;
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

template <typename T>
TensorPtrT<T> make_tensor(std::vector<std::int64_t> shape, std::vector<T> data,
                          bool requires_grad = false);

template <typename T>
TensorPtrT<T> zeros(std::vector<std::int64_t> shape, bool requires_grad = false);

template <typename T>
TensorPtrT<T> full(std::vector<std::int64_t> shape, T value, bool requires_grad = false);

template <typename T>
TensorPtrT<T> ones(std::vector<std::int64_t> shape, bool requires_grad = false) {
  return full<T>(std::move(shape), T(1), requires_grad);
}

template <typename T>
TensorPtrT<T> scalar_tensor(T value, bool requires_grad = false) {
  return make_tensor<T>({}, {value}, requires_grad);
}

// Debug invariant: when enabled, every operation checks its output for
// NaN/Inf and throws with the operation name.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <typename T>
void check_finite(const TensorT<T>& t, const char* op);

// On-disk tensor container, little-endian: magic "DCTN", version u32,
// rank u32, dims u64 each, then raw 32-bit reals.
void write_tensor(std::ostream& os, const Tensor& t);
TensorPtr read_tensor(std::istream& is);

}  // namespace dcnet
