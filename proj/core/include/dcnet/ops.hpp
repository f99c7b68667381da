#pragma once

#include "dcnet/tape.hpp"

namespace dcnet {

enum class EwOp { Add, Sub, Mul };

// Broadcast over size-1 axes, aligning shapes at the trailing dimension.
// Throws ShapeError naming both shapes when they are incompatible.
std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b);

template <typename T>
TensorPtrT<T> elementwise(EwOp op, const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                          TapeT<T>* tape = nullptr);

template <typename T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b, TapeT<T>* tape = nullptr) {
  return elementwise(EwOp::Add, a, b, tape);
}
template <typename T>
TensorPtrT<T> subtract(const TensorPtrT<T>& a, const TensorPtrT<T>& b, TapeT<T>* tape = nullptr) {
  return elementwise(EwOp::Sub, a, b, tape);
}
template <typename T>
TensorPtrT<T> multiply(const TensorPtrT<T>& a, const TensorPtrT<T>& b, TapeT<T>* tape = nullptr) {
  return elementwise(EwOp::Mul, a, b, tape);
}

// 2-d matrix product [m x k] * [k x n] -> [m x n].
template <typename T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b, TapeT<T>* tape = nullptr);

// Sum of all elements to a rank-0 scalar.
template <typename T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& a, TapeT<T>* tape = nullptr);

template <typename T>
TensorPtrT<T> scale(const TensorPtrT<T>& a, T factor, TapeT<T>* tape = nullptr);

}  // namespace dcnet
