#pragma once

#include <functional>
#include <string>

#include "dcnet/tape.hpp"

namespace dcnet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::int64_t checked = 0;  // number of scalar entries compared
  std::string worst;         // where the worst error occurred
};

// Scalar-valued function of several tensors, evaluated through a tape so the
// analytic gradient can be replayed.
template <typename T>
using TensorFn = std::function<TensorPtrT<T>(const std::vector<TensorPtrT<T>>&, TapeT<T>&)>;

// Compares the tape gradient of f at xs against central finite differences
// with the given step. The relative error of each entry is
// |analytic - numeric| / max(|analytic|, |numeric|, scale). f must be
// deterministic; a bitwise mismatch between two evaluations at the same
// point is reported as an error.
template <typename T>
GradCheckReport finite_diff_check(const TensorFn<T>& f, const std::vector<TensorPtrT<T>>& xs,
                                  T step, double tol, double scale = 1.0);

template <typename T>
GradCheckReport finite_diff_check(const TensorFn<T>& f, const TensorPtrT<T>& x, T step, double tol,
                                  double scale = 1.0) {
  return finite_diff_check<T>(f, std::vector<TensorPtrT<T>>{x}, step, tol, scale);
}

}  // namespace dcnet
