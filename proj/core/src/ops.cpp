#include "dcnet/ops.hpp"

#include <algorithm>

#include "dcnet/detail/gemm.hpp"

namespace dcnet {

namespace {

// Row-major strides with 0 on broadcast (size-1) axes, left-padded to rank.
std::vector<std::int64_t> broadcast_strides(const std::vector<std::int64_t>& shape,
                                            const std::vector<std::int64_t>& out_shape) {
  const std::size_t rank = out_shape.size();
  const std::size_t pad = rank - shape.size();
  std::vector<std::int64_t> strides(rank, 0);
  std::int64_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[pad + i] = (shape[i] == 1) ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

}  // namespace

std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::int64_t> out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

template <typename T>
TensorPtrT<T> elementwise(EwOp op, const TensorPtrT<T>& a, const TensorPtrT<T>& b,
                          TapeT<T>* tape) {
  const auto out_shape = broadcast_shape(a->shape, b->shape);
  const std::int64_t n = shape_numel(out_shape);
  const std::size_t rank = out_shape.size();
  const auto sa = broadcast_strides(a->shape, out_shape);
  const auto sb = broadcast_strides(b->shape, out_shape);

  std::vector<T> out_data(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T va = a->data[static_cast<std::size_t>(ia)];
    const T vb = b->data[static_cast<std::size_t>(ib)];
    T v;
    switch (op) {
      case EwOp::Add: v = va + vb; break;
      case EwOp::Sub: v = va - vb; break;
      default: v = va * vb; break;
    }
    out_data[static_cast<std::size_t>(i)] = v;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      idx[d] = 0;
      ia -= sa[d] * (out_shape[d] - 1);
      ib -= sb[d] * (out_shape[d] - 1);
    }
  }

  const bool rg = a->requires_grad || b->requires_grad;
  auto out = make_tensor<T>(out_shape, std::move(out_data), rg);
  check_finite(*out, "elementwise");
  if (tape && rg) {
    const char* name = op == EwOp::Add ? "add" : (op == EwOp::Sub ? "subtract" : "multiply");
    tape->record(name, {a, b}, out, [op, a, b, out, out_shape, sa, sb, n, rank]() {
      std::vector<T> ga(a->requires_grad ? a->data.size() : 0, T(0));
      std::vector<T> gb(b->requires_grad ? b->data.size() : 0, T(0));
      std::vector<std::int64_t> idx(rank, 0);
      std::int64_t ia = 0, ib = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T go = out->grad[static_cast<std::size_t>(i)];
        if (a->requires_grad) {
          const T d = (op == EwOp::Mul) ? b->data[static_cast<std::size_t>(ib)] : T(1);
          ga[static_cast<std::size_t>(ia)] += d * go;
        }
        if (b->requires_grad) {
          T d;
          switch (op) {
            case EwOp::Add: d = T(1); break;
            case EwOp::Sub: d = T(-1); break;
            default: d = a->data[static_cast<std::size_t>(ia)]; break;
          }
          gb[static_cast<std::size_t>(ib)] += d * go;
        }
        for (std::size_t dd = rank; dd-- > 0;) {
          if (++idx[dd] < out_shape[dd]) {
            ia += sa[dd];
            ib += sb[dd];
            break;
          }
          idx[dd] = 0;
          ia -= sa[dd] * (out_shape[dd] - 1);
          ib -= sb[dd] * (out_shape[dd] - 1);
        }
      }
      if (a->requires_grad) a->accumulate_grad(ga.data(), a->numel());
      if (b->requires_grad) b->accumulate_grad(gb.data(), b->numel());
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b, TapeT<T>* tape) {
  if (a->shape.size() != 2 || b->shape.size() != 2) {
    throw ShapeError("matmul expects 2-d tensors, got " + shape_str(a->shape) + " and " +
                     shape_str(b->shape));
  }
  const std::int64_t m = a->shape[0], k = a->shape[1];
  const std::int64_t k2 = b->shape[0], n = b->shape[1];
  if (k != k2) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
  auto out = zeros<T>({m, n}, a->requires_grad || b->requires_grad);
  detail::gemm(false, false, m, n, k, T(1), a->data.data(), k, b->data.data(), n, T(0),
               out->data.data(), n);
  check_finite(*out, "matmul");
  if (tape && out->requires_grad) {
    tape->record("matmul", {a, b}, out, [a, b, out, m, n, k]() {
      if (a->requires_grad) {
        // dA = dC * B^T
        std::vector<T> ga(a->data.size(), T(0));
        detail::gemm(false, true, m, k, n, T(1), out->grad.data(), n, b->data.data(), n, T(0),
                     ga.data(), k);
        a->accumulate_grad(ga.data(), a->numel());
      }
      if (b->requires_grad) {
        // dB = A^T * dC
        std::vector<T> gb(b->data.size(), T(0));
        detail::gemm(true, false, k, n, m, T(1), a->data.data(), k, out->grad.data(), n, T(0),
                     gb.data(), n);
        b->accumulate_grad(gb.data(), b->numel());
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> sum_all(const TensorPtrT<T>& a, TapeT<T>* tape) {
  double acc = 0.0;
  for (T v : a->data) acc += static_cast<double>(v);
  auto out = scalar_tensor<T>(static_cast<T>(acc), a->requires_grad);
  check_finite(*out, "sum_all");
  if (tape && a->requires_grad) {
    tape->record("sum_all", {a}, out, [a, out]() {
      const T go = out->grad[0];
      std::vector<T> g(a->data.size(), go);
      a->accumulate_grad(g.data(), a->numel());
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> scale(const TensorPtrT<T>& a, T factor, TapeT<T>* tape) {
  std::vector<T> d(a->data.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a->data[i] * factor;
  auto out = make_tensor<T>(a->shape, std::move(d), a->requires_grad);
  check_finite(*out, "scale");
  if (tape && a->requires_grad) {
    tape->record("scale", {a}, out, [a, out, factor]() {
      std::vector<T> g(a->data.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = out->grad[i] * factor;
      a->accumulate_grad(g.data(), a->numel());
    });
  }
  return out;
}

template TensorPtrT<float> elementwise(EwOp, const TensorPtrT<float>&, const TensorPtrT<float>&,
                                       TapeT<float>*);
template TensorPtrT<double> elementwise(EwOp, const TensorPtrT<double>&, const TensorPtrT<double>&,
                                        TapeT<double>*);
template TensorPtrT<float> matmul(const TensorPtrT<float>&, const TensorPtrT<float>&,
                                  TapeT<float>*);
template TensorPtrT<double> matmul(const TensorPtrT<double>&, const TensorPtrT<double>&,
                                   TapeT<double>*);
template TensorPtrT<float> sum_all(const TensorPtrT<float>&, TapeT<float>*);
template TensorPtrT<double> sum_all(const TensorPtrT<double>&, TapeT<double>*);
template TensorPtrT<float> scale(const TensorPtrT<float>&, float, TapeT<float>*);
template TensorPtrT<double> scale(const TensorPtrT<double>&, double, TapeT<double>*);

}  // namespace dcnet
