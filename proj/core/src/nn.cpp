#include "dcnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dcnet/detail/gemm.hpp"

namespace dcnet {

namespace {

using i64 = std::int64_t;

template <typename T>
void expect_rank(const TensorPtrT<T>& t, std::size_t rank, const char* what) {
  if (t->shape.size() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t->shape));
}

// col layout: [C*kh*kw, Ho*Wo], row-major. Out-of-image taps read zero.
template <typename T>
void im2col(const T* x, i64 c_in, i64 h, i64 w, i64 k, i64 stride, i64 pad, i64 ho, i64 wo,
            T* col) {
  for (i64 c = 0; c < c_in; ++c) {
    for (i64 ki = 0; ki < k; ++ki) {
      for (i64 kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * (ho * wo);
        for (i64 oh = 0; oh < ho; ++oh, dst += wo) {
          i64 ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (c * h + ih) * w;
          for (i64 ow = 0; ow < wo; ++ow) {
            i64 iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, i64 c_in, i64 h, i64 w, i64 k, i64 stride, i64 pad, i64 ho, i64 wo,
                T* gx) {
  for (i64 c = 0; c < c_in; ++c) {
    for (i64 ki = 0; ki < k; ++ki) {
      for (i64 kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * (ho * wo);
        for (i64 oh = 0; oh < ho; ++oh, src += wo) {
          i64 ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = gx + (c * h + ih) * w;
          for (i64 ow = 0; ow < wo; ++ow) {
            i64 iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BatchNormT<T> make_batch_norm(i64 channels) {
  if (channels < 1) throw ValidationError("batch_norm: channels must be positive");
  BatchNormT<T> p;
  p.gamma = full<T>({channels}, T(1), true);
  p.beta = zeros<T>({channels}, true);
  p.running_mean = zeros<T>({channels});
  p.running_var = full<T>({channels}, T(1));
  return p;
}

template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& x, const TensorPtrT<T>& weight, i64 stride, i64 pad,
                     TapeT<T>* tape) {
  expect_rank(x, 4, "conv2d input");
  expect_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ValidationError("conv2d: stride must be positive");
  if (pad < 0) throw ValidationError("conv2d: padding must be non-negative");
  const i64 n = x->shape[0], c_in = x->shape[1], h = x->shape[2], w = x->shape[3];
  const i64 c_out = weight->shape[0], k = weight->shape[2];
  if (weight->shape[1] != c_in)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight->shape[1]) +
                     " input channels, input has " + std::to_string(c_in));
  if (weight->shape[2] != weight->shape[3]) throw ShapeError("conv2d: kernel must be square");
  if (h + 2 * pad < k || w + 2 * pad < k)
    throw ShapeError("conv2d: " + std::to_string(k) + "x" + std::to_string(k) +
                     " kernel exceeds padded input " + shape_str(x->shape));
  const i64 ho = (h + 2 * pad - k) / stride + 1;
  const i64 wo = (w + 2 * pad - k) / stride + 1;
  const i64 kk = c_in * k * k;   // GEMM inner dimension
  const i64 plane = ho * wo;

  auto out = zeros<T>({n, c_out, ho, wo}, x->requires_grad || weight->requires_grad);
  std::vector<T> col(static_cast<std::size_t>(kk * plane));
  for (i64 i = 0; i < n; ++i) {
    im2col(x->data.data() + i * c_in * h * w, c_in, h, w, k, stride, pad, ho, wo, col.data());
    detail::gemm(false, false, c_out, plane, kk, T(1), weight->data.data(), kk, col.data(), plane,
                 T(0), out->data.data() + i * c_out * plane, plane);
  }
  check_finite(*out, "conv2d");

  if (tape && out->requires_grad) {
    tape->record("conv2d", {x, weight}, out, [=]() {
      const auto& go = out->grad;
      std::vector<T> colb(static_cast<std::size_t>(kk * plane));
      std::vector<T> dcol(x->requires_grad ? static_cast<std::size_t>(kk * plane) : 0);
      if (weight->requires_grad) weight->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (i64 i = 0; i < n; ++i) {
        const T* go_i = go.data() + i * c_out * plane;
        if (weight->requires_grad) {
          im2col(x->data.data() + i * c_in * h * w, c_in, h, w, k, stride, pad, ho, wo,
                 colb.data());
          detail::gemm(false, true, c_out, kk, plane, T(1), go_i, plane, colb.data(), plane, T(1),
                       weight->grad.data(), kk);
        }
        if (x->requires_grad) {
          detail::gemm(true, false, kk, plane, c_out, T(1), weight->data.data(), kk, go_i, plane,
                       T(0), dcol.data(), plane);
          col2im_add(dcol.data(), c_in, h, w, k, stride, pad, ho, wo,
                     x->grad.data() + i * c_in * h * w);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> batch_norm(const TensorPtrT<T>& x, BatchNormT<T>& p, Mode mode, TapeT<T>* tape) {
  expect_rank(x, 4, "batch_norm input");
  const i64 n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (p.gamma->numel() != c)
    throw ShapeError("batch_norm: " + std::to_string(p.gamma->numel()) + "-channel params, " +
                     std::to_string(c) + "-channel input");
  const i64 m = n * h * w;  // samples per channel
  if (mode == Mode::kTrain && m < 2)
    throw ValidationError("batch_norm: training mode needs at least 2 values per channel");
  const i64 plane = h * w;
  const i64 sample = c * plane;

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    for (i64 j = 0; j < c; ++j) {
      double s = 0.0;
      for (i64 i = 0; i < n; ++i) {
        const T* px = x->data.data() + i * sample + j * plane;
        for (i64 q = 0; q < plane; ++q) s += px[q];
      }
      double mu = s / m;
      double v = 0.0;
      for (i64 i = 0; i < n; ++i) {
        const T* px = x->data.data() + i * sample + j * plane;
        for (i64 q = 0; q < plane; ++q) {
          double d = px[q] - mu;
          v += d * d;
        }
      }
      v /= m;
      mean[j] = static_cast<T>(mu);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(v + p.epsilon));
      p.running_mean->data[j] =
          p.momentum * p.running_mean->data[j] + (T(1) - p.momentum) * static_cast<T>(mu);
      p.running_var->data[j] =
          p.momentum * p.running_var->data[j] + (T(1) - p.momentum) * static_cast<T>(v);
    }
  } else {
    for (i64 j = 0; j < c; ++j) {
      mean[j] = p.running_mean->data[j];
      inv_std[j] = T(1) / std::sqrt(p.running_var->data[j] + p.epsilon);
    }
  }

  auto out = zeros<T>({n, c, h, w},
                      x->requires_grad || p.gamma->requires_grad || p.beta->requires_grad);
  for (i64 i = 0; i < n; ++i) {
    for (i64 j = 0; j < c; ++j) {
      const T* px = x->data.data() + i * sample + j * plane;
      T* py = out->data.data() + i * sample + j * plane;
      const T g = p.gamma->data[j], b = p.beta->data[j], mu = mean[j], is = inv_std[j];
      for (i64 q = 0; q < plane; ++q) py[q] = g * (px[q] - mu) * is + b;
    }
  }
  check_finite(*out, "batch_norm");

  if (tape && out->requires_grad) {
    auto gamma = p.gamma;
    auto beta = p.beta;
    const bool train = mode == Mode::kTrain;
    tape->record("batch_norm", {x, gamma, beta}, out, [=]() {
      const auto& go = out->grad;
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (i64 j = 0; j < c; ++j) {
        const T mu = mean[j], is = inv_std[j], g = gamma->data[j];
        double sum_go = 0.0, sum_go_xh = 0.0;
        for (i64 i = 0; i < n; ++i) {
          const T* px = x->data.data() + i * sample + j * plane;
          const T* pg = go.data() + i * sample + j * plane;
          for (i64 q = 0; q < plane; ++q) {
            sum_go += pg[q];
            sum_go_xh += pg[q] * static_cast<double>((px[q] - mu) * is);
          }
        }
        if (gamma->requires_grad) gamma->grad[j] += static_cast<T>(sum_go_xh);
        if (beta->requires_grad) beta->grad[j] += static_cast<T>(sum_go);
        if (!x->requires_grad) continue;
        if (train) {
          // dx = g*is/m * (m*go - sum(go) - xhat*sum(go*xhat))
          const double k1 = static_cast<double>(g) * is / m;
          for (i64 i = 0; i < n; ++i) {
            const T* px = x->data.data() + i * sample + j * plane;
            const T* pg = go.data() + i * sample + j * plane;
            T* gx = x->grad.data() + i * sample + j * plane;
            for (i64 q = 0; q < plane; ++q) {
              double xh = (px[q] - mu) * is;
              gx[q] += static_cast<T>(k1 * (m * pg[q] - sum_go - xh * sum_go_xh));
            }
          }
        } else {
          const T k1 = g * is;
          for (i64 i = 0; i < n; ++i) {
            const T* pg = go.data() + i * sample + j * plane;
            T* gx = x->grad.data() + i * sample + j * plane;
            for (i64 q = 0; q < plane; ++q) gx[q] += k1 * pg[q];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& x, TapeT<T>* tape) {
  std::vector<T> d(x->data.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x->data[i] > T(0) ? x->data[i] : T(0);
  auto out = make_tensor<T>(x->shape, std::move(d), x->requires_grad);
  if (tape && out->requires_grad) {
    tape->record("relu", {x}, out, [=]() {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->data.size(); ++i)
        if (x->data[i] > T(0)) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> max_pool2d(const TensorPtrT<T>& x, i64 kernel, i64 stride, i64 pad, TapeT<T>* tape) {
  expect_rank(x, 4, "max_pool2d input");
  if (kernel < 1 || stride < 1 || pad < 0 || pad >= kernel)
    throw ValidationError("max_pool2d: invalid kernel/stride/pad");
  const i64 n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (h + 2 * pad < kernel || w + 2 * pad < kernel)
    throw ShapeError("max_pool2d: window exceeds padded input " + shape_str(x->shape));
  const i64 ho = (h + 2 * pad - kernel) / stride + 1;
  const i64 wo = (w + 2 * pad - kernel) / stride + 1;

  auto out = zeros<T>({n, c, ho, wo}, x->requires_grad);
  std::vector<i64> argmax(static_cast<std::size_t>(n * c * ho * wo));
  i64 o = 0;
  for (i64 i = 0; i < n; ++i) {
    for (i64 j = 0; j < c; ++j) {
      const T* px = x->data.data() + (i * c + j) * h * w;
      for (i64 oh = 0; oh < ho; ++oh) {
        for (i64 ow = 0; ow < wo; ++ow, ++o) {
          i64 best = -1;
          T bv = T(0);
          for (i64 ki = 0; ki < kernel; ++ki) {
            i64 ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            for (i64 kj = 0; kj < kernel; ++kj) {
              i64 iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= w) continue;
              T v = px[ih * w + iw];
              if (best < 0 || v > bv) {
                best = ih * w + iw;
                bv = v;
              }
            }
          }
          out->data[o] = bv;
          argmax[o] = (i * c + j) * h * w + best;
        }
      }
    }
  }

  if (tape && out->requires_grad) {
    tape->record("max_pool2d", {x}, out, [=, am = std::move(argmax)]() {
      x->ensure_grad();
      for (std::size_t q = 0; q < am.size(); ++q) x->grad[am[q]] += out->grad[q];
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> avg_pool2x2(const TensorPtrT<T>& x, TapeT<T>* tape) {
  expect_rank(x, 4, "avg_pool2x2 input");
  const i64 n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg_pool2x2: spatial dims must be even, got " + shape_str(x->shape));
  const i64 ho = h / 2, wo = w / 2;
  auto out = zeros<T>({n, c, ho, wo}, x->requires_grad);
  for (i64 p = 0; p < n * c; ++p) {
    const T* px = x->data.data() + p * h * w;
    T* py = out->data.data() + p * ho * wo;
    for (i64 oh = 0; oh < ho; ++oh)
      for (i64 ow = 0; ow < wo; ++ow) {
        const T* q = px + 2 * oh * w + 2 * ow;
        py[oh * wo + ow] = (q[0] + q[1] + q[w] + q[w + 1]) * T(0.25);
      }
  }
  if (tape && out->requires_grad) {
    tape->record("avg_pool2x2", {x}, out, [=]() {
      x->ensure_grad();
      for (i64 p = 0; p < n * c; ++p) {
        T* gx = x->grad.data() + p * h * w;
        const T* pg = out->grad.data() + p * ho * wo;
        for (i64 oh = 0; oh < ho; ++oh)
          for (i64 ow = 0; ow < wo; ++ow) {
            T g = pg[oh * wo + ow] * T(0.25);
            T* q = gx + 2 * oh * w + 2 * ow;
            q[0] += g;
            q[1] += g;
            q[w] += g;
            q[w + 1] += g;
          }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> global_avg_pool(const TensorPtrT<T>& x, TapeT<T>* tape) {
  expect_rank(x, 4, "global_avg_pool input");
  const i64 n = x->shape[0], c = x->shape[1], plane = x->shape[2] * x->shape[3];
  auto out = zeros<T>({n, c}, x->requires_grad);
  for (i64 p = 0; p < n * c; ++p) {
    const T* px = x->data.data() + p * plane;
    double s = 0.0;
    for (i64 q = 0; q < plane; ++q) s += px[q];
    out->data[p] = static_cast<T>(s / plane);
  }
  if (tape && out->requires_grad) {
    tape->record("global_avg_pool", {x}, out, [=]() {
      x->ensure_grad();
      for (i64 p = 0; p < n * c; ++p) {
        T g = out->grad[p] / static_cast<T>(plane);
        T* gx = x->grad.data() + p * plane;
        for (i64 q = 0; q < plane; ++q) gx[q] += g;
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> concat_channels(const std::vector<TensorPtrT<T>>& xs, TapeT<T>* tape) {
  if (xs.empty()) throw ValidationError("concat_channels: empty input list");
  expect_rank(xs[0], 4, "concat_channels input");
  const i64 n = xs[0]->shape[0], h = xs[0]->shape[2], w = xs[0]->shape[3];
  i64 c_total = 0;
  bool rg = false;
  for (const auto& t : xs) {
    expect_rank(t, 4, "concat_channels input");
    if (t->shape[0] != n || t->shape[2] != h || t->shape[3] != w)
      throw ShapeError("concat_channels: mismatched " + shape_str(t->shape) + " vs " +
                       shape_str(xs[0]->shape));
    c_total += t->shape[1];
    rg = rg || t->requires_grad;
  }
  const i64 plane = h * w;
  auto out = zeros<T>({n, c_total, h, w}, rg);
  for (i64 i = 0; i < n; ++i) {
    T* dst = out->data.data() + i * c_total * plane;
    for (const auto& t : xs) {
      const i64 sz = t->shape[1] * plane;
      std::memcpy(dst, t->data.data() + i * sz, sizeof(T) * sz);
      dst += sz;
    }
  }
  if (tape && rg) {
    std::vector<TensorPtrT<T>> inputs = xs;
    tape->record("concat_channels", inputs, out, [=]() {
      for (i64 i = 0; i < n; ++i) {
        const T* src = out->grad.data() + i * c_total * plane;
        for (const auto& t : inputs) {
          const i64 sz = t->shape[1] * plane;
          if (t->requires_grad) {
            t->ensure_grad();
            T* gx = t->grad.data() + i * sz;
            for (i64 q = 0; q < sz; ++q) gx[q] += src[q];
          }
          src += sz;
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> slice_channels(const TensorPtrT<T>& x, i64 begin, i64 end, TapeT<T>* tape) {
  expect_rank(x, 4, "slice_channels input");
  const i64 n = x->shape[0], c = x->shape[1], plane = x->shape[2] * x->shape[3];
  if (begin < 0 || end <= begin || end > c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of " + std::to_string(c) + " channels");
  const i64 cs = end - begin;
  auto out = zeros<T>({n, cs, x->shape[2], x->shape[3]}, x->requires_grad);
  for (i64 i = 0; i < n; ++i)
    std::memcpy(out->data.data() + i * cs * plane, x->data.data() + (i * c + begin) * plane,
                sizeof(T) * cs * plane);
  if (tape && out->requires_grad) {
    tape->record("slice_channels", {x}, out, [=]() {
      x->ensure_grad();
      for (i64 i = 0; i < n; ++i) {
        T* gx = x->grad.data() + (i * c + begin) * plane;
        const T* src = out->grad.data() + i * cs * plane;
        for (i64 q = 0; q < cs * plane; ++q) gx[q] += src[q];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtrT<T> linear(const TensorPtrT<T>& x, const TensorPtrT<T>& weight,
                     const TensorPtrT<T>& bias, TapeT<T>* tape) {
  expect_rank(x, 2, "linear input");
  expect_rank(weight, 2, "linear weight");
  expect_rank(bias, 1, "linear bias");
  const i64 n = x->shape[0], d = x->shape[1], c = weight->shape[0];
  if (weight->shape[1] != d)
    throw ShapeError("linear: input dim " + std::to_string(d) + " vs weight " +
                     shape_str(weight->shape));
  if (bias->shape[0] != c)
    throw ShapeError("linear: bias dim " + std::to_string(bias->shape[0]) + " vs " +
                     std::to_string(c) + " outputs");
  auto out =
      zeros<T>({n, c}, x->requires_grad || weight->requires_grad || bias->requires_grad);
  detail::gemm(false, true, n, c, d, T(1), x->data.data(), d, weight->data.data(), d, T(0),
               out->data.data(), c);
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < c; ++j) out->data[i * c + j] += bias->data[j];
  check_finite(*out, "linear");

  if (tape && out->requires_grad) {
    tape->record("linear", {x, weight, bias}, out, [=]() {
      const auto& go = out->grad;
      if (x->requires_grad) {
        x->ensure_grad();
        detail::gemm(false, false, n, d, c, T(1), go.data(), c, weight->data.data(), d, T(1),
                     x->grad.data(), d);
      }
      if (weight->requires_grad) {
        weight->ensure_grad();
        detail::gemm(true, false, c, d, n, T(1), go.data(), c, x->data.data(), d, T(1),
                     weight->grad.data(), d);
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (i64 i = 0; i < n; ++i)
          for (i64 j = 0; j < c; ++j) bias->grad[j] += go[i * c + j];
      }
    });
  }
  return out;
}

template <typename T>
void he_init_into(TensorT<T>& t, i64 fan_in, Rng& rng) {
  if (fan_in < 1) throw ValidationError("he_init: fan_in must be at least 1");
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
}

template <typename T>
TensorPtrT<T> he_init(const std::vector<i64>& shape, i64 fan_in, std::uint64_t seed) {
  auto t = zeros<T>(shape);
  Rng rng(seed);
  he_init_into(*t, fan_in, rng);
  return t;
}

#define DCNET_NN_INSTANTIATE(T)                                                                  \
  template BatchNormT<T> make_batch_norm<T>(i64);                                               \
  template TensorPtrT<T> conv2d<T>(const TensorPtrT<T>&, const TensorPtrT<T>&, i64, i64,        \
                                   TapeT<T>*);                                                  \
  template TensorPtrT<T> batch_norm<T>(const TensorPtrT<T>&, BatchNormT<T>&, Mode, TapeT<T>*);  \
  template TensorPtrT<T> relu<T>(const TensorPtrT<T>&, TapeT<T>*);                              \
  template TensorPtrT<T> max_pool2d<T>(const TensorPtrT<T>&, i64, i64, i64, TapeT<T>*);         \
  template TensorPtrT<T> avg_pool2x2<T>(const TensorPtrT<T>&, TapeT<T>*);                       \
  template TensorPtrT<T> global_avg_pool<T>(const TensorPtrT<T>&, TapeT<T>*);                   \
  template TensorPtrT<T> concat_channels<T>(const std::vector<TensorPtrT<T>>&, TapeT<T>*);      \
  template TensorPtrT<T> slice_channels<T>(const TensorPtrT<T>&, i64, i64, TapeT<T>*);          \
  template TensorPtrT<T> linear<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,                  \
                                   const TensorPtrT<T>&, TapeT<T>*);                            \
  template void he_init_into<T>(TensorT<T>&, i64, Rng&);                                        \
  template TensorPtrT<T> he_init<T>(const std::vector<i64>&, i64, std::uint64_t)

DCNET_NN_INSTANTIATE(float);
DCNET_NN_INSTANTIATE(double);

#undef DCNET_NN_INSTANTIATE

}  // namespace dcnet
