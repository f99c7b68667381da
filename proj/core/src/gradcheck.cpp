#include "dcnet/gradcheck.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dcnet {

namespace {

template <typename T>
double eval_scalar(const TensorFn<T>& f, const std::vector<TensorPtrT<T>>& xs) {
  TapeT<T> tape;
  auto out = f(xs, tape);
  if (!out->is_scalar()) throw ShapeError("finite_diff_check: f must return a scalar");
  return static_cast<double>(out->item());
}

}  // namespace

template <typename T>
GradCheckReport finite_diff_check(const TensorFn<T>& f, const std::vector<TensorPtrT<T>>& xs,
                                  T step, double tol, double scale) {
  if (xs.empty()) throw ValidationError("finite_diff_check: no inputs");
  if (step <= T(0)) throw ValidationError("finite_diff_check: step must be positive");

  // Determinism probe: two evaluations at the same point must agree bitwise.
  {
    double a = eval_scalar(f, xs);
    double b = eval_scalar(f, xs);
    if (std::memcmp(&a, &b, sizeof(double)) != 0)
      throw Error("finite_diff_check: f is not deterministic");
  }

  // Analytic pass.
  for (auto& x : xs) {
    x->requires_grad = true;
    x->zero_grad();
  }
  TapeT<T> tape;
  auto out = f(xs, tape);
  if (!out->is_scalar()) throw ShapeError("finite_diff_check: f must return a scalar");
  tape.backward(out);

  GradCheckReport rep;
  rep.pass = true;
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto& x = xs[xi];
    std::vector<T> analytic(x->numel(), T(0));
    if (!x->grad.empty()) analytic = x->grad;
    for (std::int64_t i = 0; i < x->numel(); ++i) {
      T saved = x->data[i];
      x->data[i] = saved + step;
      double fp = eval_scalar(f, xs);
      x->data[i] = saved - step;
      double fm = eval_scalar(f, xs);
      x->data[i] = saved;

      double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
      double a = static_cast<double>(analytic[i]);
      double denom = std::max({std::fabs(a), std::fabs(numeric), scale});
      double rel = std::fabs(a - numeric) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        std::ostringstream os;
        os << "input " << xi << " entry " << i << ": analytic=" << a << " numeric=" << numeric;
        rep.worst = os.str();
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

template GradCheckReport finite_diff_check<float>(const TensorFn<float>&,
                                                  const std::vector<TensorPtrT<float>>&, float,
                                                  double, double);
template GradCheckReport finite_diff_check<double>(const TensorFn<double>&,
                                                   const std::vector<TensorPtrT<double>>&, double,
                                                   double, double);

}  // namespace dcnet
