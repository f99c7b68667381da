#include "dcnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace dcnet {

namespace {
bool g_finite_checks = false;

constexpr char kTensorMagic[4] = {'D', 'C', 'T', 'N'};
constexpr std::uint32_t kTensorVersion = 1;

template <typename U>
void write_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!is) throw IoError("truncated tensor container");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}
}  // namespace

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

template <typename T>
void TensorT<T>::accumulate_grad(const T* g, std::int64_t n) {
  if (n != numel()) {
    throw ShapeError("gradient length " + std::to_string(n) + " does not match tensor " +
                     shape_str(shape));
  }
  ensure_grad();
  for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
}

template <typename T>
bool TensorT<T>::all_finite() const {
  for (T v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
TensorPtrT<T> make_tensor(std::vector<std::int64_t> shape, std::vector<T> data,
                          bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto t = std::make_shared<TensorT<T>>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorPtrT<T> zeros(std::vector<std::int64_t> shape, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  return make_tensor<T>(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)),
                        requires_grad);
}

template <typename T>
TensorPtrT<T> full(std::vector<std::int64_t> shape, T value, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  return make_tensor<T>(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                        requires_grad);
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

template <typename T>
void check_finite(const TensorT<T>& t, const char* op) {
  if (!g_finite_checks) return;
  if (!t.all_finite()) {
    throw Error(std::string("non-finite value produced by ") + op + " with output shape " +
                shape_str(t.shape));
  }
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  write_le<std::uint32_t>(os, kTensorVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  for (float v : t.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le<std::uint32_t>(os, bits);
  }
  if (!os) throw IoError("tensor write failed");
}

TensorPtr read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw IoError("bad tensor magic (expected DCTN)");
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != kTensorVersion) {
    throw IoError("unsupported tensor container version " + std::to_string(version));
  }
  const auto rank = read_le<std::uint32_t>(is);
  if (rank > 8) throw IoError("implausible tensor rank " + std::to_string(rank));
  std::vector<std::int64_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
  const std::int64_t n = shape_numel(shape);
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& v : data) {
    const std::uint32_t bits = read_le<std::uint32_t>(is);
    std::memcpy(&v, &bits, 4);
  }
  return make_tensor<float>(std::move(shape), std::move(data));
}

template struct TensorT<float>;
template struct TensorT<double>;

template TensorPtrT<float> make_tensor<float>(std::vector<std::int64_t>, std::vector<float>, bool);
template TensorPtrT<double> make_tensor<double>(std::vector<std::int64_t>, std::vector<double>,
                                                bool);
template TensorPtrT<float> zeros<float>(std::vector<std::int64_t>, bool);
template TensorPtrT<double> zeros<double>(std::vector<std::int64_t>, bool);
template TensorPtrT<float> full<float>(std::vector<std::int64_t>, float, bool);
template TensorPtrT<double> full<double>(std::vector<std::int64_t>, double, bool);
template void check_finite<float>(const TensorT<float>&, const char*);
template void check_finite<double>(const TensorT<double>&, const char*);

}  // namespace dcnet
