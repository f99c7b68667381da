#include "dcnet/rng.hpp"

#include <cmath>
#include <numbers>

#include "dcnet/common.hpp"

namespace dcnet {

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view stream) const {
  std::uint64_t h = fnv1a64(stream.data(), stream.size());
  return Rng(state_ ^ h ^ 0x6a09e667f3bcc909ull);
}

}  // namespace dcnet
