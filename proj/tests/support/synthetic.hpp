#pragma once

#include <string>

#include "dcnet/datapipe.hpp"
#include "dcnet/gradcheck.hpp"
#include "dcnet/losses.hpp"
#include "dcnet/nn.hpp"
#include "dcnet/ops.hpp"

namespace dcnet::testsupport {

// Seven visually distinct shape/color classes on noisy dark backgrounds,
// written as raw images plus a ground-truth csv. Returns the csv path.
struct SyntheticSpec {
  ClassCounts counts{100, 105, 95, 90, 105, 100, 105};  // 0.8 split -> 560 train / 140 test
  std::int64_t side = 64;
  std::uint64_t seed = 99;
};
std::string make_synthetic_dataset(const std::string& dir, const SyntheticSpec& spec);

// Ground-truth csv with the given per-class counts and no image files
// behind it (enough for split/plan arithmetic).
void write_counts_manifest(const std::string& path, const ClassCounts& counts);

struct SweepResult {
  int cases = 0;
  double worst = 0.0;
  std::string worst_case;
  bool pass = true;
};

// Finite-difference sweep over every differentiable layer and both losses,
// `rounds` random shape draws per operator.
template <typename T>
SweepResult gradient_sweep(double tol, std::uint64_t seed, int rounds);

extern template SweepResult gradient_sweep<float>(double, std::uint64_t, int);
extern template SweepResult gradient_sweep<double>(double, std::uint64_t, int);

}  // namespace dcnet::testsupport
