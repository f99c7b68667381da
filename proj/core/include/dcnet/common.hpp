#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcnet {

// Error categories map onto CLI exit codes: ValidationError -> 2, the rest -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

std::string shape_str(const std::vector<std::int64_t>& shape);

// FNV-1a 64. Used for config digests and checkpoint checksums.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = kFnvOffset);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = kFnvOffset);

// Accelerated kernels (GEMM) may run multi-threaded; the default of 1 keeps
// results bit-deterministic for CI.
void set_compute_threads(int n);
int compute_threads();

}  // namespace dcnet
