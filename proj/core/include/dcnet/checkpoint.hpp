#pragma once

#include <string>
#include <utility>

#include "dcnet/tensor.hpp"

namespace dcnet {

// Everything a training run needs to resume bit-exactly: parameters, BN
// running stats, momentum buffers, class centers, plus bookkeeping tensors.
struct Checkpoint {
  std::uint64_t iteration = 0;
  std::uint64_t config_digest = 0;
  std::vector<std::pair<std::string, TensorPtr>> tensors;  // order preserved

  const TensorPtr* find(const std::string& name) const;
};

// Container: magic "DCKP", version u32, iteration u64, config digest u64,
// tensor count u64, then (name length u32, name bytes, tensor container)
// records, then a 64-bit FNV-1a checksum of all preceding bytes. All
// little-endian.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Checksum of a whole file, for comparing runs byte for byte.
std::uint64_t file_digest(const std::string& path);

}  // namespace dcnet
